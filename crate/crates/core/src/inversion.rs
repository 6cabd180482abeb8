//! Linearized Tikhonov inversion with a first-order gradient regularizer,
//! LSQR, the low-pass post-filter and L-curve parameter selection.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionProtocol, DataVector, SensorType};
use crate::domain::SimulationOptions;
use crate::error::{Error, Result};
use crate::grid::{Grid, MediumMap};
use crate::jacobian::{linearize, JacobianMatrix, Reuse};

/// A real linear map given by its action and the action of its transpose.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseMatrix { rows: n, cols: n, data }
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(r) {
                *o += a * yi;
            }
        }
        out
    }
}

/// Forward differences scaled by `1/dx`, `1/dy` (mm^-1), with zero rows on
/// the last column (x) or last row (y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOperators {
    pub grid: Grid,
}

pub fn gradient_ops(grid: &Grid) -> GradientOperators {
    GradientOperators { grid: *grid }
}

impl GradientOperators {
    pub fn dx(&self, h: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ly {
            for i in 0..g.lx.saturating_sub(1) {
                let k = g.index(i, j);
                out[k] = (h[k + 1] - h[k]) / g.dx;
            }
        }
        out
    }

    pub fn dy(&self, h: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ly.saturating_sub(1) {
            for i in 0..g.lx {
                let k = g.index(i, j);
                out[k] = (h[k + g.lx] - h[k]) / g.dy;
            }
        }
        out
    }

    pub fn dx_transpose(&self, s: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ly {
            for i in 0..g.lx.saturating_sub(1) {
                let k = g.index(i, j);
                out[k + 1] += s[k] / g.dx;
                out[k] -= s[k] / g.dx;
            }
        }
        out
    }

    pub fn dy_transpose(&self, s: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ly.saturating_sub(1) {
            for i in 0..g.lx {
                let k = g.index(i, j);
                out[k + g.lx] += s[k] / g.dy;
                out[k] -= s[k] / g.dy;
            }
        }
        out
    }

    /// `||[Dx; Dy] h||`.
    pub fn seminorm(&self, h: &[f64]) -> f64 {
        let a: f64 = self.dx(h).iter().map(|v| v * v).sum();
        let b: f64 = self.dy(h).iter().map(|v| v * v).sum();
        (a + b).sqrt()
    }

    /// `||Dx||_F^2 + ||Dy||_F^2`.
    pub fn frobenius_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let nx = (g.lx.saturating_sub(1) * g.ly) as f64;
        let ny = (g.lx * g.ly.saturating_sub(1)) as f64;
        2.0 * (nx / (g.dx * g.dx) + ny / (g.dy * g.dy))
    }

    /// Sparse entries of `Dx` (`axis = 0`) or `Dy` (`axis = 1`).
    pub fn triplets(&self, axis: usize) -> Vec<(usize, usize, f64)> {
        let g = &self.grid;
        let mut t = Vec::new();
        for j in 0..g.ly {
            for i in 0..g.lx {
                let k = g.index(i, j);
                match axis {
                    0 if i + 1 < g.lx => {
                        t.push((k, k, -1.0 / g.dx));
                        t.push((k, k + 1, 1.0 / g.dx));
                    }
                    1 if j + 1 < g.ly => {
                        t.push((k, k, -1.0 / g.dy));
                        t.push((k, k + g.lx, 1.0 / g.dy));
                    }
                    _ => {}
                }
            }
        }
        t
    }
}

/// `A = [J; sqrt(eta) Dx; sqrt(eta) Dy]`, `b = [g - y(tau0); 0; 0]`, solved
/// over the reals with complex data rows split into real and imaginary parts.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub jacobian: Arc<JacobianMatrix>,
    pub grad: GradientOperators,
    pub eta: f64,
    /// Real-split right-hand side.
    pub b: Vec<f64>,
}

pub fn build_augmented(j: Arc<JacobianMatrix>, residual: &DataVector, eta: f64) -> Result<AugmentedSystem> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be non-negative, got {eta}")));
    }
    if residual.len() != j.rows() || residual.layout != *j.layout() {
        return Err(Error::invalid(format!(
            "residual has {} entries but the Jacobian has {} rows in a different layout",
            residual.len(),
            j.rows()
        )));
    }
    if residual.sensor_type != j.sensor_type() {
        return Err(Error::invalid("residual and Jacobian come from different sensor types"));
    }
    let grad = gradient_ops(j.grid());
    let mut b = split(&residual.values, j.sensor_type());
    b.resize(b.len() + 2 * j.cols(), 0.0);
    Ok(AugmentedSystem { jacobian: j, grad, eta, b })
}

fn split(v: &[Complex64], t: SensorType) -> Vec<f64> {
    match t {
        SensorType::Ps => v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect(),
        SensorType::Pi => v.iter().map(|z| z.re).collect(),
    }
}

fn unsplit(r: &[f64], n: usize, t: SensorType) -> Vec<Complex64> {
    match t {
        SensorType::Ps => (0..n).map(|i| Complex64::new(r[i], r[n + i])).collect(),
        SensorType::Pi => r[..n].iter().map(|x| Complex64::new(*x, 0.0)).collect(),
    }
}

impl AugmentedSystem {
    /// Rows in the real-split data block.
    pub fn data_rows(&self) -> usize {
        match self.jacobian.sensor_type() {
            SensorType::Ps => 2 * self.jacobian.rows(),
            SensorType::Pi => self.jacobian.rows(),
        }
    }

    /// Rows of the complex system: data rows plus two regularizer blocks.
    pub fn complex_rows(&self) -> usize {
        self.jacobian.rows() + 2 * self.jacobian.cols()
    }

    /// `||J h - r||`.
    pub fn data_residual(&self, h: &[f64]) -> f64 {
        let y = split(&self.jacobian.apply(h), self.jacobian.sensor_type());
        y.iter().zip(&self.b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// `||A h - b||`.
    pub fn residual(&self, h: &[f64]) -> f64 {
        let y = self.apply(h);
        y.iter().zip(&self.b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

impl LinearOperator for AugmentedSystem {
    fn nrows(&self) -> usize {
        self.data_rows() + 2 * self.jacobian.cols()
    }

    fn ncols(&self) -> usize {
        self.jacobian.cols()
    }

    fn apply(&self, h: &[f64]) -> Vec<f64> {
        let mut out = split(&self.jacobian.apply(h), self.jacobian.sensor_type());
        let s = self.eta.sqrt();
        out.extend(self.grad.dx(h).into_iter().map(|v| s * v));
        out.extend(self.grad.dy(h).into_iter().map(|v| s * v));
        out
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let nd = self.data_rows();
        let n = self.jacobian.cols();
        let r = unsplit(&y[..nd], self.jacobian.rows(), self.jacobian.sensor_type());
        let mut out = self.jacobian.apply_adjoint(&r);
        if self.eta > 0.0 {
            let s = self.eta.sqrt();
            let a = self.grad.dx_transpose(&y[nd..nd + n]);
            let b = self.grad.dy_transpose(&y[nd + n..nd + 2 * n]);
            for ((o, a), b) in out.iter_mut().zip(a).zip(b) {
                *o += s * (a + b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqrSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LsqrSettings {
    fn default() -> Self {
        LsqrSettings { tol: 1e-8, max_iter: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqrOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||A x - b||` estimate at exit.
    pub residual_norm: f64,
    /// `||A^T (A x - b)||` estimate at exit.
    pub normal_residual_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Paige-Saunders LSQR for `min ||A x - b||` from `x = 0`. Stops when
/// `||r|| <= tol (||b|| + ||A|| ||x||)` or `||A^T r|| <= tol ||A|| ||r||`.
pub fn lsqr<A: LinearOperator + ?Sized>(a: &A, b: &[f64], settings: LsqrSettings) -> Result<LsqrOutcome> {
    if !(settings.tol > 0.0) {
        return Err(Error::invalid(format!("LSQR tolerance must be positive, got {}", settings.tol)));
    }
    if b.len() != a.nrows() {
        return Err(Error::invalid(format!("right-hand side has {} entries, operator has {} rows", b.len(), a.nrows())));
    }
    let n = a.ncols();
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let mut beta = norm(&u);
    let bnorm = beta;
    if beta == 0.0 {
        return Ok(LsqrOutcome { x, iterations: 0, converged: true, residual_norm: 0.0, normal_residual_norm: 0.0 });
    }
    u.iter_mut().for_each(|v| *v /= beta);
    let mut v = a.apply_transpose(&u);
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        return Ok(LsqrOutcome { x, iterations: 0, converged: true, residual_norm: bnorm, normal_residual_norm: 0.0 });
    }
    v.iter_mut().for_each(|e| *e /= alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0f64;
    let mut xnorm;
    let mut rnorm = beta;
    let mut arnorm = alpha * beta;
    let tol = settings.tol;

    for it in 1..=settings.max_iter {
        let av = a.apply(&v);
        for (ui, avi) in u.iter_mut().zip(&av) {
            *ui = avi - alpha * *ui;
        }
        beta = norm(&u);
        if beta > 0.0 {
            u.iter_mut().for_each(|e| *e /= beta);
        }
        anorm_sq += alpha * alpha + beta * beta;
        let atu = a.apply_transpose(&u);
        for (vi, ai) in v.iter_mut().zip(&atu) {
            *vi = ai - beta * *vi;
        }
        alpha = norm(&v);
        if alpha > 0.0 {
            v.iter_mut().for_each(|e| *e /= alpha);
        }

        let rho = (rhobar * rhobar + beta * beta).sqrt();
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += t1 * *wi;
            *wi = vi + t2 * *wi;
        }

        rnorm = phibar;
        arnorm = phibar * alpha * c.abs();
        xnorm = norm(&x);
        let anorm = anorm_sq.sqrt();
        let test1 = rnorm <= tol * (bnorm + anorm * xnorm);
        let test2 = arnorm <= tol * anorm * rnorm;
        if test1 || test2 || rnorm == 0.0 {
            return Ok(LsqrOutcome { x, iterations: it, converged: true, residual_norm: rnorm, normal_residual_norm: arnorm });
        }
    }
    log::warn!("LSQR stopped at max_iter={} with residual {rnorm:.3e}", settings.max_iter);
    Ok(LsqrOutcome {
        x,
        iterations: settings.max_iter,
        converged: false,
        residual_norm: rnorm,
        normal_residual_norm: arnorm,
    })
}

/// Unfiltered solution of one augmented system.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub grid: Grid,
    /// Recovered `tau - tau0` after the low-pass filter.
    pub h_hat: Vec<f64>,
    /// The LSQR iterate before filtering.
    pub h_raw: Vec<f64>,
    pub eta: f64,
    /// mm^-1; `None` when unfiltered.
    pub cutoff: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||A h - b||` of the raw iterate.
    pub residual_norm: f64,
    /// `||J h - r||` of the raw iterate.
    pub data_residual_norm: f64,
    /// `||[Dx; Dy] h||` of the raw iterate.
    pub seminorm: f64,
}

pub fn lsqr_solve(system: &AugmentedSystem, settings: LsqrSettings) -> Result<Reconstruction> {
    let out = lsqr(system, &system.b, settings)?;
    let h = out.x;
    Ok(Reconstruction {
        grid: *system.jacobian.grid(),
        residual_norm: system.residual(&h),
        data_residual_norm: system.data_residual(&h),
        seminorm: system.grad.seminorm(&h),
        h_hat: h.clone(),
        h_raw: h,
        eta: system.eta,
        cutoff: None,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Ideal circular low-pass in the 2-D spatial-frequency domain.
pub fn lowpass_filter(h: &[f64], cutoff: f64, grid: &Grid) -> Result<Vec<f64>> {
    if !(cutoff > 0.0) {
        return Err(Error::invalid(format!("cutoff must be positive, got {cutoff}")));
    }
    if h.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    let (lx, ly) = (grid.lx, grid.ly);
    let mut planner = FftPlanner::<f64>::new();
    let fx = planner.plan_fft_forward(lx);
    let fy = planner.plan_fft_forward(ly);
    let ix = planner.plan_fft_inverse(lx);
    let iy = planner.plan_fft_inverse(ly);
    let mut data: Vec<Complex64> = h.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2(&mut data, lx, ly, &*fx, &*fy);
    let freq = |m: usize, n: usize, d: f64| {
        let s = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
        s / (n as f64 * d)
    };
    for j in 0..ly {
        let ky = freq(j, ly, grid.dy);
        for i in 0..lx {
            let kx = freq(i, lx, grid.dx);
            if (kx * kx + ky * ky).sqrt() > cutoff {
                data[j * lx + i] = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2(&mut data, lx, ly, &*ix, &*iy);
    let scale = 1.0 / (lx * ly) as f64;
    Ok(data.iter().map(|v| v.re * scale).collect())
}

fn fft2(data: &mut [Complex64], lx: usize, ly: usize, fx: &dyn rustfft::Fft<f64>, fy: &dyn rustfft::Fft<f64>) {
    for row in data.chunks_exact_mut(lx) {
        fx.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ly];
    for i in 0..lx {
        for j in 0..ly {
            col[j] = data[j * lx + i];
        }
        fy.process(&mut col);
        for j in 0..ly {
            data[j * lx + i] = col[j];
        }
    }
}

/// `||J||_F^2 / (2 ||[Dx; Dy]||_F^2)`, the order of magnitude at which the
/// two terms of the objective balance.
pub fn eta_anchor(j: &JacobianMatrix) -> f64 {
    j.frobenius_norm_sq() / (2.0 * gradient_ops(j.grid()).frobenius_norm_sq())
}

/// `count` logarithmically spaced values over `decades` centred on `center`.
pub fn eta_grid(center: f64, decades: f64, count: usize) -> Vec<f64> {
    let lo = center.log10() - decades / 2.0;
    (0..count)
        .map(|i| 10f64.powf(lo + decades * i as f64 / (count.max(2) - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LCurvePoint {
    pub eta: f64,
    /// `||J h - r||`.
    pub residual_norm: f64,
    pub seminorm: f64,
    /// `||A h - b||` including the regularizer rows.
    pub augmented_residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCurve {
    pub eta_star: f64,
    pub points: Vec<LCurvePoint>,
    pub curvature: Vec<f64>,
}

impl LCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eta,residual_norm,seminorm\n");
        for p in &self.points {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.eta, p.residual_norm, p.seminorm));
        }
        s
    }
}

/// Signed Menger curvature of the polyline `(x, y)` at each interior point;
/// endpoints get `-inf`. Positive values bend like the corner of an L.
pub fn discrete_curvature(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![f64::NEG_INFINITY; n];
    for i in 1..n.saturating_sub(1) {
        let (ax, ay) = (x[i - 1], y[i - 1]);
        let (bx, by) = (x[i], y[i]);
        let (cx, cy) = (x[i + 1], y[i + 1]);
        let cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx);
        let d = ((bx - ax).hypot(by - ay)) * ((cx - bx).hypot(cy - by)) * ((cx - ax).hypot(cy - ay));
        k[i] = if d > 0.0 { 2.0 * cross / d } else { 0.0 };
    }
    k
}

/// Index of the corner of an L-curve given as points ordered by increasing
/// regularization.
pub fn lcurve_corner(log_residual: &[f64], log_seminorm: &[f64]) -> usize {
    let k = discrete_curvature(log_residual, log_seminorm);
    let mut best = if k.len() > 2 { 1 } else { 0 };
    for i in 1..k.len().saturating_sub(1) {
        if k[i] > k[best] {
            best = i;
        }
    }
    best
}

fn check_eta_grid(eta_grid: &[f64]) -> Result<()> {
    if eta_grid.len() < 3 {
        return Err(Error::invalid(format!("L-curve needs at least 3 eta values, got {}", eta_grid.len())));
    }
    if eta_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("eta values must be positive and finite"));
    }
    if eta_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("eta values must be strictly increasing"));
    }
    Ok(())
}

pub fn lcurve_select(
    j: Arc<JacobianMatrix>,
    residual: &DataVector,
    eta_grid: &[f64],
    settings: LsqrSettings,
) -> Result<(LCurve, Vec<Reconstruction>)> {
    check_eta_grid(eta_grid)?;
    let recs: Vec<Reconstruction> = eta_grid
        .par_iter()
        .map(|&eta| lsqr_solve(&build_augmented(j.clone(), residual, eta)?, settings))
        .collect::<Result<_>>()?;
    let points: Vec<LCurvePoint> = recs
        .iter()
        .map(|r| LCurvePoint {
            eta: r.eta,
            residual_norm: r.data_residual_norm,
            seminorm: r.seminorm,
            augmented_residual_norm: r.residual_norm,
            iterations: r.iterations,
        })
        .collect();
    let tiny = f64::MIN_POSITIVE;
    let lr: Vec<f64> = points.iter().map(|p| p.residual_norm.max(tiny).ln()).collect();
    let ls: Vec<f64> = points.iter().map(|p| p.seminorm.max(tiny).ln()).collect();
    let curvature = discrete_curvature(&lr, &ls);
    let best = lcurve_corner(&lr, &ls);
    Ok((LCurve { eta_star: eta_grid[best], points, curvature }, recs))
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaChoice {
    Fixed(f64),
    /// A multiple of [`eta_anchor`].
    Anchor(f64),
    /// L-curve over `count` values spanning `decades` around the anchor.
    LCurve { decades: f64, count: usize },
}

impl Default for EtaChoice {
    fn default() -> Self {
        EtaChoice::LCurve { decades: 6.0, count: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionSettings {
    pub eta: EtaChoice,
    /// mm^-1; `None` skips the low-pass filter.
    pub cutoff: Option<f64>,
    pub lsqr: LsqrSettings,
    pub reuse: Reuse,
}

impl Default for InversionSettings {
    fn default() -> Self {
        InversionSettings { eta: EtaChoice::default(), cutoff: Some(1.75), lsqr: LsqrSettings::default(), reuse: Reuse::Auto }
    }
}

/// Solves for a given Jacobian and residual; returns the filtered result
/// and the L-curve when one was run.
pub fn invert(
    j: Arc<JacobianMatrix>,
    residual: &DataVector,
    settings: &InversionSettings,
) -> Result<(Reconstruction, Option<LCurve>)> {
    let (mut rec, curve) = match settings.eta {
        EtaChoice::Fixed(eta) => (lsqr_solve(&build_augmented(j, residual, eta)?, settings.lsqr)?, None),
        EtaChoice::Anchor(f) => {
            let eta = f * eta_anchor(&j);
            (lsqr_solve(&build_augmented(j, residual, eta)?, settings.lsqr)?, None)
        }
        EtaChoice::LCurve { decades, count } => {
            let grid = eta_grid(eta_anchor(&j), decades, count);
            let (curve, recs) = lcurve_select(j, residual, &grid, settings.lsqr)?;
            let rec = recs.into_iter().find(|r| r.eta == curve.eta_star).expect("selected eta is on the grid");
            (rec, Some(curve))
        }
    };
    if let Some(c) = settings.cutoff {
        rec.h_hat = lowpass_filter(&rec.h_raw, c, &rec.grid)?;
        rec.cutoff = Some(c);
    }
    Ok((rec, curve))
}

/// Everything produced by one linearized reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionRun {
    pub reconstruction: Reconstruction,
    pub lcurve: Option<LCurve>,
    /// `y(tau0)`.
    pub model_data: DataVector,
    pub jacobian: Arc<JacobianMatrix>,
}

/// Simulates `y(tau0)`, assembles the Jacobian, and inverts `g - y(tau0)`.
pub fn reconstruct(
    g: &DataVector,
    tau0: &MediumMap,
    protocol: &AcquisitionProtocol,
    options: &SimulationOptions,
    settings: &InversionSettings,
) -> Result<ReconstructionRun> {
    if g.layout != protocol.layout() || g.sensor_type != protocol.sensor_type {
        return Err(Error::invalid("data were not produced under this protocol"));
    }
    let variant = crate::acquisition::SensorVariant {
        width: protocol.geometry.sensor_width,
        sensor_type: protocol.sensor_type,
    };
    let (y0, j) = linearize(tau0, protocol, &[variant], options, settings.reuse)?.remove(0);
    let residual = g.residual(&y0)?;
    let j = Arc::new(j);
    let (reconstruction, lcurve) = invert(j.clone(), &residual, settings)?;
    Ok(ReconstructionRun { reconstruction, lcurve, model_data: y0, jacobian: j })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::centered(7, 5, 0.5, 0.25).unwrap()
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let g = grid();
        let ops = gradient_ops(&g);
        let c = vec![3.5; g.len()];
        assert!(ops.dx(&c).iter().chain(ops.dy(&c).iter()).all(|v| *v == 0.0));
        let ramp: Vec<f64> = (0..g.len()).map(|k| g.coords(k).0 as f64 * g.dx).collect();
        let dx = ops.dx(&ramp);
        for k in 0..g.len() {
            let (i, _) = g.coords(k);
            let want = if i + 1 < g.lx { 1.0 } else { 0.0 };
            assert!((dx[k] - want).abs() < 1e-12);
        }
        assert!(ops.dy(&ramp).iter().all(|v| v.abs() < 1e-12));
        // row-sum bound
        let mut rows = vec![0.0; g.len()];
        for (r, _, v) in ops.triplets(0) {
            rows[r] += f64::abs(v);
        }
        assert!(rows.iter().all(|s| *s <= 2.0 / g.dx + 1e-12));
    }

    #[test]
    fn gradient_transposes() {
        let g = grid();
        let ops = gradient_ops(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
        let s: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&ops.dx(&h), &s) - dot(&h, &ops.dx_transpose(&s))).abs() < 1e-10);
        assert!((dot(&ops.dy(&h), &s) - dot(&h, &ops.dy_transpose(&s))).abs() < 1e-10);
        let fro: f64 = ops.triplets(0).iter().chain(&ops.triplets(1)).map(|t| t.2 * t.2).sum();
        assert!((fro - ops.frobenius_norm_sq()).abs() < 1e-9 * fro);
    }

    #[test]
    fn lsqr_identity_and_dense_oracle() {
        let b: Vec<f64> = (0..6).map(|k| k as f64 - 2.5).collect();
        let out = lsqr(&DenseMatrix::identity(6), &b, LsqrSettings::default()).unwrap();
        for (x, y) in out.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n) = (20, 5);
        let a = DenseMatrix::new(m, n, (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.apply(&x_true);
        let out = lsqr(&a, &b, LsqrSettings { tol: 1e-14, max_iter: 200 }).unwrap();
        // normal equations by Gaussian elimination
        let mut ata = vec![0.0; n * n];
        let mut atb = a.apply_transpose(&b);
        for i in 0..n {
            for j in 0..n {
                ata[i * n + j] = (0..m).map(|r| a.data[r * n + i] * a.data[r * n + j]).sum();
            }
        }
        for c in 0..n {
            for r in c + 1..n {
                let f = ata[r * n + c] / ata[c * n + c];
                for k in c..n {
                    ata[r * n + k] -= f * ata[c * n + k];
                }
                atb[r] -= f * atb[c];
            }
        }
        let mut xs = vec![0.0; n];
        for c in (0..n).rev() {
            xs[c] = (atb[c] - (c + 1..n).map(|k| ata[c * n + k] * xs[k]).sum::<f64>()) / ata[c * n + c];
        }
        for (x, y) in out.x.iter().zip(&xs) {
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
        assert!(out.converged);
    }

    #[test]
    fn lsqr_rejects_bad_tolerance() {
        assert!(lsqr(&DenseMatrix::identity(2), &[1.0, 2.0], LsqrSettings { tol: 0.0, max_iter: 5 }).is_err());
    }

    #[test]
    fn lowpass_mask_radius_and_limits() {
        let g = Grid::centered(256, 256, 0.15625, 0.15625).unwrap();
        // a unit impulse's spectrum is flat, so the filtered impulse at the
        // origin counts the kept coefficients
        let mut imp = vec![0.0; g.len()];
        imp[0] = 1.0;
        let out = lowpass_filter(&imp, 1.75, &g).unwrap();
        let kept = (out[0] * g.len() as f64).round() as i64;
        let mut want = 0;
        for a in -128i64..128 {
            for b in -128i64..128 {
                if ((a * a + b * b) as f64).sqrt() <= 70.0 {
                    want += 1;
                }
            }
        }
        assert_eq!(kept, want);

        let c = vec![2.0; g.len()];
        assert!(lowpass_filter(&c, 1.75, &g).unwrap().iter().all(|v| (v - 2.0).abs() < 1e-12));
        // 80 cycles across the grid lies above the 70-cycle cutoff
        let s: Vec<f64> = (0..g.len())
            .map(|k| (2.0 * std::f64::consts::PI * 80.0 * g.coords(k).0 as f64 / 256.0).sin())
            .collect();
        assert!(lowpass_filter(&s, 1.75, &g).unwrap().iter().all(|v| v.abs() < 1e-10));
        assert!(lowpass_filter(&s, 0.0, &g).is_err());
    }

    #[test]
    fn synthetic_lcurve_corner() {
        // residual flat then rising, seminorm falling then flat; corner at 6
        let n = 13;
        let corner = 6;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for i in 0..n {
            let t = i as f64 - corner as f64;
            x.push(if t < 0.0 { 0.02 * t } else { t });
            y.push(if t < 0.0 { -t } else { -0.02 * t });
        }
        assert_eq!(lcurve_corner(&x, &y), corner);
        assert!(check_eta_grid(&[1.0, 1.0, 1.0]).is_err());
        assert!(check_eta_grid(&[1.0, 2.0]).is_err());
        assert!(check_eta_grid(&[1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn eta_grid_spacing() {
        let g = eta_grid(1e-3, 6.0, 15);
        assert_eq!(g.len(), 15);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert!((g[14] - 1.0).abs() < 1e-12);
        assert!((g[7] - 1e-3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lowpass_is_idempotent(seed in 0u64..1000, cutoff in 0.2f64..3.0) {
            let g = Grid::centered(16, 12, 0.3, 0.4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = lowpass_filter(&h, cutoff, &g).unwrap();
            let b = lowpass_filter(&a, cutoff, &g).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
