//! Discrete Helmholtz operator with an absorbing boundary layer, forward and
//! adjoint solves, and the absorption sensitivity of the operator.
//!
//! The operator acting on a pressure field `p` is
//!
//! ```text
//! (L p)(x) = [omega (1 + i (tau(x) + sigma(x))) / c(x)]^2 p(x) + (lap p)(x)
//! ```
//!
//! where `lap` is the 5-point Laplacian and `sigma` is the quadratic absorbing
//! ramp of the boundary layer (zero in the interior). Values outside the grid
//! are held at zero. Lengths are converted from mm to m, so the operator is in
//! m⁻².

pub mod analytic;
mod banded;
mod field;
mod iterative;

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use banded::{BandedLu, BandedMatrix};
pub use field::{inner, ComplexField, FieldRole, SourceStencil};
pub(crate) use field::bilinear_stencil;
pub use iterative::{gmres, GmresOutcome};

use crate::error::{Error, Result};
use crate::grid::{Grid, MediumMap};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Relative residual above which a direct solve is reported as failed.
const DIRECT_RESIDUAL_LIMIT: f64 = 1e-8;

/// Absorbing layer along every edge of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSpec {
    pub width_px: usize,
    /// Peak added absorption (dimensionless, same units as tau) at the
    /// outermost pixel.
    pub strength: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        PmlSpec { width_px: 5, strength: DEFAULT_PML_STRENGTH }
    }
}

/// Default peak strength of the absorbing ramp; see the `pml_reflection`
/// example for the enlarged-domain measurement behind it.
pub const DEFAULT_PML_STRENGTH: f64 = 0.75;

impl PmlSpec {
    pub fn none() -> Self {
        PmlSpec { width_px: 0, strength: 0.0 }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::invalid(format!("PML strength must be non-negative, got {}", self.strength)));
        }
        if self.width_px > 0 && 2 * self.width_px >= grid.lx.min(grid.ly) {
            return Err(Error::invalid(format!(
                "PML width {} px leaves no interior on a {}x{} grid",
                self.width_px, grid.lx, grid.ly
            )));
        }
        Ok(())
    }

    /// Ramp value for a pixel at index `k` along an axis of `n` pixels.
    fn ramp(&self, k: usize, n: usize) -> f64 {
        let w = self.width_px;
        if w == 0 {
            return 0.0;
        }
        let depth = if k < w {
            w - k
        } else if k >= n - w {
            k + w + 1 - n
        } else {
            return 0.0;
        };
        self.strength * (depth as f64 / w as f64).powi(2)
    }

    /// Added absorption at pixel `(i, j)`; contributions of the two axes add.
    pub fn sigma(&self, grid: &Grid, i: usize, j: usize) -> f64 {
        self.ramp(i, grid.lx) + self.ramp(j, grid.ly)
    }

    /// Whether pixel `(i, j)` lies inside the layer.
    pub fn in_layer(&self, grid: &Grid, i: usize, j: usize) -> bool {
        let w = self.width_px;
        w > 0 && (i < w || j < w || i >= grid.lx - w || j >= grid.ly - w)
    }
}

/// How strictly to enforce spatial resolution when assembling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionCheck {
    /// Fail below 2 points per wavelength.
    #[default]
    Strict,
    /// Only warn. For inverse-crime studies on coarse grids where the data
    /// and the model share the same discretization.
    Permissive,
}

/// Points per wavelength for the slowest sound speed at `omega`.
pub fn points_per_wavelength(grid: &Grid, c_min: f64, omega: f64) -> f64 {
    let wavelength_mm = c_min / (omega / (2.0 * PI)) * 1e3;
    wavelength_mm / grid.dx.max(grid.dy)
}

/// Sparse 5-point Helmholtz operator for one frequency and medium.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    omega: f64,
    pml: PmlSpec,
    /// `[omega (1 + i(tau + sigma)) / c]^2` per pixel.
    mass: Vec<Complex64>,
    /// Derivative of `mass` with respect to `tau` per pixel.
    dmass_dtau: Vec<Complex64>,
    cx: f64,
    cy: f64,
}

pub fn assemble_operator(grid: &Grid, medium: &MediumMap, omega: f64, pml: PmlSpec) -> Result<DiscreteOperator> {
    assemble_operator_with(grid, medium, omega, pml, ResolutionCheck::Strict)
}

pub fn assemble_operator_with(
    grid: &Grid,
    medium: &MediumMap,
    omega: f64,
    pml: PmlSpec,
    check: ResolutionCheck,
) -> Result<DiscreteOperator> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("angular frequency must be positive, got {omega}")));
    }
    if !grid.same_shape(medium.grid()) {
        return Err(Error::invalid(format!(
            "medium is {}x{} but grid is {}x{}",
            medium.grid().lx,
            medium.grid().ly,
            grid.lx,
            grid.ly
        )));
    }
    pml.validate(grid)?;
    let ppw = points_per_wavelength(grid, medium.c_min(), omega);
    if ppw < 2.0 {
        match check {
            ResolutionCheck::Strict => return Err(Error::Unresolvable { points_per_wavelength: ppw }),
            ResolutionCheck::Permissive => warn!(
                "{ppw:.2} points per wavelength at {:.3} MHz: below the sampling limit, results are only self-consistent",
                omega / (2.0 * PI) * 1e-6
            ),
        }
    } else if ppw < 6.0 {
        warn!("{ppw:.2} points per wavelength at {:.3} MHz (10 recommended)", omega / (2.0 * PI) * 1e-6);
    }

    let n = grid.len();
    let mut mass = Vec::with_capacity(n);
    let mut dmass_dtau = Vec::with_capacity(n);
    let (tau, c) = (medium.tau(), medium.c());
    for j in 0..grid.ly {
        for i in 0..grid.lx {
            let k = grid.index(i, j);
            let s = pml.sigma(grid, i, j);
            let w_over_c = omega / c[k];
            let z = Complex64::new(1.0, tau[k] + s) * w_over_c;
            mass.push(z * z);
            dmass_dtau.push(2.0 * I * z * w_over_c);
        }
    }
    let dx = grid.dx * 1e-3;
    let dy = grid.dy * 1e-3;
    Ok(DiscreteOperator { grid: *grid, omega, pml, mass, dmass_dtau, cx: 1.0 / (dx * dx), cy: 1.0 / (dy * dy) })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn pml(&self) -> &PmlSpec {
        &self.pml
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    /// The `k²` term of pixel `k`.
    pub fn mass_term(&self, k: usize) -> Complex64 {
        self.mass[k]
    }

    /// Full diagonal matrix entry of pixel `k`.
    pub fn diagonal(&self, k: usize) -> Complex64 {
        self.mass[k] - 2.0 * (self.cx + self.cy)
    }

    /// Coupling to the x and y neighbours (m⁻²).
    pub fn off_diagonals(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    /// Exact derivative of the operator with respect to the absorption of
    /// each pixel. Outside the boundary layer this equals
    /// [`imaging_condition`].
    pub fn tau_sensitivity(&self) -> &[Complex64] {
        &self.dmass_dtau
    }

    /// All nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(5 * g.len());
        for j in 0..g.ly {
            for i in 0..g.lx {
                let k = g.index(i, j);
                out.push((k, k, self.diagonal(k)));
                let cx = Complex64::new(self.cx, 0.0);
                let cy = Complex64::new(self.cy, 0.0);
                if i > 0 {
                    out.push((k, k - 1, cx));
                }
                if i + 1 < g.lx {
                    out.push((k, k + 1, cx));
                }
                if j > 0 {
                    out.push((k, k - g.lx, cy));
                }
                if j + 1 < g.ly {
                    out.push((k, k + g.lx, cy));
                }
            }
        }
        out
    }

    fn apply_impl(&self, u: &[Complex64], out: &mut [Complex64], adjoint: bool, with_mass: bool) {
        let g = &self.grid;
        let (lx, ly) = (g.lx, g.ly);
        let center = -2.0 * (self.cx + self.cy);
        for j in 0..ly {
            for i in 0..lx {
                let k = j * lx + i;
                let mut acc = u[k] * center;
                if with_mass {
                    let m = if adjoint { self.mass[k].conj() } else { self.mass[k] };
                    acc += m * u[k];
                }
                let mut nx = Complex64::new(0.0, 0.0);
                if i > 0 {
                    nx += u[k - 1];
                }
                if i + 1 < lx {
                    nx += u[k + 1];
                }
                let mut ny = Complex64::new(0.0, 0.0);
                if j > 0 {
                    ny += u[k - lx];
                }
                if j + 1 < ly {
                    ny += u[k + lx];
                }
                out[k] = acc + nx * self.cx + ny * self.cy;
            }
        }
    }

    /// `out = L u`.
    pub fn apply(&self, u: &[Complex64], out: &mut [Complex64]) {
        self.apply_impl(u, out, false, true);
    }

    /// `out = L^H u`.
    pub fn apply_adjoint(&self, u: &[Complex64], out: &mut [Complex64]) {
        self.apply_impl(u, out, true, true);
    }

    /// `out = lap u`, the operator without its mass term.
    pub fn apply_laplacian(&self, u: &[Complex64], out: &mut [Complex64]) {
        self.apply_impl(u, out, false, false);
    }

    pub fn apply_field(&self, u: &ComplexField) -> ComplexField {
        let mut out = ComplexField::zeros(self.grid, FieldRole::Generic);
        self.apply(u.values(), out.values_mut());
        out
    }

    pub fn apply_adjoint_field(&self, u: &ComplexField) -> ComplexField {
        let mut out = ComplexField::zeros(self.grid, FieldRole::Generic);
        self.apply_adjoint(u.values(), out.values_mut());
        out
    }

    fn to_banded(&self) -> BandedMatrix {
        let g = &self.grid;
        let bw = g.lx;
        let mut m = BandedMatrix::zeros(g.len(), bw, bw);
        for (r, c, v) in self.triplets() {
            m.set(r, c, v);
        }
        m
    }
}

/// `2 i omega² / c² (1 + i tau)` per pixel: derivative of the operator with
/// respect to the local absorption.
pub fn imaging_condition(medium: &MediumMap, omega: f64) -> Result<ComplexField> {
    if !(omega > 0.0) {
        return Err(Error::invalid(format!("angular frequency must be positive, got {omega}")));
    }
    let values = medium
        .tau()
        .iter()
        .zip(medium.c())
        .map(|(&t, &c)| 2.0 * I * (omega * omega / (c * c)) * Complex64::new(1.0, t))
        .collect();
    ComplexField::new(*medium.grid(), values, FieldRole::Generic)
}

/// Linear solver backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    /// Banded LU with partial pivoting, factored once and reused.
    #[default]
    Direct,
    /// Restarted GMRES on the unfactored operator.
    Iterative { tol: f64, restart: usize, max_iter: usize },
}

impl SolverKind {
    pub fn iterative_default() -> Self {
        SolverKind::Iterative { tol: 1e-8, restart: 200, max_iter: 20_000 }
    }
}

#[derive(Debug)]
enum Backend {
    Direct(BandedLu),
    Iterative { tol: f64, restart: usize, max_iter: usize },
}

/// An operator prepared for repeated forward and adjoint solves. The direct
/// backend factors once; the factors are read-only so concurrent solves are
/// safe.
#[derive(Debug)]
pub struct HelmholtzSolver {
    op: DiscreteOperator,
    backend: Backend,
}

impl HelmholtzSolver {
    pub fn new(op: DiscreteOperator, kind: SolverKind) -> Result<Self> {
        let backend = match kind {
            SolverKind::Direct => Backend::Direct(op.to_banded().factor()?),
            SolverKind::Iterative { tol, restart, max_iter } => {
                if !(tol > 0.0) {
                    return Err(Error::invalid("iterative tolerance must be positive"));
                }
                Backend::Iterative { tol, restart, max_iter }
            }
        };
        Ok(HelmholtzSolver { op, backend })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    fn check_source(&self, source: &ComplexField) -> Result<()> {
        if !self.op.grid.same_shape(source.grid()) {
            return Err(Error::invalid(format!(
                "source is {}x{} but operator grid is {}x{}",
                source.grid().lx,
                source.grid().ly,
                self.op.grid.lx,
                self.op.grid.ly
            )));
        }
        Ok(())
    }

    fn solve(&self, source: &ComplexField, adjoint: bool) -> Result<ComplexField> {
        self.check_source(source)?;
        let b = source.values();
        let mut x = b.to_vec();
        match &self.backend {
            Backend::Direct(lu) => {
                if adjoint {
                    lu.solve_adjoint_in_place(&mut x);
                } else {
                    lu.solve_in_place(&mut x);
                }
                let rel = self.relative_residual(&x, b, adjoint);
                if !(rel <= DIRECT_RESIDUAL_LIMIT) {
                    return Err(Error::Solver(format!(
                        "direct solve residual {rel:.3e} exceeds {DIRECT_RESIDUAL_LIMIT:.0e} (omega={:.6e}, {}x{} grid)",
                        self.op.omega, self.op.grid.lx, self.op.grid.ly
                    )));
                }
            }
            Backend::Iterative { tol, restart, max_iter } => {
                x.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                let out = if adjoint {
                    gmres(|v, o| self.op.apply_adjoint(v, o), b, &mut x, *tol, *restart, *max_iter)
                } else {
                    gmres(|v, o| self.op.apply(v, o), b, &mut x, *tol, *restart, *max_iter)
                };
                if !out.converged {
                    return Err(Error::Solver(format!(
                        "GMRES stalled at relative residual {:.3e} after {} iterations",
                        out.relative_residual, out.iterations
                    )));
                }
            }
        }
        let role = if adjoint { FieldRole::Adjoint } else { FieldRole::Pressure };
        ComplexField::new(*source.grid(), x, role)
    }

    fn relative_residual(&self, x: &[Complex64], b: &[Complex64], adjoint: bool) -> f64 {
        let bn = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if bn == 0.0 {
            return 0.0;
        }
        let mut r = vec![Complex64::new(0.0, 0.0); b.len()];
        if adjoint {
            self.op.apply_adjoint(x, &mut r);
        } else {
            self.op.apply(x, &mut r);
        }
        r.iter().zip(b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / bn
    }

    /// Pressure `P` with `L P = S`.
    pub fn solve_forward(&self, source: &ComplexField) -> Result<ComplexField> {
        self.solve(source, false)
    }

    /// Adjoint field `Z` with `L^H Z = S`.
    pub fn solve_adjoint(&self, source: &ComplexField) -> Result<ComplexField> {
        self.solve(source, true)
    }
}

/// One-shot forward solve with the direct backend.
pub fn solve_forward(op: &DiscreteOperator, source: &ComplexField) -> Result<ComplexField> {
    HelmholtzSolver::new(op.clone(), SolverKind::Direct)?.solve_forward(source)
}

/// One-shot adjoint solve with the direct backend.
pub fn solve_adjoint(op: &DiscreteOperator, adjoint_source: &ComplexField) -> Result<ComplexField> {
    HelmholtzSolver::new(op.clone(), SolverKind::Direct)?.solve_adjoint(adjoint_source)
}
