//! Edge spread function extraction, error-function fit, Gaussian MTF and
//! weighted RMS contrast.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::grid::{Grid, PixelRect};

/// Which grid axis the edge runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeAxis {
    /// Edge parallel to x; profiles run along y.
    Horizontal,
    /// Edge parallel to y; profiles run along x.
    Vertical,
}

/// Rectangle straddling a straight, axis-aligned edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRoi {
    pub rect: PixelRect,
    pub axis: EdgeAxis,
    /// Pixel coordinate of the edge across the profiles (half-integer for an
    /// edge between pixels).
    pub edge_px: f64,
}

impl EdgeRoi {
    pub fn new(rect: PixelRect, axis: EdgeAxis, edge_px: f64) -> Result<Self> {
        let (lo, hi) = match axis {
            EdgeAxis::Horizontal => (rect.j0, rect.j1),
            EdgeAxis::Vertical => (rect.i0, rect.i1),
        };
        let mid = 0.5 * (lo + hi) as f64;
        if (mid - edge_px).abs() > 1e-9 {
            return Err(Error::invalid(format!("edge at {edge_px} px does not bisect the ROI span {lo}..={hi}")));
        }
        if rect.i1 < rect.i0 || rect.j1 < rect.j0 {
            return Err(Error::invalid("empty ROI"));
        }
        Ok(EdgeRoi { rect, axis, edge_px })
    }

    /// ROI centred on the top (high-y) edge of `target`: `along` pixels along
    /// the edge, `across` pixels across it, half inside the target.
    pub fn upper_edge(target: &PixelRect, along: usize, across: usize) -> Result<Self> {
        if along == 0 || across < 2 || across % 2 != 0 {
            return Err(Error::invalid(format!("ROI needs along > 0 and an even across >= 2 (got {along}x{across})")));
        }
        if target.width() < along {
            return Err(Error::invalid(format!("ROI length {along} exceeds target width {}", target.width())));
        }
        let half = across / 2;
        if target.j1 + 1 < half {
            return Err(Error::invalid("ROI would start below the grid"));
        }
        let i0 = target.i0 + (target.width() - along) / 2;
        let rect = PixelRect::new(i0, i0 + along - 1, target.j1 + 1 - half, target.j1 + half);
        EdgeRoi::new(rect, EdgeAxis::Horizontal, target.j1 as f64 + 0.5)
    }

    pub fn fits(&self, grid: &Grid) -> bool {
        self.rect.fits(grid)
    }

    /// Number of profiles averaged.
    pub fn lines(&self) -> usize {
        match self.axis {
            EdgeAxis::Horizontal => self.rect.width(),
            EdgeAxis::Vertical => self.rect.height(),
        }
    }
}

/// Averages the profiles across the edge. Positions are in mm from the
/// edge mid-line.
pub fn extract_esf(field: &[f64], grid: &Grid, roi: &EdgeRoi) -> Result<(Vec<f64>, Vec<f64>)> {
    if field.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    if !roi.fits(grid) {
        return Err(Error::invalid(format!("ROI {:?} outside {}x{} grid", roi.rect, grid.lx, grid.ly)));
    }
    let r = roi.rect;
    let (positions, esf) = match roi.axis {
        EdgeAxis::Horizontal => {
            let n = r.width() as f64;
            (r.j0..=r.j1)
                .map(|j| {
                    let s: f64 = (r.i0..=r.i1).map(|i| field[grid.index(i, j)]).sum();
                    ((j as f64 - roi.edge_px) * grid.dy, s / n)
                })
                .unzip()
        }
        EdgeAxis::Vertical => {
            let n = r.height() as f64;
            (r.i0..=r.i1)
                .map(|i| {
                    let s: f64 = (r.j0..=r.j1).map(|j| field[grid.index(i, j)]).sum();
                    ((i as f64 - roi.edge_px) * grid.dx, s / n)
                })
                .unzip()
        }
    };
    Ok((positions, esf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    NotConverged,
    DegenerateAmplitude,
    SharperThanGrid,
}

/// Parameters of `B/2 erf((x - mu) / (sqrt(2) sigma)) + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsfFit {
    pub b: f64,
    pub mu: f64,
    /// mm
    pub sigma: f64,
    pub r: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub flags: Vec<FitFlag>,
}

impl EsfFit {
    pub fn eval(&self, x: f64) -> f64 {
        erf_model(&[self.b, self.mu, self.sigma, self.r], x)
    }

    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

fn erf_model(p: &[f64; 4], x: f64) -> f64 {
    0.5 * p[0] * erf((x - p[1]) / (SQRT_2 * p[2])) + p[3]
}

fn erf_gradient(p: &[f64; 4], x: f64) -> [f64; 4] {
    let z = (x - p[1]) / (SQRT_2 * p[2]);
    let g = (-z * z).exp() / PI.sqrt();
    [0.5 * erf(z), -p[0] * g / (SQRT_2 * p[2]), -p[0] * g * z / p[2], 1.0]
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for c in (0..4).rev() {
        x[c] = (b[c] - (c + 1..4).map(|k| a[c][k] * x[k]).sum::<f64>()) / a[c][c];
    }
    Some(x)
}

const FIT_MAX_ITER: usize = 200;
const FIT_STEP_TOL: f64 = 1e-10;

/// Levenberg-Marquardt fit of the error-function edge model.
pub fn fit_erf(positions: &[f64], esf: &[f64]) -> Result<EsfFit> {
    let n = positions.len();
    if n != esf.len() {
        return Err(Error::invalid("positions and ESF differ in length"));
    }
    if n < 8 {
        return Err(Error::invalid(format!("erf fit needs at least 8 samples, got {n}")));
    }
    let (xmin, xmax) = positions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let spacing = positions.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);
    let (ymin, ymax) = esf.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let mean = esf.iter().sum::<f64>() / n as f64;
    let half = n / 2;
    let left = esf[..half].iter().sum::<f64>() / half as f64;
    let right = esf[half..].iter().sum::<f64>() / (n - half) as f64;
    let amp = ymax - ymin;
    if !(amp > 1e-12 * ymax.abs().max(ymin.abs()).max(f64::MIN_POSITIVE)) {
        return Ok(EsfFit {
            b: 0.0,
            mu: 0.5 * (xmin + xmax),
            sigma: f64::NAN,
            r: mean,
            residual_rms: 0.0,
            iterations: 0,
            flags: vec![FitFlag::DegenerateAmplitude],
        });
    }
    let mut steep = 0;
    let mut best = 0.0;
    for i in 0..n - 1 {
        let g = ((esf[i + 1] - esf[i]) / (positions[i + 1] - positions[i])).abs();
        if g > best {
            best = g;
            steep = i;
        }
    }
    let mut p = [
        amp * (right - left).signum(),
        0.5 * (positions[steep] + positions[steep + 1]),
        (xmax - xmin) / 16.0,
        mean,
    ];
    let sse = |p: &[f64; 4]| positions.iter().zip(esf).map(|(&x, &y)| (erf_model(p, x) - y).powi(2)).sum::<f64>();
    let mut cost = sse(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in positions.iter().zip(esf) {
            let g = erf_gradient(&p, x);
            let r = y - erf_model(&p, x);
            for a in 0..4 {
                jtr[a] += g[a] * r;
                for b in 0..4 {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(d) = solve4(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = [p[0] + d[0], p[1] + d[1], p[2] + d[2], p[3] + d[3]];
            if trial[2] <= 0.0 {
                trial[2] = 0.5 * p[2];
            }
            let c = sse(&trial);
            if c <= cost {
                let step = (0..4).map(|a| (trial[a] - p[a]).abs() / p[a].abs().max(1e-12)).fold(0.0, f64::max);
                p = trial;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if step < FIT_STEP_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted || cost == 0.0 {
            converged = converged || cost == 0.0 || !accepted;
            break;
        }
    }
    let mut flags = Vec::new();
    if !converged {
        flags.push(FitFlag::NotConverged);
    }
    if p[2] < spacing / 10.0 {
        flags.push(FitFlag::SharperThanGrid);
    }
    if p[0].abs() < 1e-12 * amp {
        flags.push(FitFlag::DegenerateAmplitude);
    }
    Ok(EsfFit {
        b: p[0],
        mu: p[1],
        sigma: p[2],
        r: p[3],
        residual_rms: (cost / n as f64).sqrt(),
        iterations,
        flags,
    })
}

/// Gaussian MTF implied by an erf edge of width `sigma` (mm), at `k` (mm^-1).
pub fn mtf_curve(sigma: f64, k: f64) -> f64 {
    (-2.0 * PI * PI * sigma * sigma * k * k).exp()
}

/// Resolution figure `2 ln 2 / (pi sigma)` in mm^-1.
pub fn mtf_fwhm(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("edge width must be positive, got {sigma}")));
    }
    Ok(2.0 * LN_2 / (PI * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Max => "max",
            Weighting::Mean => "mean",
        })
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Weighting::Max),
            "mean" => Ok(Weighting::Mean),
            other => Err(Error::invalid(format!("unknown weighting '{other}'"))),
        }
    }
}

/// `sqrt(mean((h - mean h)^2)) / w` over the ROI.
pub fn rms_contrast(field: &[f64], grid: &Grid, roi: &PixelRect, weighting: Weighting) -> Result<f64> {
    if field.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    if !roi.fits(grid) {
        return Err(Error::invalid(format!("ROI {roi:?} outside {}x{} grid", grid.lx, grid.ly)));
    }
    let vals: Vec<f64> = (roi.j0..=roi.j1).flat_map(|j| (roi.i0..=roi.i1).map(move |i| (i, j))).map(|(i, j)| field[grid.index(i, j)]).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let w = match weighting {
        Weighting::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Weighting::Mean => mean,
    };
    if w == 0.0 || !w.is_finite() {
        return Err(Error::UndefinedContrast(format!("{weighting} weight over the ROI is {w}")));
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / w.abs())
}

/// One row of the contrast table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub label: String,
    pub n_angles: usize,
    pub n_freqs: usize,
    pub sensor_width_mm: f64,
    pub sensor_type: String,
    pub noise_pct: f64,
    pub eta: f64,
    /// mm^-1; NaN when the fit failed.
    pub fwhm_mm_inv: f64,
    pub c_max: f64,
    pub fit_residual: f64,
    #[serde(default)]
    pub weighting: Weighting,
}

pub const CONTRAST_CSV_HEADER: &str =
    "label,n_angles,n_freqs,sensor_width_mm,sensor_type,noise_pct,eta,fwhm_mm_inv,c_max,fit_residual";

impl ContrastReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.label,
            self.n_angles,
            self.n_freqs,
            self.sensor_width_mm,
            self.sensor_type,
            self.noise_pct,
            self.eta,
            self.fwhm_mm_inv,
            self.c_max,
            self.fit_residual
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let c: Vec<&str> = line.trim().split(',').collect();
        if c.len() != 10 {
            return Err(Error::Format(format!("contrast row needs 10 columns, got {}", c.len())));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("'{s}': {e}")));
        let u = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("'{s}': {e}")));
        Ok(ContrastReport {
            label: c[0].to_string(),
            n_angles: u(c[1])?,
            n_freqs: u(c[2])?,
            sensor_width_mm: f(c[3])?,
            sensor_type: c[4].to_string(),
            noise_pct: f(c[5])?,
            eta: f(c[6])?,
            fwhm_mm_inv: f(c[7])?,
            c_max: f(c[8])?,
            fit_residual: f(c[9])?,
            weighting: Weighting::Max,
        })
    }
}

pub fn contrast_table(rows: &[ContrastReport]) -> String {
    let mut s = String::from(CONTRAST_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn read_contrast_table(text: &str) -> Result<Vec<ContrastReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CONTRAST_CSV_HEADER => {}
        _ => return Err(Error::Format("missing contrast table header".into())),
    }
    lines.filter(|l| !l.trim().is_empty()).map(ContrastReport::from_csv_row).collect()
}

/// Edge fit and contrast of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastAnalysis {
    pub positions: Vec<f64>,
    pub esf: Vec<f64>,
    pub fit: EsfFit,
    pub fwhm: f64,
    pub c_max: f64,
}

pub fn analyze(field: &[f64], grid: &Grid, roi: &EdgeRoi, weighting: Weighting) -> Result<ContrastAnalysis> {
    let (positions, esf) = extract_esf(field, grid, roi)?;
    let fit = fit_erf(&positions, &esf)?;
    let fwhm = if fit.sigma > 0.0 && !fit.flags.contains(&FitFlag::DegenerateAmplitude) {
        mtf_fwhm(fit.sigma)?
    } else {
        f64::NAN
    };
    let c_max = rms_contrast(field, grid, &roi.rect, weighting)?;
    Ok(ContrastAnalysis { positions, esf, fit, fwhm, c_max })
}
