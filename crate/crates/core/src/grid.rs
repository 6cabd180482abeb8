//! Spatial grid, absorption and sound-speed fields, and phantom construction.
//!
//! Pixels are addressed as `(i, j)` with `i` the column (x) and `j` the row
//! (y). Storage is row-major: the linear index of `(i, j)` is `j * lx + i`.
//! All lengths on the grid are in millimetres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decibels per neper, `20 log10(e)`.
pub const DB_PER_NEPER: f64 = 8.685_889_638_065_037;

/// A rectangular pixel grid with uniform spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lx: usize,
    pub ly: usize,
    /// Spacing in x (mm).
    pub dx: f64,
    /// Spacing in y (mm).
    pub dy: f64,
    /// Physical coordinate of the centre of pixel `(0, 0)` (mm).
    pub origin: [f64; 2],
}

pub fn make_grid(lx: usize, ly: usize, dx: f64, dy: f64, origin: [f64; 2]) -> Result<Grid> {
    if lx == 0 || ly == 0 {
        return Err(Error::invalid(format!("grid dimensions must be positive, got {lx}x{ly}")));
    }
    if !(dx > 0.0 && dy > 0.0) || !dx.is_finite() || !dy.is_finite() {
        return Err(Error::invalid(format!("grid spacing must be positive, got dx={dx} dy={dy}")));
    }
    if !origin[0].is_finite() || !origin[1].is_finite() {
        return Err(Error::invalid("grid origin must be finite"));
    }
    Ok(Grid { lx, ly, dx, dy, origin })
}

impl Grid {
    /// Grid whose geometric centre sits at `(0, 0)` mm.
    pub fn centered(lx: usize, ly: usize, dx: f64, dy: f64) -> Result<Grid> {
        let origin = [
            -0.5 * (lx as f64 - 1.0) * dx,
            -0.5 * (ly as f64 - 1.0) * dy,
        ];
        make_grid(lx, ly, dx, dy, origin)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.lx * self.ly
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent `(lx * dx, ly * dy)` in mm.
    pub fn extent(&self) -> (f64, f64) {
        (self.lx as f64 * self.dx, self.ly as f64 * self.dy)
    }

    /// Geometric centre of the grid in mm.
    pub fn center(&self) -> [f64; 2] {
        [
            self.origin[0] + 0.5 * (self.lx as f64 - 1.0) * self.dx,
            self.origin[1] + 0.5 * (self.ly as f64 - 1.0) * self.dy,
        ]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.lx && j < self.ly);
        j * self.lx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.lx, k / self.lx)
    }

    /// Centre of pixel `(i, j)` in mm.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.dx,
            self.origin[1] + j as f64 * self.dy,
        ]
    }

    /// Fractional pixel coordinates of a physical point.
    #[inline]
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.origin[0]) / self.dx,
            (p[1] - self.origin[1]) / self.dy,
        ]
    }

    /// Pixel area in mm².
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// The same grid grown by `pad` pixels on every side. Pixel `(i, j)` of
    /// `self` becomes pixel `(i + pad, j + pad)` of the result.
    pub fn padded(&self, pad: usize) -> Grid {
        Grid {
            lx: self.lx + 2 * pad,
            ly: self.ly + 2 * pad,
            dx: self.dx,
            dy: self.dy,
            origin: [
                self.origin[0] - pad as f64 * self.dx,
                self.origin[1] - pad as f64 * self.dy,
            ],
        }
    }

    pub(crate) fn same_shape(&self, other: &Grid) -> bool {
        self.lx == other.lx && self.ly == other.ly
    }
}

/// Inclusive pixel rectangle `[i0, i1] x [j0, j1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl PixelRect {
    pub fn new(i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        PixelRect { i0, i1, j0, j1 }
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i <= self.i1 && j >= self.j0 && j <= self.j1
    }

    pub fn width(&self) -> usize {
        self.i1 + 1 - self.i0
    }

    pub fn height(&self) -> usize {
        self.j1 + 1 - self.j0
    }

    pub fn fits(&self, grid: &Grid) -> bool {
        self.i0 <= self.i1 && self.j0 <= self.j1 && self.i1 < grid.lx && self.j1 < grid.ly
    }

    /// Physical span of the pixel centres, `([x0, x1], [y0, y1])` in mm.
    pub fn center_span(&self, grid: &Grid) -> ([f64; 2], [f64; 2]) {
        let a = grid.position(self.i0, self.j0);
        let b = grid.position(self.i1, self.j1);
        ([a[0], b[0]], [a[1], b[1]])
    }

    /// Maps the rectangle onto another grid covering the same physical
    /// region: the result holds every pixel of `to` whose centre falls inside
    /// the pixel footprint of `self` on `from`.
    pub fn resample(&self, from: &Grid, to: &Grid) -> Result<PixelRect> {
        let (xs, ys) = self.center_span(from);
        let x_lo = xs[0] - 0.5 * from.dx;
        let x_hi = xs[1] + 0.5 * from.dx;
        let y_lo = ys[0] - 0.5 * from.dy;
        let y_hi = ys[1] + 0.5 * from.dy;
        let eps = 1e-9;
        let lo = |v: f64, o: f64, d: f64| ((v - o) / d - eps).ceil().max(0.0) as usize;
        let hi = |v: f64, o: f64, d: f64| ((v - o) / d + eps).floor();
        let i0 = lo(x_lo, to.origin[0], to.dx);
        let j0 = lo(y_lo, to.origin[1], to.dy);
        let i1 = hi(x_hi, to.origin[0], to.dx);
        let j1 = hi(y_hi, to.origin[1], to.dy);
        if i1 < 0.0 || j1 < 0.0 {
            return Err(Error::invalid("rectangle does not overlap the target grid"));
        }
        let r = PixelRect::new(i0, i1 as usize, j0, j1 as usize);
        if !r.fits(to) {
            return Err(Error::invalid(format!("resampled rectangle {r:?} leaves the target grid")));
        }
        Ok(r)
    }
}

/// Per-pixel dimensionless absorption and sound speed (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct MediumMap {
    grid: Grid,
    tau: Vec<f64>,
    c: Vec<f64>,
}

impl MediumMap {
    pub fn new(grid: Grid, tau: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if tau.len() != grid.len() || c.len() != grid.len() {
            return Err(Error::invalid(format!(
                "medium fields must have {} entries, got tau={} c={}",
                grid.len(),
                tau.len(),
                c.len()
            )));
        }
        if let Some(t) = tau.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return Err(Error::invalid(format!("absorption must be finite and non-negative, found {t}")));
        }
        if let Some(v) = c.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("sound speed must be positive, found {v}")));
        }
        Ok(MediumMap { grid, tau, c })
    }

    pub fn homogeneous(grid: Grid, tau: f64, c: f64) -> Result<Self> {
        MediumMap::new(grid, vec![tau; grid.len()], vec![c; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn c_min(&self) -> f64 {
        self.c.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Some((tau, c))` if both fields are spatially constant.
    pub fn constant_value(&self) -> Option<(f64, f64)> {
        let t0 = self.tau[0];
        let c0 = self.c[0];
        let flat = self.tau.iter().all(|&t| t == t0) && self.c.iter().all(|&v| v == c0);
        flat.then_some((t0, c0))
    }

    /// A copy with absorption `tau + delta`.
    pub fn with_tau_offset(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.tau.len() {
            return Err(Error::invalid("perturbation length does not match grid"));
        }
        let tau = self.tau.iter().zip(delta).map(|(t, d)| t + d).collect();
        MediumMap::new(self.grid, tau, self.c.clone())
    }

    /// Embeds the medium in a grid grown by `pad` pixels per side; the new
    /// border pixels take the given constant values.
    pub fn padded(&self, pad: usize, fill_tau: f64, fill_c: f64) -> Result<Self> {
        if pad == 0 {
            return Ok(self.clone());
        }
        let big = self.grid.padded(pad);
        let mut tau = vec![fill_tau; big.len()];
        let mut c = vec![fill_c; big.len()];
        for j in 0..self.grid.ly {
            let src = j * self.grid.lx;
            let dst = big.index(pad, j + pad);
            tau[dst..dst + self.grid.lx].copy_from_slice(&self.tau[src..src + self.grid.lx]);
            c[dst..dst + self.grid.lx].copy_from_slice(&self.c[src..src + self.grid.lx]);
        }
        MediumMap::new(big, tau, c)
    }
}

/// Shape of a phantom inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InclusionShape {
    Rect(PixelRect),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: InclusionShape,
    pub tau: f64,
}

/// Piecewise-constant absorption phantom. Later inclusions override earlier
/// ones where they overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub background_tau: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

impl PhantomSpec {
    pub fn homogeneous(background_tau: f64) -> Self {
        PhantomSpec { background_tau, inclusions: Vec::new() }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.background_tau >= 0.0) {
            return Err(Error::invalid(format!("background absorption {} is negative", self.background_tau)));
        }
        for inc in &self.inclusions {
            if !(inc.tau >= 0.0) {
                return Err(Error::invalid(format!("inclusion absorption {} is negative", inc.tau)));
            }
            match inc.shape {
                InclusionShape::Rect(r) if !r.fits(grid) => {
                    return Err(Error::invalid(format!(
                        "inclusion {r:?} outside {}x{} grid",
                        grid.lx, grid.ly
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Re-expresses every inclusion on `to`, preserving physical location.
    pub fn resample(&self, from: &Grid, to: &Grid) -> Result<PhantomSpec> {
        let inclusions = self
            .inclusions
            .iter()
            .map(|inc| {
                let InclusionShape::Rect(r) = inc.shape;
                Ok(Inclusion { shape: InclusionShape::Rect(r.resample(from, to)?), tau: inc.tau })
            })
            .collect::<Result<_>>()?;
        Ok(PhantomSpec { background_tau: self.background_tau, inclusions })
    }
}

pub fn build_phantom(grid: &Grid, spec: &PhantomSpec, c_const: f64) -> Result<MediumMap> {
    spec.validate(grid)?;
    let mut tau = vec![spec.background_tau; grid.len()];
    for inc in &spec.inclusions {
        let InclusionShape::Rect(r) = inc.shape;
        for j in r.j0..=r.j1 {
            for i in r.i0..=r.i1 {
                tau[grid.index(i, j)] = inc.tau;
            }
        }
    }
    MediumMap::new(*grid, tau, vec![c_const; grid.len()])
}

fn check_conversion_args(c: f64, omega: f64) -> Result<()> {
    if !(c > 0.0) || !(omega > 0.0) {
        return Err(Error::invalid(format!("sound speed and angular frequency must be positive (c={c}, omega={omega})")));
    }
    Ok(())
}

/// Dimensionless absorption to attenuation in dB/cm at angular frequency `omega`.
pub fn tau_to_alpha(tau: f64, c: f64, omega: f64) -> Result<f64> {
    check_conversion_args(c, omega)?;
    Ok(tau * (omega / c) * DB_PER_NEPER / 100.0)
}

/// Attenuation in dB/cm to dimensionless absorption.
pub fn alpha_to_tau(alpha: f64, c: f64, omega: f64) -> Result<f64> {
    check_conversion_args(c, omega)?;
    Ok(100.0 / DB_PER_NEPER * (c / omega) * alpha)
}
