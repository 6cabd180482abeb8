use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// What a complex field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Pressure,
    Adjoint,
    Source,
    Generic,
}

/// How a point source is distributed onto grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceStencil {
    /// Whole delta at the nearest node.
    Nearest,
    /// Delta split over the four surrounding nodes with bilinear weights.
    #[default]
    Bilinear,
}

/// Complex scalar field over a grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
    role: FieldRole,
}

impl ComplexField {
    pub fn zeros(grid: Grid, role: FieldRole) -> Self {
        ComplexField { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()], role }
    }

    pub fn new(grid: Grid, values: Vec<Complex64>, role: FieldRole) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(ComplexField { grid, values, role })
    }

    pub fn from_fn(grid: Grid, role: FieldRole, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ly {
            for i in 0..grid.lx {
                values.push(f(i, j));
            }
        }
        ComplexField { grid, values, role }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self, other> = sum conj(self) * other`, conjugate-linear in the
    /// first argument.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        inner(&self.values, &other.values)
    }

    pub fn scaled(&self, s: Complex64) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
            role: self.role,
        }
    }

    pub fn conj(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
            role: self.role,
        }
    }

    /// Discrete delta of strength `amplitude` at `pos` (mm), scaled by the
    /// inverse cell area so it integrates to `amplitude`. Cell area is taken in
    /// m², matching the operator units.
    pub fn point_source(grid: &Grid, pos: [f64; 2], amplitude: f64, stencil: SourceStencil) -> Result<ComplexField> {
        let mut field = ComplexField::zeros(*grid, FieldRole::Source);
        let density = amplitude / (grid.dx * 1e-3 * grid.dy * 1e-3);
        let f = grid.to_pixel(pos);
        let (lx, ly) = (grid.lx as f64, grid.ly as f64);
        if !(f[0] >= -0.5 && f[0] <= lx - 0.5 && f[1] >= -0.5 && f[1] <= ly - 0.5) {
            return Err(Error::invalid(format!("point source at ({:.4}, {:.4}) mm lies outside the grid", pos[0], pos[1])));
        }
        match stencil {
            SourceStencil::Nearest => {
                let i = (f[0].round() as usize).min(grid.lx - 1);
                let j = (f[1].round() as usize).min(grid.ly - 1);
                field.values[grid.index(i, j)] = Complex64::new(density, 0.0);
            }
            SourceStencil::Bilinear => {
                for (k, w) in bilinear_stencil(grid, f) {
                    field.values[k] += Complex64::new(density * w, 0.0);
                }
            }
        }
        Ok(field)
    }
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Bilinear interpolation weights at fractional pixel position `f`.
/// Points within a pixel-width of the border are clamped to the border
/// cell; weights always sum to one.
pub(crate) fn bilinear_stencil(grid: &Grid, f: [f64; 2]) -> impl Iterator<Item = (usize, f64)> {
    let clamp = |v: f64, n: usize| -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let v = v.clamp(0.0, (n - 1) as f64);
        let base = (v.floor() as usize).min(n - 2);
        (base, v - base as f64)
    };
    let (i0, tx) = clamp(f[0], grid.lx);
    let (j0, ty) = clamp(f[1], grid.ly);
    let i1 = (i0 + 1).min(grid.lx - 1);
    let j1 = (j0 + 1).min(grid.ly - 1);
    let g = *grid;
    [
        (g.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
        (g.index(i1, j0), tx * (1.0 - ty)),
        (g.index(i0, j1), (1.0 - tx) * ty),
        (g.index(i1, j1), tx * ty),
    ]
    .into_iter()
    .filter(|(_, w)| *w != 0.0)
}
