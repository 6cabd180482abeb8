//! The simulation domain: the image grid embedded in a larger grid that
//! holds every rotated source and sensor plus the absorbing layer.
//!
//! Absorption is only reconstructed on the image grid. The padding ring
//! carries a fixed background medium.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, MediumMap};
use crate::helmholtz::{PmlSpec, ResolutionCheck, SolverKind, SourceStencil};

/// How many pixels to add around the image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Smallest ring that keeps all array elements clear of the layer.
    #[default]
    Auto,
    Fixed(usize),
}

/// Numerical settings shared by the forward model and the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub pml: PmlSpec,
    pub padding: Padding,
    /// Minimum distance in pixels between any array element and the inner
    /// edge of the absorbing layer.
    pub margin_px: usize,
    pub solver: SolverKind,
    pub resolution: ResolutionCheck,
    pub source_stencil: SourceStencil,
    /// Absorption and sound speed of the padding ring. `None` takes the value
    /// of image pixel `(0, 0)`.
    pub fill: Option<(f64, f64)>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            pml: PmlSpec::default(),
            padding: Padding::Auto,
            margin_px: 2,
            solver: SolverKind::Direct,
            resolution: ResolutionCheck::Strict,
            source_stencil: SourceStencil::Bilinear,
            fill: None,
        }
    }
}

/// Image grid plus the padded grid the wave equation is solved on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub image: Grid,
    pub sim: Grid,
    pub pad: usize,
}

impl Domain {
    /// Chooses the padding so that every point in `points` (mm) sits at least
    /// `margin_px` pixels inside the non-absorbing interior. The image grid
    /// itself always stays clear of the absorbing layer.
    pub fn fit(image: &Grid, points: &[[f64; 2]], options: &SimulationOptions) -> Result<Domain> {
        let w = options.pml.width_px as f64 + options.margin_px as f64;
        let mut need = 0.0f64;
        for p in points {
            let f = image.to_pixel(*p);
            need = need
                .max(w - f[0])
                .max(w - f[1])
                .max(f[0] - (image.lx as f64 - 1.0 - w))
                .max(f[1] - (image.ly as f64 - 1.0 - w));
        }
        let auto = ((need - 1e-9).ceil().max(0.0) as usize).max(options.pml.width_px);
        let pad = match options.padding {
            Padding::Auto => auto,
            Padding::Fixed(p) => {
                if p < auto {
                    return Err(Error::invalid(format!(
                        "fixed padding of {p} px is too small; the array needs {auto} px"
                    )));
                }
                p
            }
        };
        let sim = image.padded(pad);
        options.pml.validate(&sim)?;
        Ok(Domain { image: *image, sim, pad })
    }

    /// Embeds an image-grid medium into the simulation grid.
    pub fn embed_medium(&self, medium: &MediumMap, options: &SimulationOptions) -> Result<MediumMap> {
        if !self.image.same_shape(medium.grid()) {
            return Err(Error::invalid("medium does not live on the image grid"));
        }
        let (t, c) = options.fill.unwrap_or((medium.tau()[0], medium.c()[0]));
        medium.padded(self.pad, t, c)
    }

    /// Simulation-grid index of image pixel `k`.
    #[inline]
    pub fn sim_index(&self, k: usize) -> usize {
        let (i, j) = self.image.coords(k);
        self.sim.index(i + self.pad, j + self.pad)
    }

    /// Copies the image window out of a simulation-grid array.
    pub fn crop<T: Copy>(&self, sim_values: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.image.len());
        for j in 0..self.image.ly {
            let start = self.sim.index(self.pad, j + self.pad);
            out.extend_from_slice(&sim_values[start..start + self.image.lx]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_padding_covers_points() {
        let g = Grid::centered(64, 64, 0.5, 0.5).unwrap();
        let opts = SimulationOptions::default();
        let inside = Domain::fit(&g, &[[0.0, 0.0], [5.0, -5.0]], &opts).unwrap();
        assert_eq!(inside.pad, opts.pml.width_px);
        let outside = Domain::fit(&g, &[[20.0, 0.0]], &opts).unwrap();
        let f = outside.sim.to_pixel([20.0, 0.0]);
        assert!(f[0] <= outside.sim.lx as f64 - 1.0 - 7.0 + 1e-9);
        assert!(outside.pad > 0);
        assert_eq!(outside.sim.center(), g.center());
        let fixed = SimulationOptions { padding: Padding::Fixed(1), ..opts };
        assert!(Domain::fit(&g, &[[20.0, 0.0]], &fixed).is_err());
    }

    #[test]
    fn crop_inverts_embedding() {
        let g = Grid::centered(5, 4, 1.0, 1.0).unwrap();
        let tau: Vec<f64> = (0..20).map(|k| k as f64 * 0.01).collect();
        let m = MediumMap::new(g, tau.clone(), vec![1500.0; 20]).unwrap();
        let opts = SimulationOptions { fill: Some((0.5, 1400.0)), pml: PmlSpec::none(), ..Default::default() };
        let d = Domain { image: g, sim: g.padded(3), pad: 3 };
        let big = d.embed_medium(&m, &opts).unwrap();
        assert_eq!(d.crop(big.tau()), tau);
        for k in 0..g.len() {
            assert_eq!(big.tau()[d.sim_index(k)], tau[k]);
        }
        assert_eq!(big.tau()[0], 0.5);
    }
}
