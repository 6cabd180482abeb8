//! Edge spread function, error-function fit, MTF width and RMS contrast on
//! a synthetic blurred square with noise.
//!
//!     cargo run --example edge_contrast

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;
use ustomo::contrast::{analyze, mtf_curve, EdgeRoi, Weighting};
use ustomo::grid::{Grid, PixelRect};

fn main() -> ustomo::Result<()> {
    let grid = Grid::centered(128, 128, 0.3125, 0.3125)?;
    let target = PixelRect::new(49, 74, 74, 99);
    let roi = EdgeRoi::upper_edge(&target, 25, 20)?;
    let sigma = 0.6;
    let edge_y = grid.position(0, target.j1)[1] + 0.5 * grid.dy;
    let noise = Normal::new(0.0, 2e-5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            let y = grid.position(i, j)[1];
            0.003 * 0.5 * (1.0 - erf((y - edge_y) / (2f64.sqrt() * sigma))) + noise.sample(&mut rng)
        })
        .collect();
    let a = analyze(&field, &grid, &roi, Weighting::Max)?;
    println!("fit: B {:.3e}  mu {:.4} mm  sigma {:.4} mm (true {sigma})  r {:.3e}", a.fit.b, a.fit.mu, a.fit.sigma, a.fit.r);
    println!("fit residual rms {:.2e}, flags {:?}", a.fit.residual_rms, a.fit.flags);
    println!("MTF FWHM {:.4} mm^-1, C_max {:.4}", a.fwhm, a.c_max);
    for k in [0.0, 0.25, 0.5, 1.0] {
        println!("MTF({k} mm^-1) = {:.4}", mtf_curve(a.fit.sigma, k));
    }
    Ok(())
}
