//! Point source in a homogeneous lossless medium compared with the analytic
//! outgoing Green's function. Errors are relative L2 over the annulus from
//! two wavelengths out to ten wavelengths, and out to the absorbing layer.
//!
//!     cargo run --release --example forward_point_source

use std::f64::consts::PI;
use std::time::Instant;

use ustomo::grid::{Grid, MediumMap};
use ustomo::helmholtz::analytic::green_2d;
use ustomo::helmholtz::{assemble_operator, ComplexField, HelmholtzSolver, PmlSpec, SolverKind, SourceStencil};

fn annulus_error(n: usize, dx: f64, f_hz: f64) -> ustomo::Result<(f64, f64, f64)> {
    let c = 1540.0;
    let grid = Grid::centered(n, n, dx, dx)?;
    let medium = MediumMap::homogeneous(grid, 0.0, c)?;
    let omega = 2.0 * PI * f_hz;
    let pml = PmlSpec::default();
    let t = Instant::now();
    let solver = HelmholtzSolver::new(assemble_operator(&grid, &medium, omega, pml)?, SolverKind::Direct)?;
    let src = ComplexField::point_source(&grid, [0.0, 0.0], 1.0, SourceStencil::Bilinear)?;
    let u = solver.solve_forward(&src)?;
    let secs = t.elapsed().as_secs_f64();

    let k = omega / c;
    let wavelength_mm = c / f_hz * 1e3;
    let r_in = 2.0 * wavelength_mm;
    let r_out = grid.extent().0 / 2.0 - (pml.width_px + 3) as f64 * dx;
    let err = |r_max: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for kk in 0..grid.len() {
            let (i, j) = grid.coords(kk);
            let p = grid.position(i, j);
            let r = p[0].hypot(p[1]);
            if r >= r_in && r <= r_max {
                let g = green_2d(k, r * 1e-3, 1.0);
                num += (u.values()[kk] - g).norm_sqr();
                den += g.norm_sqr();
            }
        }
        (num / den).sqrt()
    };
    Ok((err(r_out.min(10.0 * wavelength_mm)), err(r_out), secs))
}

fn main() -> ustomo::Result<()> {
    println!("{:>5} {:>8} {:>5} {:>6} {:>9} {:>9} {:>6}", "grid", "dx_mm", "MHz", "ppw", "err_10wl", "err_full", "secs");
    for (n, dx, f_mhz) in [(128, 0.3125, 2.0), (256, 0.15625, 2.0), (256, 0.15625, 1.0), (256, 0.15625, 0.5), (256, 0.15625, 0.25)] {
        let ppw = 1540.0 / (f_mhz * 1e6) * 1e3 / dx;
        let (near, full, secs) = annulus_error(n, dx, f_mhz * 1e6)?;
        println!("{n:>5} {dx:>8} {f_mhz:>5} {ppw:>6.2} {near:>9.4} {full:>9.4} {secs:>6.2}");
    }
    Ok(())
}
