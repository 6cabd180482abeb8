//! Measures the absorbing layer's reflection by comparing a point-source
//! field against the same source on a much larger grid, over the shared
//! interior. Sweeps the layer strength.
//!
//!     cargo run --release --example pml_reflection -- [freq_mhz]

use std::f64::consts::PI;

use ustomo::grid::{Grid, MediumMap};
use ustomo::helmholtz::{assemble_operator, ComplexField, HelmholtzSolver, PmlSpec, SolverKind, SourceStencil};

fn solve(n: usize, dx: f64, omega: f64, pml: PmlSpec) -> ustomo::Result<(Grid, ComplexField)> {
    let grid = Grid::centered(n, n, dx, dx)?;
    let medium = MediumMap::homogeneous(grid, 0.003, 1540.0)?;
    let solver = HelmholtzSolver::new(assemble_operator(&grid, &medium, omega, pml)?, SolverKind::Direct)?;
    let src = ComplexField::point_source(&grid, [0.3, -0.2], 1.0, SourceStencil::Bilinear)?;
    Ok((grid, solver.solve_forward(&src)?))
}

fn main() -> ustomo::Result<()> {
    let f_mhz: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let omega = 2.0 * PI * f_mhz * 1e6;
    let dx = 0.15625;
    let (small, big) = (64, 128);
    let (_, reference) = solve(big, dx, omega, PmlSpec { width_px: 30, strength: 3.0 })?;
    let off = (big - small) / 2;
    for strength in [0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0] {
        let pml = PmlSpec { width_px: 5, strength };
        let (grid, u) = solve(small, dx, omega, pml)?;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..grid.len() {
            let (i, j) = grid.coords(k);
            if pml.in_layer(&grid, i, j) {
                continue;
            }
            let r = reference.at(i + off, j + off);
            num += (u.values()[k] - r).norm_sqr();
            den += r.norm_sqr();
        }
        println!("strength {strength:>5}: interior relative difference {:.4}", (num / den).sqrt());
    }
    Ok(())
}
