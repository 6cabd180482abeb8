use std::f64::consts::PI;

use num_complex::Complex64;
use ustomo::grid::{tau_to_alpha, Grid, MediumMap};
use ustomo::helmholtz::analytic::green_2d;
use ustomo::helmholtz::{assemble_operator, ComplexField, HelmholtzSolver, PmlSpec, SolverKind, SourceStencil};

fn point_field(n: usize, dx: f64, tau: f64, f_hz: f64, pml: PmlSpec) -> (Grid, ComplexField) {
    let grid = Grid::centered(n, n, dx, dx).unwrap();
    let medium = MediumMap::homogeneous(grid, tau, 1540.0).unwrap();
    let solver = HelmholtzSolver::new(assemble_operator(&grid, &medium, 2.0 * PI * f_hz, pml).unwrap(), SolverKind::Direct).unwrap();
    let src = ComplexField::point_source(&grid, [0.0, 0.0], 1.0, SourceStencil::Bilinear).unwrap();
    (grid, solver.solve_forward(&src).unwrap())
}

fn ring<'a>(grid: &'a Grid, r0: f64, r1: f64) -> impl Iterator<Item = (usize, f64)> + 'a {
    (0..grid.len()).filter_map(move |k| {
        let (i, j) = grid.coords(k);
        let p = grid.position(i, j);
        let r = p[0].hypot(p[1]);
        (r >= r0 && r <= r1).then_some((k, r))
    })
}

#[test]
fn well_resolved_near_field_matches_hankel_solution() {
    // 39 points per wavelength, one to one and a half wavelengths out
    let f = 0.5e6;
    let (grid, u) = point_field(192, 0.078125, 0.0, f, PmlSpec { width_px: 32, strength: 1.0 });
    let k = 2.0 * PI * f / 1540.0;
    let lambda = 1540.0 / f * 1e3;
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, r) in ring(&grid, lambda, 1.5 * lambda) {
        let g = green_2d(k, r * 1e-3, 1.0);
        num += (u.values()[idx] - g).norm_sqr();
        den += g.norm_sqr();
    }
    let err = (num / den).sqrt();
    println!("relative L2 error {err:.4}");
    assert!(err < 0.05, "{err}");
}

#[test]
fn error_shrinks_with_refinement() {
    let f = 0.5e6;
    let lambda = 1540.0 / f * 1e3;
    let k = 2.0 * PI * f / 1540.0;
    let errs: Vec<f64> = [(48, 0.3125, 8), (96, 0.15625, 16)]
        .iter()
        .map(|&(n, dx, pml)| {
            let (grid, u) = point_field(n, dx, 0.0, f, PmlSpec { width_px: pml, strength: 1.0 });
            let (mut num, mut den) = (0.0, 0.0);
            for (idx, r) in ring(&grid, lambda, 1.5 * lambda) {
                let g = green_2d(k, r * 1e-3, 1.0);
                num += (u.values()[idx] - g).norm_sqr();
                den += g.norm_sqr();
            }
            (num / den).sqrt()
        })
        .collect();
    println!("errors {errs:?}");
    assert!(errs[1] < 0.5 * errs[0], "{errs:?}");
}

#[test]
fn absorption_decay_follows_attenuation_coefficient() {
    let f = 1e6;
    let pml = PmlSpec::default();
    let (grid, lossy) = point_field(160, 0.3125, 0.003, f, pml);
    let (_, lossless) = point_field(160, 0.3125, 0.0, f, pml);
    let mean_ratio = |r0: f64, r1: f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for (k, _) in ring(&grid, r0, r1) {
            a += lossy.values()[k].norm();
            b += lossless.values()[k].norm();
        }
        a / b
    };
    // decay between 5 mm and 20 mm removes the near-source spreading
    let measured = mean_ratio(19.5, 20.5) / mean_ratio(4.5, 5.5);
    let alpha_db_cm = tau_to_alpha(0.003, 1540.0, 2.0 * PI * f).unwrap();
    let nepers_per_mm = alpha_db_cm / (20.0 * std::f64::consts::LOG10_E) / 10.0;
    let expected = (-nepers_per_mm * 15.0).exp();
    println!("measured {measured:.4}, expected {expected:.4}");
    assert!((measured / expected - 1.0).abs() < 0.1);
}

#[test]
fn absorbing_layer_reflection_is_small() {
    // the same source on a grid twice as wide, with a thick layer, is the
    // reference for the interior of the small grid
    let f = 2e6;
    let (small, u) = point_field(64, 0.15625, 0.0, f, PmlSpec::default());
    let (_, big) = point_field(128, 0.15625, 0.0, f, PmlSpec { width_px: 30, strength: 3.0 });
    let pml = PmlSpec::default();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..small.len() {
        let (i, j) = small.coords(k);
        if pml.in_layer(&small, i, j) {
            continue;
        }
        let r = big.at(i + 32, j + 32);
        num += (u.values()[k] - r).norm_sqr();
        den += r.norm_sqr();
    }
    let refl = (num / den).sqrt();
    println!("interior difference {refl:.4}");
    assert!(refl <= 0.05);
}

#[test]
fn fields_superpose() {
    let grid = Grid::centered(40, 40, 0.3125, 0.3125).unwrap();
    let medium = MediumMap::homogeneous(grid, 0.003, 1540.0).unwrap();
    let solver = HelmholtzSolver::new(assemble_operator(&grid, &medium, 2.0 * PI * 1e6, PmlSpec::default()).unwrap(), SolverKind::Direct).unwrap();
    let a = ComplexField::point_source(&grid, [1.0, -2.0], 1.0, SourceStencil::Bilinear).unwrap();
    let b = ComplexField::point_source(&grid, [-3.0, 0.5], 1.0, SourceStencil::Bilinear).unwrap();
    let w = Complex64::new(0.3, -1.2);
    let sum = ComplexField::new(grid, a.values().iter().zip(b.values()).map(|(x, y)| x + w * y).collect(), a.role()).unwrap();
    let (ua, ub, us) = (solver.solve_forward(&a).unwrap(), solver.solve_forward(&b).unwrap(), solver.solve_forward(&sum).unwrap());
    let err = us.values().iter().zip(ua.values().iter().zip(ub.values())).map(|(s, (x, y))| (s - x - w * y).norm()).fold(0.0, f64::max);
    assert!(err < 1e-10 * us.norm());
}
