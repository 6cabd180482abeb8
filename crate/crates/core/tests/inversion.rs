use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ustomo::acquisition::{simulate_measurements, AcquisitionProtocol, ArrayGeometry, DataVector, SensorType};
use ustomo::config::ExperimentConfig;
use ustomo::domain::SimulationOptions;
use ustomo::grid::{Grid, MediumMap};
use ustomo::inversion::{
    build_augmented, gradient_ops, invert, lcurve_select, lsqr_solve, reconstruct, EtaChoice, InversionSettings, LsqrSettings,
};
use ustomo::jacobian::{assemble_jacobian, JacobianMatrix, Reuse};

fn tiny(sensor_type: SensorType) -> (Arc<JacobianMatrix>, DataVector) {
    let grid = Grid::centered(12, 12, 0.5, 0.5).unwrap();
    let tau0 = MediumMap::homogeneous(grid, 0.003, 1540.0).unwrap();
    let proto = AcquisitionProtocol {
        geometry: ArrayGeometry { n_sources: 3, n_sensors: 3, array_length: 4.0, separation: 5.0, sensor_width: 0.5, center: [0.0, 0.0] },
        frequencies_hz: vec![0.8e6, 1.0e6],
        angles_deg: vec![0.0, 60.0, 120.0],
        sensor_type,
        source_amplitude: 1.0,
    };
    let j = assemble_jacobian(&tau0, &proto, &SimulationOptions::default(), Reuse::Never).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let values = (0..j.rows())
        .map(|_| match sensor_type {
            SensorType::Ps => Complex64::new(g(), g()),
            SensorType::Pi => Complex64::new(g(), 0.0),
        })
        .collect();
    let r = DataVector::new(j.layout().clone(), sensor_type, values).unwrap();
    (Arc::new(j), r)
}

/// Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

#[test]
fn real_split_matches_complex_normal_equations() {
    for st in [SensorType::Ps, SensorType::Pi] {
        let (j, r) = tiny(st);
        let eta = 1e-3 * ustomo::inversion::eta_anchor(&j);
        let n = j.cols();
        // Re(J^H J) + eta D^T D and Re(J^H r), in complex arithmetic
        let rows: Vec<Vec<Complex64>> = (0..j.rows()).map(|k| j.row(k).values.values().to_vec()).collect();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for (row, rk) in rows.iter().zip(&r.values) {
            for p in 0..n {
                b[p] += (row[p].conj() * rk).re;
                for q in 0..n {
                    a[p][q] += (row[p].conj() * row[q]).re;
                }
            }
        }
        let ops = gradient_ops(j.grid());
        for axis in 0..2 {
            let mut d = vec![vec![0.0; n]; n];
            for (i, c, v) in ops.triplets(axis) {
                d[i][c] += v;
            }
            for p in 0..n {
                for q in 0..n {
                    a[p][q] += eta * (0..n).map(|k| d[k][p] * d[k][q]).sum::<f64>();
                }
            }
        }
        let oracle = dense_solve(a, b);
        let rec = lsqr_solve(&build_augmented(j.clone(), &r, eta).unwrap(), LsqrSettings { tol: 1e-14, max_iter: 20000 }).unwrap();
        let err = rec.h_raw.iter().zip(&oracle).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            / oracle.iter().map(|y| y * y).sum::<f64>().sqrt();
        assert!(err < 1e-8, "{st}: {err}");
    }
}

#[test]
fn tikhonov_monotonicity() {
    let (j, r) = tiny(SensorType::Ps);
    let anchor = ustomo::inversion::eta_anchor(&j);
    let grid: Vec<f64> = (0..10).map(|k| anchor * 10f64.powf(-4.0 + 0.6 * k as f64)).collect();
    let (curve, recs) = lcurve_select(j, &r, &grid, LsqrSettings { tol: 1e-12, max_iter: 20000 }).unwrap();
    let norms: Vec<f64> = recs.iter().map(|r| r.h_raw.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for w in norms.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{norms:?}");
    }
    for w in curve.points.windows(2) {
        assert!(w[1].residual_norm >= w[0].residual_norm * (1.0 - 1e-9));
        assert!(w[1].seminorm <= w[0].seminorm * (1.0 + 1e-9));
    }
    assert!(grid.contains(&curve.eta_star));
}

#[test]
fn degenerate_eta_grids_are_rejected() {
    let (j, r) = tiny(SensorType::Ps);
    let s = LsqrSettings::default();
    assert!(lcurve_select(j.clone(), &r, &[1e-6, 1e-6, 1e-6], s).is_err());
    assert!(lcurve_select(j, &r, &[1e-6, 1e-5], s).is_err());
}

#[test]
fn zero_residual_gives_zero_image() {
    let (j, r) = tiny(SensorType::Pi);
    let zero = DataVector { values: vec![Complex64::new(0.0, 0.0); r.len()], ..r };
    let (rec, _) = invert(j, &zero, &InversionSettings::default()).unwrap();
    assert!(rec.h_hat.iter().all(|v| *v == 0.0));
    assert_eq!(rec.iterations, 0);
}

#[test]
fn doubling_contrast_doubles_the_recovered_mean() {
    let base = ExperimentConfig { dtheta_deg: 30.0, ..ExperimentConfig::demo() };
    let settings = InversionSettings { eta: EtaChoice::Anchor(0.01), ..base.inversion_settings() };
    let opts = base.simulation_options();
    let proto = base.protocol().unwrap();
    let target = base.target().unwrap();
    let means: Vec<f64> = [0.006, 0.009]
        .iter()
        .map(|&t| {
            let cfg = ExperimentConfig { target_tau: t, ..base.clone() };
            let g = simulate_measurements(&cfg.true_medium().unwrap(), &proto, &opts).unwrap();
            let run = reconstruct(&g, &cfg.model_medium().unwrap(), &proto, &opts, &settings).unwrap();
            let rec = run.reconstruction;
            let inside: Vec<f64> = (0..rec.grid.len())
                .filter(|&k| {
                    let (i, j) = rec.grid.coords(k);
                    target.contains(i, j)
                })
                .map(|k| rec.h_hat[k])
                .collect();
            inside.iter().sum::<f64>() / inside.len() as f64
        })
        .collect();
    let ratio = means[1] / means[0];
    assert!((ratio - 2.0).abs() <= 0.2, "{means:?}");
}
