//! Sensitivity of one measurement to the absorption map, checked against
//! finite differences of the forward model, and saved as a field file.
//!
//!     cargo run --release --example sensitivity_kernel -- [out_dir]

use ustomo::acquisition::simulate_measurements;
use ustomo::config::ExperimentConfig;
use ustomo::jacobian::{assemble_jacobian, Reuse};

fn main() -> ustomo::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/sensitivity_kernel".into());
    std::fs::create_dir_all(&out).map_err(|e| ustomo::Error::io(&out, e))?;
    let mut cfg = ExperimentConfig::demo();
    cfg.freqs_mhz = vec![1.0];
    cfg.dtheta_deg = 90.0;
    let opts = cfg.simulation_options();
    for sensor_type in ["ps", "pi"] {
        cfg.sensor_type = sensor_type.parse().unwrap();
        let proto = cfg.protocol()?;
        let tau0 = cfg.model_medium()?;
        let j = assemble_jacobian(&tau0, &proto, &opts, Reuse::Never)?;
        let grid = *tau0.grid();

        let row = j.row_at((0, 0, 2, 3));
        let path = format!("{out}/row_{sensor_type}.field");
        ustomo::io::write_complex_field(&path, &grid, row.values.values(), "sensitivity")?;

        // a smooth blob near the centre as the perturbation direction
        let h: Vec<f64> = (0..grid.len())
            .map(|k| {
                let (i, jj) = grid.coords(k);
                let p = grid.position(i, jj);
                (-(p[0] * p[0] + (p[1] - 1.0).powi(2)) / 8.0).exp()
            })
            .collect();
        let jh = j.apply(&h);
        let y0 = simulate_measurements(&tau0, &proto, &opts)?;
        println!("{sensor_type}: row saved to {path}");
        for eps in [1e-3, 1e-4, 1e-5, 1e-6] {
            let dh: Vec<f64> = h.iter().map(|v| eps * v).collect();
            let y1 = simulate_measurements(&tau0.with_tau_offset(&dh)?, &proto, &opts)?;
            let (mut num, mut den) = (0.0, 0.0);
            for ((a, b), d) in y1.values.iter().zip(&y0.values).zip(&jh) {
                num += ((a - b) / eps - d).norm_sqr();
                den += d.norm_sqr();
            }
            println!("    eps {eps:.0e}: relative difference {:.3e}", (num / den).sqrt());
        }
    }
    Ok(())
}
