//! Linearized reconstruction of the demo phantom with the regularization
//! weight chosen from an L-curve.
//!
//!     cargo run --release --example inversion_lcurve

use std::sync::Arc;

use ustomo::acquisition::simulate_measurements;
use ustomo::config::ExperimentConfig;
use ustomo::inversion::{eta_anchor, invert, EtaChoice};
use ustomo::jacobian::linearize;
use ustomo::acquisition::SensorVariant;

fn main() -> ustomo::Result<()> {
    let cfg = ExperimentConfig::demo();
    let proto = cfg.protocol()?;
    let opts = cfg.simulation_options();
    let g = simulate_measurements(&cfg.true_medium()?, &proto, &opts)?;
    let tau0 = cfg.model_medium()?;
    let variant = SensorVariant { width: proto.geometry.sensor_width, sensor_type: proto.sensor_type };
    let (y0, j) = linearize(&tau0, &proto, &[variant], &opts, cfg.inversion_settings().reuse)?.remove(0);
    let j = Arc::new(j);
    let residual = g.residual(&y0)?;
    println!("J is {}x{}, anchor eta {:.3e}", j.rows(), j.cols(), eta_anchor(&j));

    let mut settings = cfg.inversion_settings();
    settings.eta = EtaChoice::LCurve { decades: 6.0, count: 9 };
    let (rec, curve) = invert(j, &residual, &settings)?;
    let curve = curve.expect("L-curve requested");
    println!("{:>10} {:>12} {:>12} {:>6}", "eta", "|J h - r|", "|D h|", "iters");
    for p in &curve.points {
        let mark = if p.eta == curve.eta_star { " <" } else { "" };
        println!("{:>10.3e} {:>12.4e} {:>12.4e} {:>6}{mark}", p.eta, p.residual_norm, p.seminorm, p.iterations);
    }

    let target = cfg.target()?;
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
    for (k, v) in rec.h_hat.iter().enumerate() {
        let (i, jj) = rec.grid.coords(k);
        if target.contains(i, jj) {
            inside += v;
            n_in += 1;
        } else {
            outside += v;
            n_out += 1;
        }
    }
    println!(
        "mean recovered tau change: target {:.3e} (true {:.3e}), background {:.3e}",
        inside / n_in as f64,
        cfg.target_tau - cfg.background_tau,
        outside / n_out as f64
    );
    Ok(())
}
