//! A small parameter sweep over sensor type, noise and frequency count on
//! the demo configuration, with the summary table and curves.
//!
//!     cargo run --release --example sweep -- [out_dir]

use ustomo::acquisition::SensorType;
use ustomo::config::ExperimentConfig;
use ustomo::contrast::contrast_table;
use ustomo::experiment::{run_sweep, SweepAxes};
use ustomo::plot::plot_outputs;

fn main() -> ustomo::Result<()> {
    let mut cfg = ExperimentConfig::demo();
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/sweep".into()).into();
    let axes = SweepAxes {
        sensor_width_mm: vec![1.0],
        dtheta_deg: vec![30.0],
        freqs_mhz: vec![vec![1.0], vec![1.0, 1.25]],
        sensor_type: vec![SensorType::Ps, SensorType::Pi],
        noise: vec![0.0, 0.01],
    };
    let outcome = run_sweep(&cfg, &axes)?;
    print!("{}", contrast_table(&outcome.rows));
    for f in &outcome.failures {
        println!("failed: {} {}", f.label, f.error);
    }
    let figs = plot_outputs(&cfg.out)?;
    println!("{} figures under {}", figs.written.len(), cfg.out.join("figures").display());
    Ok(())
}
