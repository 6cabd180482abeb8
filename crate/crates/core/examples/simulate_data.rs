//! Simulates phase-sensitive and phase-insensitive measurements of the demo
//! phantom, adds noise and writes the data files.
//!
//!     cargo run --release --example simulate_data -- [out_dir]

use ustomo::acquisition::{add_noise, simulate_variants, SensorType, SensorVariant};
use ustomo::config::ExperimentConfig;

fn main() -> ustomo::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/simulate_data".into());
    std::fs::create_dir_all(&out).map_err(|e| ustomo::Error::io(&out, e))?;
    let cfg = ExperimentConfig::demo();
    let medium = cfg.true_medium()?;
    let proto = cfg.protocol()?;
    let variants = [
        SensorVariant { width: cfg.sensor_width_mm, sensor_type: SensorType::Ps },
        SensorVariant { width: cfg.sensor_width_mm, sensor_type: SensorType::Pi },
    ];
    let data = simulate_variants(&medium, &proto, &variants, &cfg.simulation_options())?;
    for d in &data {
        let noisy = add_noise(d, 0.01, cfg.seed)?;
        let name = format!("{out}/data_{}.csv", d.sensor_type);
        ustomo::io::atomic_write(&name, noisy.to_csv().as_bytes())?;
        let first = d.values[0];
        println!("{}: {} values, |y| = {:.4e}, y[0] = {:.4e}{:+.4e}i, noise moved it by {:.3e} -> {name}", d.sensor_type, d.len(), d.norm(), first.re, first.im, noisy.residual(d)?.norm());
    }
    let pi_imag = data[1].values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    println!("largest imaginary part of phase-insensitive data: {pi_imag:e}");
    Ok(())
}
