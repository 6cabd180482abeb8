//! Writes and reads back the file formats: fields, data vectors, the
//! Jacobian in both precisions with single-row access, and the config.
//!
//!     cargo run --release --example artifacts_io -- [out_dir]

use ustomo::acquisition::{simulate_measurements, DataVector};
use ustomo::config::ExperimentConfig;
use ustomo::io::{read_real_field, read_text, write_real_field};
use ustomo::jacobian::{assemble_jacobian, JacobianFile, JacobianMatrix, Precision, Reuse};

fn main() -> ustomo::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/artifacts_io".into());
    std::fs::create_dir_all(&out).map_err(|e| ustomo::Error::io(&out, e))?;
    let mut cfg = ExperimentConfig::demo();
    cfg.freqs_mhz = vec![1.0];
    cfg.dtheta_deg = 90.0;

    let cfg_path = format!("{out}/config.toml");
    ustomo::io::atomic_write(&cfg_path, cfg.to_toml().as_bytes())?;
    assert_eq!(ExperimentConfig::load(&cfg_path)?, cfg);
    println!("config -> {cfg_path}");

    let medium = cfg.true_medium()?;
    let field_path = format!("{out}/truth.field");
    write_real_field(&field_path, medium.grid(), medium.tau(), "tau")?;
    let (grid, tau) = read_real_field(&field_path)?;
    println!("field {}x{} read back exactly: {}", grid.lx, grid.ly, tau == medium.tau());

    let proto = cfg.protocol()?;
    let data = simulate_measurements(&medium, &proto, &cfg.simulation_options())?;
    let data_path = format!("{out}/data.csv");
    ustomo::io::atomic_write(&data_path, data.to_csv().as_bytes())?;
    let back = DataVector::from_csv(&read_text(&data_path)?, cfg.sensor_type)?;
    println!("data {} rows read back exactly: {}", back.len(), back == data);

    let j = assemble_jacobian(&cfg.model_medium()?, &proto, &cfg.simulation_options(), Reuse::Auto)?;
    for (precision, name) in [(Precision::F64, "jacobian_f64.bin"), (Precision::F32, "jacobian_f32.bin")] {
        let path = format!("{out}/{name}");
        j.save(&path, precision)?;
        let loaded = JacobianMatrix::load(&path)?;
        let mut file = JacobianFile::open(&path)?;
        let row = file.read_row(5)?;
        let err = row.iter().zip(j.row(5).values.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let size = std::fs::metadata(&path).map_err(|e| ustomo::Error::io(&path, e))?.len();
        println!("{name}: {} bytes, shape {:?}, row 5 max error {err:.2e}", size, loaded.shape());
    }
    Ok(())
}
