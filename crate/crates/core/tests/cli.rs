use std::path::Path;
use std::process::Command;

use ustomo::config::ExperimentConfig;

fn ustomo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ustomo")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_demo(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut cfg = ExperimentConfig { dtheta_deg: 60.0, out: dir.join("out"), ..ExperimentConfig::demo() };
    edit(&mut cfg);
    let path = dir.join("demo.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.display().to_string()
}

#[test]
fn contrast_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_demo(dir.path(), |_| {});
    let out = ustomo(&["contrast", "--config", &cfg, "--noise", "0.01", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("label,n_angles,n_freqs"));
    assert_eq!(stdout.lines().count(), 2);
    let rows = ustomo::contrast::read_contrast_table(&std::fs::read_to_string(dir.path().join("out/contrast.csv")).unwrap()).unwrap();
    assert_eq!(rows[0].noise_pct, 1.0);

    let out = ustomo(&["plot", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("out/figures/reconstruction.png").exists());
}

#[test]
fn simulate_and_jacobian_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_demo(dir.path(), |_| {});
    assert_eq!(ustomo(&["simulate", "--config", &cfg]).status.code(), Some(0));
    assert!(dir.path().join("out/data_noisy.csv").exists());
    assert!(!dir.path().join("out/model_data.csv").exists());
    assert_eq!(ustomo(&["jacobian", "--config", &cfg, "--sensor-type", "pi"]).status.code(), Some(0));
    assert!(dir.path().join("out/jacobian.bin").exists());
    let m = ustomo::experiment::Manifest::load(dir.path().join("out")).unwrap();
    assert_eq!(m.config.sensor_type, ustomo::acquisition::SensorType::Pi);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml").display().to_string();
    assert_eq!(ustomo(&["simulate", "--config", &missing]).status.code(), Some(2));
    assert_eq!(ustomo(&["simulate", "--noise", "3"]).status.code(), Some(2));
    assert_eq!(ustomo(&["simulate", "--eta", "sometimes"]).status.code(), Some(2));
    assert_eq!(ustomo(&["simulate", "--scale", "third"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "grid = 3\n").unwrap();
    assert_eq!(ustomo(&["simulate", "--config", &bad.display().to_string()]).status.code(), Some(2));

    let cfg = write_demo(dir.path(), |c| c.freqs_mhz = vec![12.0]);
    assert_eq!(ustomo(&["simulate", "--config", &cfg]).status.code(), Some(3));

    // one of two combinations cannot be resolved
    let axes = dir.path().join("axes.toml");
    std::fs::write(&axes, "freqs_mhz = [[1.0], [12.0]]\n").unwrap();
    let cfg = write_demo(dir.path(), |_| {});
    let out = ustomo(&["sweep", "--config", &cfg, "--axes", &axes.display().to_string()]);
    assert_eq!(out.status.code(), Some(4));
    let rows = ustomo::contrast::read_contrast_table(&std::fs::read_to_string(dir.path().join("out/sweep_contrast.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].c_max.is_finite() && rows[1].c_max.is_nan());
    assert!(std::fs::read_to_string(dir.path().join("out/sweep_failures.json")).unwrap().contains("points per wavelength"));
}
