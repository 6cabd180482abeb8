//! Command-line front end. Exit codes: 0 success, 1 other failure,
//! 2 configuration error, 3 solver error, 4 partial sweep failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::error;

use crate::acquisition::SensorType;
use crate::config::{EtaSetting, ExperimentConfig, Scale};
use crate::contrast::contrast_table;
use crate::error::Error;
use crate::experiment::{run_stages, run_sweep, RunOptions, Stage, SweepAxes};
use crate::plot::plot_outputs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ustomo", version, about = "Ultrasound absorption tomography simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the phantom and simulate (noisy) measurements.
    Simulate,
    /// Assemble the Jacobian at the background medium and save it.
    Jacobian,
    /// Simulate, linearize and invert.
    Reconstruct,
    /// Full pipeline including the edge and contrast analysis.
    Contrast,
    /// Run every combination of the sweep axes.
    Sweep {
        /// TOML file with `sensor_width_mm`, `dtheta_deg`, `freqs_mhz`,
        /// `sensor_type` and `noise` lists; defaults to the reference sweep.
        #[arg(long)]
        axes: Option<PathBuf>,
    },
    /// Render figures for a run or sweep directory.
    Plot {
        /// Directory to plot; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_parser = ["full", "half"])]
    pub scale: Option<String>,
    /// FLOAT, `lcurve`, or `anchor:FLOAT`.
    #[arg(long, global = true)]
    pub eta: Option<String>,
    #[arg(long, global = true, value_parser = ["ps", "pi"])]
    pub sensor_type: Option<String>,
    #[arg(long, global = true)]
    pub sensor_width_mm: Option<f64>,
    #[arg(long, global = true)]
    pub dtheta_deg: Option<f64>,
    /// Comma-separated MHz values.
    #[arg(long, global = true, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    /// Noise as a fraction of the largest clean signal.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recompute stages the manifest marks as current.
    #[arg(long, global = true)]
    pub force: bool,
}

impl Overrides {
    /// The config file (or defaults) with command-line values applied.
    pub fn resolve(&self) -> crate::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                e => e,
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scale {
            c.scale = s.parse::<Scale>()?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.eta {
            c.eta = v.parse::<EtaSetting>()?;
        }
        if let Some(v) = &self.sensor_type {
            c.sensor_type = v.parse::<SensorType>().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = self.sensor_width_mm {
            c.sensor_width_mm = v;
        }
        if let Some(v) = self.dtheta_deg {
            c.dtheta_deg = v;
        }
        if let Some(v) = &self.freqs {
            c.freqs_mhz = v.clone();
        }
        if let Some(v) = self.noise {
            c.noise = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Solver(_) | Error::Unresolvable { .. } => EXIT_SOLVER,
        _ => EXIT_OTHER,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let cfg = match cli.overrides.resolve() {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(n) = cli.overrides.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("--jobs: {e}");
            return EXIT_CONFIG;
        }
    }
    let opts = RunOptions { save_jacobian: false, force: cli.overrides.force };
    let stage = match cli.command {
        Command::Simulate => Stage::Simulate,
        Command::Jacobian => Stage::Jacobian,
        Command::Reconstruct => Stage::Reconstruct,
        Command::Contrast => Stage::Contrast,
        Command::Sweep { axes } => {
            let axes = match axes.map(|p| crate::io::read_text(p).and_then(|t| SweepAxes::from_toml(&t))) {
                None => SweepAxes::reference(),
                Some(Ok(a)) => a,
                Some(Err(e)) => {
                    error!("{e}");
                    return EXIT_CONFIG;
                }
            };
            return match run_sweep(&cfg, &axes) {
                Ok(o) => {
                    print!("{}", contrast_table(&o.rows));
                    for f in &o.failures {
                        error!("combination {} ({}) failed: {}", f.index, f.label, f.error);
                    }
                    if o.failures.is_empty() {
                        EXIT_OK
                    } else {
                        EXIT_PARTIAL
                    }
                }
                Err(e) => {
                    error!("{e}");
                    exit_code(&e)
                }
            };
        }
        Command::Plot { dir } => {
            let dir = dir.unwrap_or(cfg.out.clone());
            return match plot_outputs(&dir) {
                Ok(s) => {
                    for p in &s.written {
                        println!("{}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    error!("{e}");
                    exit_code(&e)
                }
            };
        }
    };
    match run_stages(&cfg, stage, opts) {
        Ok(s) => {
            if let Some(r) = &s.report {
                print!("{}", contrast_table(std::slice::from_ref(r)));
            } else {
                println!("{}", s.out.display());
            }
            EXIT_OK
        }
        Err(f) => {
            error!("{f}");
            exit_code(&f.error)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ustomo").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn overrides_apply() {
        let cli = parse(&["simulate", "--scale", "half", "--freqs", "2,2.5", "--dtheta-deg", "60", "--eta", "lcurve", "--sensor-type", "pi", "--noise", "0.01", "--seed", "9"]);
        let c = cli.overrides.resolve().unwrap();
        assert_eq!(c.scale, Scale::Half);
        assert_eq!(c.freqs_mhz, vec![2.0, 2.5]);
        assert_eq!(c.angles().unwrap(), vec![0.0, 60.0, 120.0]);
        assert_eq!(c.sensor_type, SensorType::Pi);
        assert_eq!((c.noise, c.seed), (0.01, 9));
        assert_eq!(parse(&["plot", "--eta", "3e-6"]).overrides.resolve().unwrap().eta, EtaSetting::Value(3e-6));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(Cli::try_parse_from(["ustomo", "simulate", "--scale", "quarter"]).is_err());
        let cli = parse(&["simulate", "--eta", "often"]);
        assert!(matches!(cli.overrides.resolve(), Err(Error::Config(_))));
        let cli = parse(&["simulate", "--config", "/nonexistent/x.toml"]);
        assert_eq!(exit_code(&cli.overrides.resolve().unwrap_err()), EXIT_CONFIG);
        assert_eq!(run(parse(&["simulate", "--noise", "5"])), EXIT_CONFIG);
    }
}
