//! The whole experiment on the demo configuration: phantom, data, Jacobian,
//! reconstruction, edge analysis, and figures. A second run reuses every
//! stage from the manifest.
//!
//!     cargo run --release --example pipeline -- [out_dir]

use std::time::Instant;

use ustomo::config::ExperimentConfig;
use ustomo::contrast::contrast_table;
use ustomo::experiment::run_experiment;
use ustomo::plot::plot_outputs;

fn main() -> ustomo::Result<()> {
    let mut cfg = ExperimentConfig::demo();
    cfg.out = std::env::args().nth(1).unwrap_or_else(|| "out/pipeline".into()).into();
    cfg.noise = 0.002;
    for pass in 1..=2 {
        let t = Instant::now();
        let s = run_experiment(&cfg).map_err(|f| f.error)?;
        println!("pass {pass}: {:.1} s", t.elapsed().as_secs_f64());
        if pass == 1 {
            for st in &s.manifest.stages {
                println!("    {:<12} {:>6.2} s  {:?}", st.stage.to_string(), st.seconds, st.outputs.keys().collect::<Vec<_>>());
            }
            print!("{}", contrast_table(s.report.as_slice()));
        }
    }
    let figures = plot_outputs(&cfg.out)?;
    for p in &figures.written {
        println!("figure {}", p.display());
    }
    if figures.warnings > 0 {
        println!("{} figures skipped", figures.warnings);
    }
    Ok(())
}
