//! The simulate → jacobian → reconstruct → contrast pipeline, its run
//! manifest, and parameter sweeps over sensor and sampling choices.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{add_noise, simulate_variants, DataVector, SensorType, SensorVariant};
use crate::config::ExperimentConfig;
use crate::contrast::{analyze, contrast_table, ContrastAnalysis, ContrastReport};
use crate::domain::Padding;
use crate::helmholtz::{points_per_wavelength, ResolutionCheck};
use crate::error::{Error, Result};
use crate::inversion::{invert, LCurve, Reconstruction};
use crate::io::{atomic_write, hash_file, read_real_field, read_text, sha256_hex, write_real_field};
use crate::jacobian::{linearize, JacobianMatrix, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phantom,
    Simulate,
    Jacobian,
    Reconstruct,
    Contrast,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Phantom => "phantom",
            Stage::Simulate => "simulate",
            Stage::Jacobian => "jacobian",
            Stage::Reconstruct => "reconstruct",
            Stage::Contrast => "contrast",
        })
    }
}

/// A pipeline error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    /// File name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "ustomo-manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// `"ok"` or `"FAILED"`.
    pub status: String,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

impl Manifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            status: "ok".into(),
            failed_stage: None,
            error: None,
            stages: Vec::new(),
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Manifest> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let m: Manifest = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Format(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("{}: unknown manifest format", path.display())));
        }
        Ok(m)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        atomic_write(dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// True when the stage finished and its files are unchanged on disk.
    pub fn verified(&self, dir: &Path, stage: Stage) -> bool {
        self.stage(stage).is_some_and(|rec| {
            rec.outputs.iter().all(|(name, h)| hash_file(dir.join(name)).is_ok_and(|got| &got == h))
        })
    }

    fn record(&mut self, stage: Stage, seconds: f64, dir: &Path, files: &[&str]) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for f in files {
            outputs.insert(f.to_string(), hash_file(dir.join(f))?);
        }
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageRecord { stage, seconds, outputs });
        self.stages.sort_by_key(|s| s.stage);
        Ok(())
    }
}

/// What a run left behind, besides the files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub reconstruction: Option<Reconstruction>,
    pub lcurve: Option<LCurve>,
    pub analysis: Option<ContrastAnalysis>,
    pub report: Option<ContrastReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Write the Jacobian to `jacobian.bin`.
    pub save_jacobian: bool,
    /// Recompute stages even when the manifest says they are current.
    pub force: bool,
}

/// Runs every stage and writes the artifact bundle to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunSummary, StageFailure> {
    run_stages(cfg, Stage::Contrast, RunOptions::default())
}

fn esf_csv(a: &ContrastAnalysis) -> String {
    let mut s = String::from("position_mm,esf,fit\n");
    for (x, e) in a.positions.iter().zip(&a.esf) {
        s.push_str(&format!("{x:.16e},{e:.16e},{:.16e}\n", a.fit.eval(*x)));
    }
    s
}

fn report_for(cfg: &ExperimentConfig, eta: f64, a: &ContrastAnalysis) -> ContrastReport {
    ContrastReport {
        label: cfg.label.clone(),
        n_angles: cfg.angles().map(|a| a.len()).unwrap_or(0),
        n_freqs: cfg.freqs_mhz.len(),
        sensor_width_mm: cfg.sensor_width_mm,
        sensor_type: cfg.sensor_type.to_string(),
        noise_pct: cfg.noise * 100.0,
        eta,
        fwhm_mm_inv: a.fwhm,
        c_max: a.c_max,
        fit_residual: a.fit.residual_rms,
        weighting: cfg.weighting,
    }
}

fn recon_json(rec: &Reconstruction, seed: u64, protocol_hash: &str) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "seed": seed,
        "protocol_hash": protocol_hash,
        "eta": rec.eta,
        "cutoff_mm_inv": rec.cutoff,
        "iterations": rec.iterations,
        "converged": rec.converged,
        "residual_norm": rec.residual_norm,
        "data_residual_norm": rec.data_residual_norm,
        "seminorm": rec.seminorm,
    }))
    .expect("json")
}

/// Runs stages up to and including `last`. Stages already recorded in an
/// existing manifest for the same config are reused when their files are
/// intact.
pub fn run_stages(
    cfg: &ExperimentConfig,
    last: Stage,
    opts: RunOptions,
) -> std::result::Result<RunSummary, StageFailure> {
    let out = cfg.out.clone();
    let fail = |stage| move |error| StageFailure { stage, error };
    cfg.validate().map_err(fail(Stage::Phantom))?;
    let previous = Manifest::load(&out).ok().filter(|m| !opts.force && m.config_hash == config_hash(cfg));
    let mut manifest = Manifest::new(cfg);
    let mut summary = RunSummary {
        out: out.clone(),
        manifest: manifest.clone(),
        reconstruction: None,
        lcurve: None,
        analysis: None,
        report: None,
    };
    let cached = |stage: Stage| previous.as_ref().is_some_and(|m| m.verified(&out, stage));
    let carry = |manifest: &mut Manifest, stage: Stage| {
        if let Some(rec) = previous.as_ref().and_then(|m| m.stage(stage)) {
            manifest.stages.push(rec.clone());
        }
    };

    let mut current = Stage::Phantom;
    let result: Result<()> = (|| {
        let grid = cfg.grid()?;
        let truth = cfg.true_medium()?;
        let tau0 = cfg.model_medium()?;
        let t = Instant::now();
        write_real_field(out.join("truth.field"), &grid, truth.tau(), "true absorption")?;
        write_real_field(out.join("model.field"), &grid, tau0.tau(), "linearization point")?;
        manifest.record(Stage::Phantom, t.elapsed().as_secs_f64(), &out, &["truth.field", "model.field"])?;
        if last == Stage::Phantom {
            return Ok(());
        }

        let protocol = cfg.protocol()?;
        let options = cfg.simulation_options();
        let recon_cached = cached(Stage::Reconstruct) && last >= Stage::Reconstruct;

        current = Stage::Simulate;
        let noisy = if cached(Stage::Simulate) {
            carry(&mut manifest, Stage::Simulate);
            let d = DataVector::from_csv(&read_text(out.join("data_noisy.csv"))?, cfg.sensor_type)?;
            if d.layout != protocol.layout() {
                return Err(Error::Consistency("cached data do not match the protocol".into()));
            }
            Some(d)
        } else if !recon_cached || last == Stage::Simulate {
            let t = Instant::now();
            let variant = SensorVariant { width: cfg.sensor_width_mm, sensor_type: cfg.sensor_type };
            let clean = simulate_variants(&truth, &protocol, &[variant], &options)?.remove(0);
            let noisy = add_noise(&clean, cfg.noise, cfg.seed)?;
            atomic_write(out.join("data_clean.csv"), clean.to_csv().as_bytes())?;
            atomic_write(out.join("data_noisy.csv"), noisy.to_csv().as_bytes())?;
            manifest.record(Stage::Simulate, t.elapsed().as_secs_f64(), &out, &["data_clean.csv", "data_noisy.csv"])?;
            info!("simulated {} measurements in {:.1?}", clean.len(), t.elapsed());
            Some(noisy)
        } else {
            carry(&mut manifest, Stage::Simulate);
            None
        };
        if last == Stage::Simulate {
            return Ok(());
        }

        current = Stage::Jacobian;
        let mut jac: Option<(DataVector, Arc<JacobianMatrix>)> = None;
        if recon_cached {
            carry(&mut manifest, Stage::Jacobian);
        } else {
            let t = Instant::now();
            let variant = SensorVariant { width: cfg.sensor_width_mm, sensor_type: cfg.sensor_type };
            let (y0, j) = linearize(&tau0, &protocol, &[variant], &options, cfg.inversion_settings().reuse)?.remove(0);
            atomic_write(out.join("model_data.csv"), y0.to_csv().as_bytes())?;
            let mut files = vec!["model_data.csv"];
            if opts.save_jacobian || last == Stage::Jacobian {
                j.save(out.join("jacobian.bin"), Precision::F32)?;
                files.push("jacobian.bin");
            }
            manifest.record(Stage::Jacobian, t.elapsed().as_secs_f64(), &out, &files)?;
            info!("jacobian {}x{} in {:.1?}", j.rows(), j.cols(), t.elapsed());
            jac = Some((y0, Arc::new(j)));
        }
        if last == Stage::Jacobian {
            return Ok(());
        }

        current = Stage::Reconstruct;
        let (h_hat, eta) = if recon_cached {
            carry(&mut manifest, Stage::Reconstruct);
            let (_, h) = read_real_field(out.join("recon.field"))?;
            let meta: serde_json::Value =
                serde_json::from_str(&read_text(out.join("reconstruction.json"))?).map_err(|e| Error::Format(e.to_string()))?;
            (h, meta["eta"].as_f64().unwrap_or(f64::NAN))
        } else {
            let t = Instant::now();
            let (y0, j) = jac.take().expect("jacobian computed");
            let noisy = noisy.as_ref().expect("data simulated");
            let residual = noisy.residual(&y0)?;
            let protocol_hash = j.protocol_hash.clone();
            let (rec, curve) = invert(j, &residual, &cfg.inversion_settings())?;
            write_real_field(out.join("recon.field"), &grid, &rec.h_hat, "reconstructed absorption change")?;
            write_real_field(out.join("recon_raw.field"), &grid, &rec.h_raw, "unfiltered absorption change")?;
            atomic_write(out.join("reconstruction.json"), recon_json(&rec, cfg.seed, &protocol_hash).as_bytes())?;
            let mut files = vec!["recon.field", "recon_raw.field", "reconstruction.json"];
            if let Some(c) = &curve {
                atomic_write(out.join("lcurve.csv"), c.to_csv().as_bytes())?;
                files.push("lcurve.csv");
            }
            manifest.record(Stage::Reconstruct, t.elapsed().as_secs_f64(), &out, &files)?;
            info!("reconstructed with eta {:.3e} in {} iterations ({:.1?})", rec.eta, rec.iterations, t.elapsed());
            let res = (rec.h_hat.clone(), rec.eta);
            summary.reconstruction = Some(rec);
            summary.lcurve = curve;
            res
        };
        if last == Stage::Reconstruct {
            return Ok(());
        }

        current = Stage::Contrast;
        let t = Instant::now();
        let a = analyze(&h_hat, &grid, &cfg.edge_roi()?, cfg.weighting)?;
        let report = report_for(cfg, eta, &a);
        atomic_write(out.join("contrast.csv"), contrast_table(std::slice::from_ref(&report)).as_bytes())?;
        atomic_write(out.join("esf.csv"), esf_csv(&a).as_bytes())?;
        manifest.record(Stage::Contrast, t.elapsed().as_secs_f64(), &out, &["contrast.csv", "esf.csv"])?;
        if !a.fit.is_clean() {
            warn!("edge fit flagged {:?}", a.fit.flags);
        }
        summary.analysis = Some(a);
        summary.report = Some(report);
        Ok(())
    })();

    if let Err(error) = result {
        manifest.status = "FAILED".into();
        manifest.failed_stage = Some(current);
        manifest.error = Some(error.to_string());
        let _ = manifest.save(&out);
        return Err(StageFailure { stage: current, error });
    }
    manifest.save(&out).map_err(fail(last))?;
    summary.manifest = manifest;
    Ok(summary)
}

/// Values to vary; an empty axis keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub sensor_width_mm: Vec<f64>,
    pub dtheta_deg: Vec<f64>,
    pub freqs_mhz: Vec<Vec<f64>>,
    pub sensor_type: Vec<SensorType>,
    pub noise: Vec<f64>,
}

impl SweepAxes {
    /// Two widths, four angle increments, two frequency sets, both sensor
    /// types, with and without 1% noise.
    pub fn reference() -> Self {
        SweepAxes {
            sensor_width_mm: vec![1.0, 5.0],
            dtheta_deg: vec![7.5, 15.0, 30.0, 60.0],
            freqs_mhz: vec![vec![1.5, 1.75, 2.0, 2.25, 2.5], vec![2.0]],
            sensor_type: vec![SensorType::Ps, SensorType::Pi],
            noise: vec![0.0, 0.01],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every combination in row-major order over width, angle increment,
    /// frequency set, sensor type, noise.
    pub fn is_empty(&self) -> bool {
        self.sensor_width_mm.is_empty()
            && self.dtheta_deg.is_empty()
            && self.freqs_mhz.is_empty()
            && self.sensor_type.is_empty()
            && self.noise.is_empty()
    }

    /// Every combination in axis order; with no axes, the base config itself.
    pub fn combinations(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        if self.is_empty() {
            return vec![base.clone()];
        }
        fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for w in or(&self.sensor_width_mm, base.sensor_width_mm) {
            for dt in or(&self.dtheta_deg, base.dtheta_deg) {
                for f in or(&self.freqs_mhz, base.freqs_mhz.clone()) {
                    for st in or(&self.sensor_type, base.sensor_type) {
                        for nz in or(&self.noise, base.noise) {
                            let mut c = base.clone();
                            c.sensor_width_mm = w;
                            c.dtheta_deg = dt;
                            c.freqs_mhz = f.clone();
                            c.sensor_type = st;
                            c.noise = nz;
                            c.label = format!("d{w}_dt{dt}_f{}_{st}_n{}", f.len(), nz * 100.0);
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Noise seed of combination `index`.
pub fn combination_seed(base: u64, index: usize) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(&(index as u64).to_le_bytes());
    let h = Sha256::digest(&bytes);
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub index: usize,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// One per combination; failed ones carry NaN metrics.
    pub rows: Vec<ContrastReport>,
    pub failures: Vec<SweepFailure>,
    /// Clean simulated data of each combination; PI entries are real.
    pub data: Vec<Option<DataVector>>,
}

pub const SWEEP_TABLE: &str = "sweep_contrast.csv";

fn position(set: &[f64], v: f64) -> usize {
    set.iter().position(|x| (x - v).abs() < 1e-9).expect("value in union")
}

fn union(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

/// Runs every combination of `axes` on `base`. Forward fields, data and the
/// Jacobian are computed once per sensor variant over the union of angles
/// and frequencies, and each combination inverts its own subset.
pub fn run_sweep(base: &ExperimentConfig, axes: &SweepAxes) -> Result<SweepOutcome> {
    base.validate()?;
    let combos = axes.combinations(base);
    for c in &combos {
        c.validate()?;
    }
    let out = base.out.clone();
    let grid = base.grid()?;
    let truth = base.true_medium()?;
    let tau0 = base.model_medium()?;

    // combinations the grid cannot resolve fail alone instead of sinking the
    // shared simulation
    let mut failures = Vec::new();
    let mut active = vec![true; combos.len()];
    if base.simulation_options().resolution == ResolutionCheck::Strict {
        for (i, c) in combos.iter().enumerate() {
            let f_max = c.freqs_mhz.iter().cloned().fold(0.0, f64::max);
            let ppw = points_per_wavelength(&grid, truth.c_min().min(tau0.c_min()), 2.0 * std::f64::consts::PI * f_max * 1e6);
            if ppw < 2.0 {
                let e = Error::Unresolvable { points_per_wavelength: ppw };
                warn!("sweep: {} failed: {e}", c.label);
                failures.push(SweepFailure { index: i, label: c.label.clone(), error: e.to_string() });
                active[i] = false;
            }
        }
        if !active.iter().any(|a| *a) {
            return Err(Error::Unresolvable { points_per_wavelength: 0.0 });
        }
    }
    let live = || combos.iter().zip(&active).filter(|(_, a)| **a).map(|(c, _)| c);
    let angles = union(live().flat_map(|c| c.angles().unwrap()).collect());
    let freqs = union(live().flat_map(|c| c.freqs_mhz.clone()).collect());
    let mut full = base.clone();
    full.freqs_mhz = freqs.clone();
    let mut protocol = full.protocol()?;
    protocol.angles_deg = angles.clone();

    let mut variants: Vec<SensorVariant> = Vec::new();
    for c in live() {
        let v = SensorVariant { width: c.sensor_width_mm, sensor_type: c.sensor_type };
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    // one domain for every variant so data and model agree
    let mut options = base.simulation_options();
    let widest = variants.iter().map(|v| v.width).fold(0.0, f64::max);
    let mut wide = protocol.clone();
    wide.geometry.sensor_width = widest;
    options.padding = Padding::Fixed(wide.domain(&grid, &options)?.pad);

    let t = Instant::now();
    let clean_all = simulate_variants(&truth, &protocol, &variants, &options)?;
    info!("sweep: simulated {} variants in {:.1?}", variants.len(), t.elapsed());

    let mut rows: Vec<Option<ContrastReport>> = vec![None; combos.len()];
    let mut data: Vec<Option<DataVector>> = vec![None; combos.len()];
    let mut table_rows: Vec<ContrastReport> = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        let members: Vec<usize> = (0..combos.len())
            .filter(|&i| active[i] && combos[i].sensor_width_mm == v.width && combos[i].sensor_type == v.sensor_type)
            .collect();
        let t = Instant::now();
        let lin = linearize(&tau0, &protocol.with_sensor(*v), &[*v], &options, base.inversion_settings().reuse);
        let (y0, j) = match lin {
            Ok(mut l) => l.remove(0),
            Err(e) => {
                for &i in &members {
                    failures.push(SweepFailure { index: i, label: combos[i].label.clone(), error: e.to_string() });
                }
                continue;
            }
        };
        info!("sweep: variant {:?} jacobian in {:.1?}", v, t.elapsed());
        for &i in &members {
            let c = &combos[i];
            let fi: Vec<usize> = c.freqs_mhz.iter().map(|f| position(&freqs, *f)).collect();
            let ai: Vec<usize> = c.angles()?.iter().map(|a| position(&angles, *a)).collect();
            let clean = clean_all[vi].select(&fi, &ai);
            data[i] = Some(clean.clone());
            let t = Instant::now();
            let attempt = (|| -> Result<ContrastReport> {
                let seed = if axes.is_empty() { base.seed } else { combination_seed(base.seed, i) };
                let noisy = add_noise(&clean, c.noise, seed)?;
                let residual = noisy.residual(&y0.select(&fi, &ai))?;
                let js = Arc::new(j.select(&fi, &ai));
                let (rec, _) = invert(js, &residual, &c.inversion_settings())?;
                write_real_field(out.join("sweep").join(format!("{}.field", c.label)), &grid, &rec.h_hat, &c.label)?;
                let a = analyze(&rec.h_hat, &grid, &c.edge_roi()?, c.weighting)?;
                atomic_write(out.join("sweep").join(format!("{}_esf.csv", c.label)), esf_csv(&a).as_bytes())?;
                Ok(report_for(c, rec.eta, &a))
            })();
            match attempt {
                Ok(r) => {
                    info!("sweep: {} fwhm {:.4} c_max {:.4} ({:.1?})", c.label, r.fwhm_mm_inv, r.c_max, t.elapsed());
                    rows[i] = Some(r);
                }
                Err(e) => {
                    warn!("sweep: {} failed: {e}", c.label);
                    failures.push(SweepFailure { index: i, label: c.label.clone(), error: e.to_string() });
                }
            }
        }
    }
    for (i, c) in combos.iter().enumerate() {
        let r = rows[i].take().unwrap_or_else(|| ContrastReport {
            label: c.label.clone(),
            n_angles: c.angles().map(|a| a.len()).unwrap_or(0),
            n_freqs: c.freqs_mhz.len(),
            sensor_width_mm: c.sensor_width_mm,
            sensor_type: c.sensor_type.to_string(),
            noise_pct: c.noise * 100.0,
            eta: f64::NAN,
            fwhm_mm_inv: f64::NAN,
            c_max: f64::NAN,
            fit_residual: f64::NAN,
            weighting: c.weighting,
        });
        table_rows.push(r);
    }
    failures.sort_by_key(|f| f.index);
    atomic_write(out.join(SWEEP_TABLE), contrast_table(&table_rows).as_bytes())?;
    let failures_json = serde_json::to_string_pretty(&failures).map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(out.join("sweep_failures.json"), failures_json.as_bytes())?;
    Ok(SweepOutcome { rows: table_rows, failures, data })
}
