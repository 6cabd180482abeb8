//! Experiment configuration: a flat TOML table with one key per model
//! parameter, defaulting to the reference simulation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::acquisition::{AcquisitionProtocol, ArrayGeometry, SensorType};
use crate::contrast::{EdgeRoi, Weighting};
use crate::domain::SimulationOptions;
use crate::error::{Error, Result};
use crate::grid::{build_phantom, Grid, Inclusion, InclusionShape, MediumMap, PhantomSpec, PixelRect};
use crate::helmholtz::{PmlSpec, ResolutionCheck};
use crate::inversion::{EtaChoice, InversionSettings, LsqrSettings};
use crate::jacobian::Reuse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Full,
    /// 128x128 at twice the pixel size; same physical layout.
    Half,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "half" => Ok(Scale::Half),
            other => Err(Error::Config(format!("unknown scale '{other}' (full|half)"))),
        }
    }
}

/// `FLOAT`, `lcurve`, or `anchor:FLOAT` (a multiple of the norm-balancing
/// weight).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSetting {
    Value(f64),
    LCurve,
    Anchor(f64),
}

impl fmt::Display for EtaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaSetting::Value(v) => write!(f, "{v:e}"),
            EtaSetting::LCurve => f.write_str("lcurve"),
            EtaSetting::Anchor(v) => write!(f, "anchor:{v:e}"),
        }
    }
}

impl FromStr for EtaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::Config(format!("eta must be a positive number, 'lcurve' or 'anchor:F', got '{s}'")))
        };
        if s == "lcurve" {
            Ok(EtaSetting::LCurve)
        } else if let Some(rest) = s.strip_prefix("anchor:") {
            Ok(EtaSetting::Anchor(num(rest)?))
        } else {
            Ok(EtaSetting::Value(num(s)?))
        }
    }
}

impl Serialize for EtaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaSetting::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for EtaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => EtaSetting::from_str(&v.to_string()).map_err(serde::de::Error::custom),
            Raw::Text(t) => EtaSetting::from_str(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Every model parameter of one run. Pixel quantities refer to the
/// full-scale grid and are converted when `scale = "half"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub scale: Scale,
    pub lx: usize,
    pub ly: usize,
    pub dx_mm: f64,
    pub c_m_s: f64,
    pub background_tau: f64,
    pub target_tau: f64,
    /// Inclusive `[i0, i1, j0, j1]`, zero-based.
    pub target_px: [usize; 4],
    pub freqs_mhz: Vec<f64>,
    pub dtheta_deg: f64,
    pub n_sources: usize,
    pub n_sensors: usize,
    pub array_length_mm: f64,
    pub separation_mm: f64,
    pub sensor_width_mm: f64,
    pub sensor_type: SensorType,
    pub source_amplitude_pa: f64,
    pub pml_width_px: usize,
    pub pml_strength: f64,
    /// Fraction of the largest clean signal.
    pub noise: f64,
    pub seed: u64,
    pub eta: EtaSetting,
    pub lcurve_decades: f64,
    pub lcurve_count: usize,
    pub cutoff_mm_inv: f64,
    pub lsqr_tol: f64,
    pub lsqr_max_iter: usize,
    pub roi_along_px: usize,
    pub roi_across_px: usize,
    pub weighting: Weighting,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            label: "run".into(),
            scale: Scale::Full,
            lx: 256,
            ly: 256,
            dx_mm: 0.15625,
            c_m_s: 1540.0,
            background_tau: 0.003,
            target_tau: 0.006,
            target_px: [99, 149, 149, 199],
            freqs_mhz: vec![1.5, 1.75, 2.0, 2.25, 2.5],
            dtheta_deg: 7.5,
            n_sources: 10,
            n_sensors: 10,
            array_length_mm: 30.0,
            separation_mm: 30.0,
            sensor_width_mm: 1.0,
            sensor_type: SensorType::Ps,
            source_amplitude_pa: 1.0,
            pml_width_px: 5,
            pml_strength: crate::helmholtz::DEFAULT_PML_STRENGTH,
            noise: 0.0,
            seed: 0,
            eta: EtaSetting::LCurve,
            lcurve_decades: 6.0,
            lcurve_count: 15,
            cutoff_mm_inv: 1.75,
            lsqr_tol: 1e-8,
            lsqr_max_iter: 2000,
            roi_along_px: 50,
            roi_across_px: 40,
            weighting: Weighting::Max,
            out: PathBuf::from("out"),
        }
    }
}

/// Angles `0, d, 2d, ...` below 180 degrees.
pub fn angle_set(dtheta_deg: f64) -> Result<Vec<f64>> {
    if !(dtheta_deg > 0.0 && dtheta_deg <= 180.0) {
        return Err(Error::Config(format!("angle increment {dtheta_deg} outside (0, 180]")));
    }
    let n = (180.0 / dtheta_deg - 1e-9).ceil() as usize;
    Ok((0..n).map(|k| k as f64 * dtheta_deg).collect())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The reference configuration at half resolution.
    pub fn half_scale() -> Self {
        ExperimentConfig { scale: Scale::Half, ..Default::default() }
    }

    /// A 64x64 layout at 0.3125 mm with short arrays and two frequencies,
    /// small enough to run the whole pipeline in seconds.
    pub fn demo() -> Self {
        ExperimentConfig {
            label: "demo".into(),
            lx: 64,
            ly: 64,
            dx_mm: 0.3125,
            target_px: [24, 39, 24, 39],
            freqs_mhz: vec![1.0, 1.25],
            dtheta_deg: 30.0,
            n_sources: 6,
            n_sensors: 6,
            array_length_mm: 12.0,
            separation_mm: 14.0,
            eta: EtaSetting::Anchor(0.01),
            lcurve_count: 7,
            lsqr_tol: 1e-6,
            lsqr_max_iter: 300,
            cutoff_mm_inv: 1.0,
            roi_along_px: 12,
            roi_across_px: 10,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lx < 4 || self.ly < 4 || !(self.dx_mm > 0.0) {
            return bad(format!("grid {}x{} at dx {} mm", self.lx, self.ly, self.dx_mm));
        }
        if self.scale == Scale::Half && (self.lx % 2 != 0 || self.ly % 2 != 0) {
            return bad("half scale needs even grid dimensions".into());
        }
        if !(self.c_m_s > 0.0) || !(self.background_tau >= 0.0) || !(self.target_tau >= 0.0) {
            return bad("sound speed must be positive and absorption non-negative".into());
        }
        let [i0, i1, j0, j1] = self.target_px;
        if i0 > i1 || j0 > j1 || i1 >= self.lx || j1 >= self.ly {
            return bad(format!("target {:?} outside {}x{} grid", self.target_px, self.lx, self.ly));
        }
        if self.freqs_mhz.is_empty() || self.freqs_mhz.iter().any(|f| !(*f > 0.0)) {
            return bad("frequencies must be positive and non-empty".into());
        }
        angle_set(self.dtheta_deg)?;
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise fraction {} outside [0, 1)", self.noise));
        }
        if self.lcurve_count < 3 || !(self.lcurve_decades > 0.0) {
            return bad("L-curve needs at least 3 points over a positive span".into());
        }
        if !(self.cutoff_mm_inv >= 0.0) || !(self.lsqr_tol > 0.0 && self.lsqr_tol < 1.0) || self.lsqr_max_iter == 0 {
            return bad("cutoff, LSQR tolerance or iteration cap out of range".into());
        }
        if self.roi_along_px == 0 || self.roi_across_px < 2 {
            return bad("contrast ROI too small".into());
        }
        self.geometry().validate().map_err(|e| Error::Config(e.to_string()))?;
        PmlSpec { width_px: self.pml_width_px, strength: self.pml_strength }
            .validate(&self.grid()?)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn factor(&self) -> usize {
        match self.scale {
            Scale::Full => 1,
            Scale::Half => 2,
        }
    }

    fn full_grid(&self) -> Result<Grid> {
        Grid::centered(self.lx, self.ly, self.dx_mm, self.dx_mm)
    }

    /// Image grid at the configured scale.
    pub fn grid(&self) -> Result<Grid> {
        let f = self.factor();
        Grid::centered(self.lx / f, self.ly / f, self.dx_mm * f as f64, self.dx_mm * f as f64)
    }

    pub fn target(&self) -> Result<PixelRect> {
        let [i0, i1, j0, j1] = self.target_px;
        PixelRect::new(i0, i1, j0, j1).resample(&self.full_grid()?, &self.grid()?)
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        Ok(PhantomSpec {
            background_tau: self.background_tau,
            inclusions: vec![Inclusion { shape: InclusionShape::Rect(self.target()?), tau: self.target_tau }],
        })
    }

    pub fn true_medium(&self) -> Result<MediumMap> {
        build_phantom(&self.grid()?, &self.phantom_spec()?, self.c_m_s)
    }

    /// The constant-background linearization point.
    pub fn model_medium(&self) -> Result<MediumMap> {
        MediumMap::homogeneous(self.grid()?, self.background_tau, self.c_m_s)
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            n_sources: self.n_sources,
            n_sensors: self.n_sensors,
            array_length: self.array_length_mm,
            separation: self.separation_mm,
            sensor_width: self.sensor_width_mm,
            center: [0.0, 0.0],
        }
    }

    pub fn angles(&self) -> Result<Vec<f64>> {
        angle_set(self.dtheta_deg)
    }

    pub fn protocol(&self) -> Result<AcquisitionProtocol> {
        let p = AcquisitionProtocol {
            geometry: self.geometry(),
            frequencies_hz: self.freqs_mhz.iter().map(|f| f * 1e6).collect(),
            angles_deg: self.angles()?,
            sensor_type: self.sensor_type,
            source_amplitude: self.source_amplitude_pa,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            pml: PmlSpec { width_px: self.pml_width_px, strength: self.pml_strength },
            resolution: match self.scale {
                Scale::Full => ResolutionCheck::Strict,
                Scale::Half => ResolutionCheck::Permissive,
            },
            ..Default::default()
        }
    }

    pub fn inversion_settings(&self) -> InversionSettings {
        InversionSettings {
            eta: match self.eta {
                EtaSetting::Value(v) => EtaChoice::Fixed(v),
                EtaSetting::Anchor(f) => EtaChoice::Anchor(f),
                EtaSetting::LCurve => EtaChoice::LCurve { decades: self.lcurve_decades, count: self.lcurve_count },
            },
            cutoff: (self.cutoff_mm_inv > 0.0).then_some(self.cutoff_mm_inv),
            lsqr: LsqrSettings { tol: self.lsqr_tol, max_iter: self.lsqr_max_iter },
            reuse: Reuse::Auto,
        }
    }

    /// Edge ROI on the upper side of the target, scaled with the grid.
    pub fn edge_roi(&self) -> Result<EdgeRoi> {
        let f = self.factor();
        let along = (self.roi_along_px / f).max(1);
        let across = ((self.roi_across_px / f) / 2 * 2).max(2);
        let roi = EdgeRoi::upper_edge(&self.target()?, along, across)?;
        if !roi.fits(&self.grid()?) {
            return Err(Error::Config(format!("contrast ROI {:?} leaves the grid", roi.rect)));
        }
        Ok(roi)
    }
}
