//! Rotating parallel source/sensor arrays, sensor sampling, the
//! phase-sensitive / phase-insensitive field transform, measurement
//! simulation and noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SimulationOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, MediumMap};
use crate::helmholtz::{
    assemble_operator_with, bilinear_stencil, ComplexField, FieldRole, HelmholtzSolver, PmlSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorType {
    /// Integrates complex pressure over the aperture.
    Ps,
    /// Integrates squared pressure magnitude over the aperture.
    Pi,
}

impl fmt::Display for SensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorType::Ps => "ps",
            SensorType::Pi => "pi",
        })
    }
}

impl FromStr for SensorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ps" => Ok(SensorType::Ps),
            "pi" => Ok(SensorType::Pi),
            other => Err(Error::invalid(format!("unknown sensor type '{other}' (expected ps or pi)"))),
        }
    }
}

/// Linear source array facing a linear sensor array across `separation`.
///
/// At zero rotation the sources lie on the line `y = center.y - separation/2`
/// and the sensors on `y = center.y + separation/2`, both evenly spaced over
/// `array_length` with the end elements on the ends of the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_sources: usize,
    pub n_sensors: usize,
    /// mm
    pub array_length: f64,
    /// mm
    pub separation: f64,
    /// Sensor aperture (mm).
    pub sensor_width: f64,
    /// Rotation centre (mm).
    pub center: [f64; 2],
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_sensors == 0 {
            return Err(Error::invalid("arrays need at least one source and one sensor"));
        }
        if !(self.array_length > 0.0 && self.separation > 0.0 && self.sensor_width > 0.0) {
            return Err(Error::invalid(format!(
                "array length, separation and sensor width must be positive ({}, {}, {})",
                self.array_length, self.separation, self.sensor_width
            )));
        }
        Ok(())
    }
}

/// A straight sensor aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSegment {
    pub center: [f64; 2],
    /// Unit vector along the aperture.
    pub direction: [f64; 2],
    pub length: f64,
}

impl SensorSegment {
    pub fn endpoints(&self) -> [[f64; 2]; 2] {
        let h = 0.5 * self.length;
        [
            [self.center[0] - h * self.direction[0], self.center[1] - h * self.direction[1]],
            [self.center[0] + h * self.direction[0], self.center[1] + h * self.direction[1]],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayPlacement {
    pub sources: Vec<[f64; 2]>,
    pub sensors: Vec<SensorSegment>,
}

impl ArrayPlacement {
    /// Every source position and sensor end point.
    pub fn extreme_points(&self) -> Vec<[f64; 2]> {
        let mut pts = self.sources.clone();
        for s in &self.sensors {
            pts.extend(s.endpoints());
        }
        pts
    }
}

fn line_positions(n: usize, length: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|k| -0.5 * length + length * k as f64 / (n - 1) as f64).collect()
}

/// Rotates `p` counter-clockwise by `theta_deg` about `center`.
pub fn rotate_point(p: [f64; 2], center: [f64; 2], theta_deg: f64) -> [f64; 2] {
    let (s, c) = theta_deg.to_radians().sin_cos();
    let (x, y) = (p[0] - center[0], p[1] - center[1]);
    [center[0] + c * x - s * y, center[1] + s * x + c * y]
}

pub fn place_arrays(geometry: &ArrayGeometry, theta_deg: f64) -> ArrayPlacement {
    let c = geometry.center;
    let half = 0.5 * geometry.separation;
    let sources = line_positions(geometry.n_sources, geometry.array_length)
        .into_iter()
        .map(|x| rotate_point([c[0] + x, c[1] - half], c, theta_deg))
        .collect();
    let dir = rotate_point([1.0, 0.0], [0.0, 0.0], theta_deg);
    let sensors = line_positions(geometry.n_sensors, geometry.array_length)
        .into_iter()
        .map(|x| SensorSegment {
            center: rotate_point([c[0] + x, c[1] + half], c, theta_deg),
            direction: dir,
            length: geometry.sensor_width,
        })
        .collect();
    ArrayPlacement { sources, sensors }
}

/// Quadrature of one sensor aperture as per-pixel weights (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWeights {
    /// `(pixel index, weight)` sorted by pixel index.
    pub support: Vec<(usize, f64)>,
    pub sensor: usize,
    pub theta_deg: f64,
}

impl SensorWeights {
    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, w)| w).sum()
    }

    /// `sum w * f`, the aperture integral of a pixel field.
    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        self.support.iter().map(|&(k, w)| values[k] * w).sum()
    }
}

/// Quadrature nodes per pixel width along an aperture.
pub const NODES_PER_PIXEL: usize = 4;

/// Midpoint-rule quadrature along the segment with bilinear interpolation
/// from the surrounding pixels, expressed as per-pixel weights summing to the
/// segment length.
pub fn sensor_quadrature(grid: &Grid, segment: &SensorSegment, pml: &PmlSpec) -> Result<SensorWeights> {
    let w = pml.width_px as f64;
    for p in segment.endpoints() {
        let f = grid.to_pixel(p);
        let ok = f[0] >= w && f[1] >= w && f[0] <= grid.lx as f64 - 1.0 - w && f[1] <= grid.ly as f64 - 1.0 - w;
        if !ok {
            return Err(Error::invalid(format!(
                "sensor end point ({:.4}, {:.4}) mm is outside the grid interior",
                p[0], p[1]
            )));
        }
    }
    let h = grid.dx.min(grid.dy);
    let nodes = ((NODES_PER_PIXEL as f64 * segment.length / h).ceil() as usize).max(NODES_PER_PIXEL);
    let dl = segment.length / nodes as f64;
    let [a, _] = segment.endpoints();
    let mut acc: Vec<(usize, f64)> = Vec::with_capacity(4 * nodes);
    for q in 0..nodes {
        let s = (q as f64 + 0.5) * dl;
        let p = [a[0] + s * segment.direction[0], a[1] + s * segment.direction[1]];
        for (k, wt) in bilinear_stencil(grid, grid.to_pixel(p)) {
            acc.push((k, wt * dl));
        }
    }
    acc.sort_by_key(|(k, _)| *k);
    let mut support: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
    for (k, wt) in acc {
        match support.last_mut() {
            Some((last, tot)) if *last == k => *tot += wt,
            _ => support.push((k, wt)),
        }
    }
    Ok(SensorWeights { support, sensor: 0, theta_deg: 0.0 })
}

/// Identity for phase-sensitive sensors, `|P|²` for phase-insensitive ones.
pub fn field_transform(p: &ComplexField, sensor_type: SensorType) -> ComplexField {
    match sensor_type {
        SensorType::Ps => p.clone(),
        SensorType::Pi => {
            let mut out = p.clone().with_role(FieldRole::Generic);
            for v in out.values_mut() {
                *v = Complex64::new(v.norm_sqr(), 0.0);
            }
            out
        }
    }
}

#[inline]
pub(crate) fn measure(weights: &SensorWeights, p: &[Complex64], sensor_type: SensorType) -> Complex64 {
    match sensor_type {
        SensorType::Ps => weights.integrate(p),
        SensorType::Pi => Complex64::new(weights.support.iter().map(|&(k, w)| w * p[k].norm_sqr()).sum(), 0.0),
    }
}

/// Full acquisition: geometry, frequencies, rotation angles and sensor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionProtocol {
    pub geometry: ArrayGeometry,
    /// Source frequencies (Hz); angular frequencies are `2 pi f`.
    pub frequencies_hz: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub sensor_type: SensorType,
    /// Point-source amplitude (Pa).
    pub source_amplitude: f64,
}

impl AcquisitionProtocol {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.frequencies_hz.is_empty() || self.frequencies_hz.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("frequency set must be non-empty and positive"));
        }
        if self.angles_deg.is_empty() || self.angles_deg.iter().any(|a| !(*a >= 0.0 && *a < 180.0)) {
            return Err(Error::invalid("angle set must be non-empty and within [0, 180) degrees"));
        }
        if !(self.source_amplitude.is_finite()) {
            return Err(Error::invalid("source amplitude must be finite"));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.frequencies_hz.iter().map(|f| 2.0 * PI * f).collect()
    }

    pub fn layout(&self) -> DataLayout {
        DataLayout {
            frequencies_hz: self.frequencies_hz.clone(),
            angles_deg: self.angles_deg.clone(),
            n_sources: self.geometry.n_sources,
            n_sensors: self.geometry.n_sensors,
        }
    }

    /// Every array element position over all angles.
    pub fn extreme_points(&self) -> Vec<[f64; 2]> {
        self.angles_deg
            .iter()
            .flat_map(|&t| place_arrays(&self.geometry, t).extreme_points())
            .collect()
    }

    /// The simulation domain for this protocol on `image`.
    pub fn domain(&self, image: &Grid, options: &SimulationOptions) -> Result<Domain> {
        Domain::fit(image, &self.extreme_points(), options)
    }

    pub fn with_sensor(&self, variant: SensorVariant) -> AcquisitionProtocol {
        let mut p = self.clone();
        p.geometry.sensor_width = variant.width;
        p.sensor_type = variant.sensor_type;
        p
    }
}

/// Sensor width and type, the parts of a protocol that do not change the
/// forward fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorVariant {
    pub width: f64,
    pub sensor_type: SensorType,
}

/// Index structure of a data vector, ordered slowest to fastest as
/// `(frequency, angle, source, sensor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataLayout {
    pub frequencies_hz: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub n_sources: usize,
    pub n_sensors: usize,
}

/// `(frequency index, angle index, source, sensor)`.
pub type DataIndex = (usize, usize, usize, usize);

impl DataLayout {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len() * self.angles_deg.len() * self.n_sources * self.n_sensors
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flat(&self, (f, a, n, m): DataIndex) -> usize {
        ((f * self.angles_deg.len() + a) * self.n_sources + n) * self.n_sensors + m
    }

    #[inline]
    pub fn unflat(&self, k: usize) -> DataIndex {
        let m = k % self.n_sensors;
        let r = k / self.n_sensors;
        let n = r % self.n_sources;
        let r = r / self.n_sources;
        let a = r % self.angles_deg.len();
        (r / self.angles_deg.len(), a, n, m)
    }
}

/// Complex measurements in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector {
    pub layout: DataLayout,
    pub sensor_type: SensorType,
    pub values: Vec<Complex64>,
}

impl DataVector {
    pub fn new(layout: DataLayout, sensor_type: SensorType, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::invalid(format!("data has {} values, layout needs {}", values.len(), layout.len())));
        }
        Ok(DataVector { layout, sensor_type, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self - other`, for residuals `g - y(tau0)`.
    pub fn residual(&self, other: &DataVector) -> Result<DataVector> {
        if self.layout != other.layout || self.sensor_type != other.sensor_type {
            return Err(Error::invalid("data vectors come from different protocols"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(DataVector { layout: self.layout.clone(), sensor_type: self.sensor_type, values })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Keeps only the listed frequency and angle indices, in the order given.
    pub fn select(&self, freqs: &[usize], angles: &[usize]) -> DataVector {
        let l = &self.layout;
        let layout = DataLayout {
            frequencies_hz: freqs.iter().map(|&f| l.frequencies_hz[f]).collect(),
            angles_deg: angles.iter().map(|&a| l.angles_deg[a]).collect(),
            n_sources: l.n_sources,
            n_sensors: l.n_sensors,
        };
        let mut values = Vec::with_capacity(layout.len());
        for &f in freqs {
            for &a in angles {
                let start = l.flat((f, a, 0, 0));
                values.extend_from_slice(&self.values[start..start + l.n_sources * l.n_sensors]);
            }
        }
        DataVector { layout, sensor_type: self.sensor_type, values }
    }

    /// CSV with header `omega_hz,theta_deg,n,m,re,im`; floats carry 17
    /// significant digits so values round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 96 + 64);
        s.push_str("omega_hz,theta_deg,n,m,re,im\n");
        for (k, v) in self.values.iter().enumerate() {
            let (f, a, n, m) = self.layout.unflat(k);
            s.push_str(&format!(
                "{:.16e},{:.16e},{},{},{:.16e},{:.16e}\n",
                self.layout.frequencies_hz[f], self.layout.angles_deg[a], n, m, v.re, v.im
            ));
        }
        s
    }

    pub fn from_csv(text: &str, sensor_type: SensorType) -> Result<DataVector> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty data file".into()))?;
        if header.trim() != "omega_hz,theta_deg,n,m,re,im" {
            return Err(Error::Format(format!("unexpected data header '{header}'")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::Format(format!("line {}: expected 6 columns", ln + 2)));
            }
            let pf = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: {e}", ln + 2)));
            let pu = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("line {}: {e}", ln + 2)));
            rows.push((pf(cols[0])?, pf(cols[1])?, pu(cols[2])?, pu(cols[3])?, Complex64::new(pf(cols[4])?, pf(cols[5])?)));
        }
        let mut freqs: Vec<f64> = Vec::new();
        let mut angles: Vec<f64> = Vec::new();
        let (mut n_src, mut n_sen) = (0, 0);
        for r in &rows {
            if !freqs.contains(&r.0) {
                freqs.push(r.0);
            }
            if !angles.contains(&r.1) {
                angles.push(r.1);
            }
            n_src = n_src.max(r.2 + 1);
            n_sen = n_sen.max(r.3 + 1);
        }
        let layout = DataLayout { frequencies_hz: freqs, angles_deg: angles, n_sources: n_src, n_sensors: n_sen };
        if rows.len() != layout.len() {
            return Err(Error::Format(format!("{} rows do not fill a {} entry layout", rows.len(), layout.len())));
        }
        for (k, r) in rows.iter().enumerate() {
            let (f, a, n, m) = layout.unflat(k);
            if layout.frequencies_hz[f] != r.0 || layout.angles_deg[a] != r.1 || n != r.2 || m != r.3 {
                return Err(Error::Format(format!("row {k} is out of canonical order")));
            }
        }
        DataVector::new(layout, sensor_type, rows.into_iter().map(|r| r.4).collect())
    }
}

/// Measurements of `medium` (on the image grid) under `protocol`.
pub fn simulate_measurements(
    medium: &MediumMap,
    protocol: &AcquisitionProtocol,
    options: &SimulationOptions,
) -> Result<DataVector> {
    let variant = SensorVariant { width: protocol.geometry.sensor_width, sensor_type: protocol.sensor_type };
    Ok(simulate_variants(medium, protocol, &[variant], options)?.remove(0))
}

/// Simulates several sensor variants from the same forward fields. The
/// geometry used for the domain is the union over variants.
pub fn simulate_variants(
    medium: &MediumMap,
    protocol: &AcquisitionProtocol,
    variants: &[SensorVariant],
    options: &SimulationOptions,
) -> Result<Vec<DataVector>> {
    protocol.validate()?;
    if variants.is_empty() {
        return Ok(Vec::new());
    }
    let image = *medium.grid();
    let mut points = Vec::new();
    for v in variants {
        points.extend(protocol.with_sensor(*v).extreme_points());
    }
    let domain = Domain::fit(&image, &points, options)?;
    let sim_medium = domain.embed_medium(medium, options)?;
    let layout = protocol.layout();
    let (n_src, n_sen) = (layout.n_sources, layout.n_sensors);
    let mut out: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); layout.len()]; variants.len()];

    // sensor weights per (variant, angle)
    let weights: Vec<Vec<Vec<SensorWeights>>> = variants
        .iter()
        .map(|v| {
            let geom = protocol.with_sensor(*v).geometry;
            protocol
                .angles_deg
                .iter()
                .map(|&t| {
                    place_arrays(&geom, t)
                        .sensors
                        .iter()
                        .enumerate()
                        .map(|(m, seg)| {
                            let mut w = sensor_quadrature(&domain.sim, seg, &options.pml)?;
                            w.sensor = m;
                            w.theta_deg = t;
                            Ok(w)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    for (fi, omega) in protocol.omegas().into_iter().enumerate() {
        let op = assemble_operator_with(&domain.sim, &sim_medium, omega, options.pml, options.resolution)?;
        let solver = HelmholtzSolver::new(op, options.solver)
            .map_err(|e| Error::Solver(format!("frequency {:.4} MHz: {e}", omega / (2.0 * PI) * 1e-6)))?;
        let jobs: Vec<(usize, usize)> =
            (0..protocol.angles_deg.len()).flat_map(|a| (0..n_src).map(move |n| (a, n))).collect();
        let results: Vec<Result<Vec<Vec<Complex64>>>> = jobs
            .par_iter()
            .map(|&(a, n)| {
                let pos = place_arrays(&protocol.geometry, protocol.angles_deg[a]).sources[n];
                let src = ComplexField::point_source(&domain.sim, pos, protocol.source_amplitude, options.source_stencil)?;
                let p = solver.solve_forward(&src).map_err(|e| {
                    Error::Solver(format!(
                        "forward solve at {:.4} MHz, {} deg, source {n}: {e}",
                        omega / (2.0 * PI) * 1e-6,
                        protocol.angles_deg[a]
                    ))
                })?;
                Ok(variants
                    .iter()
                    .enumerate()
                    .map(|(vi, v)| weights[vi][a].iter().map(|w| measure(w, p.values(), v.sensor_type)).collect())
                    .collect())
            })
            .collect();
        for (&(a, n), res) in jobs.iter().zip(results) {
            let per_variant = res?;
            for (vi, vals) in per_variant.into_iter().enumerate() {
                let start = layout.flat((fi, a, n, 0));
                out[vi][start..start + n_sen].copy_from_slice(&vals);
            }
        }
    }
    variants
        .iter()
        .zip(out)
        .map(|(v, values)| DataVector::new(layout.clone(), v.sensor_type, values))
        .collect()
}

/// Adds zero-mean Gaussian noise with standard deviation `level` times the
/// largest measurement magnitude. Phase-sensitive data get independent noise
/// on both parts; phase-insensitive data only on the real part.
pub fn add_noise(data: &DataVector, level: f64, seed: u64) -> Result<DataVector> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::invalid(format!("noise level must be non-negative, got {level}")));
    }
    if level == 0.0 {
        return Ok(data.clone());
    }
    let scale = match data.sensor_type {
        SensorType::Ps => data.values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        SensorType::Pi => data.values.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max),
    };
    let sd = level * scale;
    if !(sd > 0.0) {
        return Ok(data.clone());
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = data
        .values
        .iter()
        .map(|v| match data.sensor_type {
            SensorType::Ps => Complex64::new(v.re + normal.sample(&mut rng), v.im + normal.sample(&mut rng)),
            SensorType::Pi => Complex64::new(v.re + normal.sample(&mut rng), 0.0),
        })
        .collect();
    Ok(DataVector { layout: data.layout.clone(), sensor_type: data.sensor_type, values })
}
