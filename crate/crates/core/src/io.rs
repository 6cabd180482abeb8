//! Artifact files: atomic writes, content hashes, and the raster field
//! format (one JSON header line followed by little-endian float64 values).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_f64s(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub format: String,
    pub grid: Grid,
    pub kind: FieldKind,
    #[serde(default)]
    pub label: String,
}

const FIELD_FORMAT: &str = "ustomo-field-v1";

fn encode(header: &FieldHeader, values: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_real_field(path: impl AsRef<Path>, grid: &Grid, values: &[f64], label: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    let header = FieldHeader { format: FIELD_FORMAT.into(), grid: *grid, kind: FieldKind::Real, label: label.into() };
    atomic_write(path, &encode(&header, values.iter().copied())?)
}

pub fn write_complex_field(path: impl AsRef<Path>, grid: &Grid, values: &[Complex64], label: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    let header = FieldHeader { format: FIELD_FORMAT.into(), grid: *grid, kind: FieldKind::Complex, label: label.into() };
    atomic_write(path, &encode(&header, values.iter().flat_map(|v| [v.re, v.im]))?)
}

/// Reads a field file; complex fields come back as interleaved `re, im`.
pub fn read_field(path: impl AsRef<Path>) -> Result<(FieldHeader, Vec<f64>)> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: FieldHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if header.format != FIELD_FORMAT {
        return Err(Error::Format(format!("{}: unknown format '{}'", path.display(), header.format)));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    let per = if header.kind == FieldKind::Complex { 2 } else { 1 };
    let want = header.grid.len() * per * 8;
    if raw.len() != want {
        return Err(Error::Format(format!("{}: {} data bytes, expected {want}", path.display(), raw.len())));
    }
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

pub fn read_real_field(path: impl AsRef<Path>) -> Result<(Grid, Vec<f64>)> {
    let (h, v) = read_field(&path)?;
    if h.kind != FieldKind::Real {
        return Err(Error::Format(format!("{} holds a complex field", path.as_ref().display())));
    }
    Ok((h.grid, v))
}
