//! Persistence: field-sample binaries with JSON sidecars, CSV data rows with
//! RFC-4180 quoting, JSON manifests, and canonical configuration hashing.
//!
//! All floats destined for CSV go through [`format_float`] (17 significant
//! digits, scientific notation), which round-trips `f64` exactly; JSON is
//! written by `serde_json`, whose shortest-representation floats also
//! round-trip exactly. Every I/O failure carries the offending path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::samplers::{EnsembleSpec, FieldSample};

/// Magic prefix of the field-sample binary format, version 1.
pub const FIELD_MAGIC: &[u8; 8] = b"SGFIELD1";

/// A float with 17 significant digits: enough to reconstruct the exact bits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical serialized form of a configuration: `serde_json` with struct
/// fields in declaration order, no whitespace. Two equal configs always
/// produce identical bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Serialize(e.to_string()))
}

/// Lowercase hex SHA-256 of a canonical serialization.
pub fn hash_hex(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))
}

/// Write a CSV file with RFC-4180 quoting (fields containing commas, quotes,
/// or newlines are quoted; embedded quotes doubled). The byte stream is a
/// pure function of the inputs.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Consistency(format!(
                "CSV row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        writer
            .write_record(row)
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serialize(e.to_string()))?;
    write_bytes(path, &bytes)
}

/// Sidecar metadata stored next to a field-sample binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub grid_ref: String,
    pub spec: EnsembleSpec,
    pub seed: u64,
    pub stream: u64,
    pub n_values: usize,
    pub coeffs: Vec<f64>,
}

/// Path of the JSON sidecar belonging to a field binary: the binary path
/// with `.json` appended.
pub fn sidecar_path(binary: &Path) -> PathBuf {
    let mut os = binary.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

/// Write a sampled field as a flat binary (8-byte magic, little-endian u64
/// count, then the values as little-endian f64) plus a JSON sidecar with the
/// grid reference, ensemble, seed, and coefficients.
pub fn write_field_sample(path: &Path, sample: &FieldSample) -> Result<PathBuf> {
    let mut bytes = Vec::with_capacity(16 + 8 * sample.values.len());
    bytes.extend_from_slice(FIELD_MAGIC);
    bytes.extend_from_slice(&(sample.values.len() as u64).to_le_bytes());
    for v in &sample.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    let sidecar = FieldSidecar {
        grid_ref: sample.grid_ref.clone(),
        spec: sample.spec.clone(),
        seed: sample.seed,
        stream: sample.stream,
        n_values: sample.values.len(),
        coeffs: sample.coeffs.clone(),
    };
    let sc_path = sidecar_path(path);
    write_json(&sc_path, &sidecar)?;
    Ok(sc_path)
}

/// Read a field sample written by [`write_field_sample`], verifying the
/// magic and the value count against the sidecar.
pub fn read_field_sample(path: &Path) -> Result<FieldSample> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 16 || &bytes[..8] != FIELD_MAGIC {
        return Err(Error::Serialize(format!(
            "{}: not a field-sample binary (bad magic or truncated header)",
            path.display()
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let expected = 16 + 8 * count;
    if bytes.len() != expected {
        return Err(Error::Serialize(format!(
            "{}: expected {expected} bytes for {count} values, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let sidecar: FieldSidecar = read_json(&sidecar_path(path))?;
    if sidecar.n_values != count {
        return Err(Error::Consistency(format!(
            "sidecar records {} values, binary holds {count}",
            sidecar.n_values
        )));
    }
    Ok(FieldSample {
        grid_ref: sidecar.grid_ref,
        values,
        coeffs: sidecar.coeffs,
        spec: sidecar.spec,
        seed: sidecar.seed,
        stream: sidecar.stream,
    })
}

/// Manifest written alongside every experiment data file. `complete` is
/// false while the run is in flight (the manifest is written before the data
/// and finalized after), so a crash leaves an honest marker behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_seconds: f64,
    pub complete: bool,
    pub rows: usize,
    pub data_path: String,
}
