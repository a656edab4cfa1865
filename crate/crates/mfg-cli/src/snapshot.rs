//! Field snapshot writers and readers. Two formats: `csv` with a
//! `k,i,j,value` header and 17-significant-digit decimals (round-trips
//! f64 exactly), and `raw` with a 32-byte header (magic `MFGF0001`,
//! then slices/rows/cols as little-endian u64) followed by the values as
//! little-endian f64 in slice-major order. Every snapshot gets a `.meta`
//! sidecar recording format, shape and a SHA-256 checksum.

use std::io::Write;
use std::path::{Path, PathBuf};

use mfg_core::grid::ScalarField;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const RAW_MAGIC: &[u8; 8] = b"MFGF0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    Raw,
}

impl SnapshotFormat {
    pub fn name(&self) -> &'static str {
        match self {
            SnapshotFormat::Csv => "csv",
            SnapshotFormat::Raw => "raw",
        }
    }

    pub fn extension(&self) -> &'static str {
        self.name()
    }
}

/// Sidecar contents for one written snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotMeta {
    pub format: SnapshotFormat,
    pub slices: usize,
    pub n: usize,
    pub sha256: String,
    /// Original time index when the file holds a single extracted slice.
    pub time_index: Option<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn encode_csv(field: &ScalarField) -> Vec<u8> {
    let mut out = String::from("k,i,j,value\n");
    let n = field.n();
    for k in 0..field.slices() {
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!("{k},{i},{j},{:.16e}\n", field.at(k, i, j)));
            }
        }
    }
    out.into_bytes()
}

fn encode_raw(field: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + field.len() * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(field.slices() as u64).to_le_bytes());
    out.extend_from_slice(&(field.n() as u64).to_le_bytes());
    out.extend_from_slice(&(field.n() as u64).to_le_bytes());
    for v in field.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write one snapshot plus its `.meta` sidecar; returns the sidecar.
pub fn write_field_snapshot(
    field: &ScalarField,
    path: &Path,
    format: SnapshotFormat,
    time_index: Option<usize>,
) -> Result<SnapshotMeta, CliError> {
    let bytes = match format {
        SnapshotFormat::Csv => encode_csv(field),
        SnapshotFormat::Raw => encode_raw(field),
    };
    let meta = SnapshotMeta {
        format,
        slices: field.slices(),
        n: field.n(),
        sha256: sha256_hex(&bytes),
        time_index,
    };
    let write = |p: &Path, data: &[u8]| -> Result<(), CliError> {
        let mut f = std::fs::File::create(p)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", p.display())))?;
        f.write_all(data)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    };
    write(path, &bytes)?;
    let mut sidecar = String::new();
    sidecar.push_str(&format!("format = {}\n", meta.format.name()));
    sidecar.push_str(&format!("slices = {}\n", meta.slices));
    sidecar.push_str(&format!("n = {}\n", meta.n));
    if let Some(k) = meta.time_index {
        sidecar.push_str(&format!("time_index = {k}\n"));
    }
    sidecar.push_str(&format!("sha256 = {}\n", meta.sha256));
    write(&sidecar_path(path), sidecar.as_bytes())?;
    Ok(meta)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

pub fn read_sidecar(path: &Path) -> Result<SnapshotMeta, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut format = None;
    let mut slices = None;
    let mut n = None;
    let mut sha256 = None;
    let mut time_index = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                format = Some(match value {
                    "csv" => SnapshotFormat::Csv,
                    "raw" => SnapshotFormat::Raw,
                    other => {
                        return Err(CliError::Io(format!(
                            "{}: unknown snapshot format `{other}`",
                            path.display()
                        )))
                    }
                })
            }
            "slices" => slices = value.parse().ok(),
            "n" => n = value.parse().ok(),
            "sha256" => sha256 = Some(value.to_string()),
            "time_index" => time_index = value.parse().ok(),
            _ => {}
        }
    }
    match (format, slices, n, sha256) {
        (Some(format), Some(slices), Some(n), Some(sha256)) => {
            Ok(SnapshotMeta { format, slices, n, sha256, time_index })
        }
        _ => Err(CliError::Io(format!("{}: incomplete sidecar", path.display()))),
    }
}

fn decode_csv(bytes: &[u8], path: &Path) -> Result<ScalarField, CliError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CliError::Io(format!("{}: not utf-8", path.display())))?;
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut max_k = 0usize;
    let mut max_i = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "k,i,j,value" {
                return Err(CliError::Io(format!(
                    "{}: bad csv header `{line}`",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(CliError::Io(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                lineno + 1
            )));
        }
        let parse_idx = |s: &str| -> Result<usize, CliError> {
            s.trim().parse().map_err(|_| {
                CliError::Io(format!("{}:{}: bad index `{s}`", path.display(), lineno + 1))
            })
        };
        let k = parse_idx(parts[0])?;
        let i = parse_idx(parts[1])?;
        let j = parse_idx(parts[2])?;
        let v: f64 = parts[3].trim().parse().map_err(|_| {
            CliError::Io(format!("{}:{}: bad value", path.display(), lineno + 1))
        })?;
        max_k = max_k.max(k);
        max_i = max_i.max(i.max(j));
        rows.push((k, i, j, v));
    }
    let slices = max_k + 1;
    let n = max_i + 1;
    let mut field = ScalarField::zeros(slices, n);
    for (k, i, j, v) in rows {
        field.set(k, i, j, v);
    }
    Ok(field)
}

fn decode_raw(bytes: &[u8], path: &Path) -> Result<ScalarField, CliError> {
    if bytes.len() < 32 || &bytes[..8] != RAW_MAGIC {
        return Err(CliError::Io(format!("{}: missing raw magic", path.display())));
    }
    let u64_at = |off: usize| {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[off..off + 8]);
        u64::from_le_bytes(buf) as usize
    };
    let slices = u64_at(8);
    let rows = u64_at(16);
    let cols = u64_at(24);
    if rows != cols {
        return Err(CliError::Io(format!("{}: non-square spatial shape", path.display())));
    }
    let expected = 32 + slices * rows * cols * 8;
    if bytes.len() != expected {
        return Err(CliError::Io(format!(
            "{}: payload size {} does not match header shape ({} expected)",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut data = Vec::with_capacity(slices * rows * cols);
    for chunk in bytes[32..].chunks_exact(8) {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(chunk);
        data.push(f64::from_le_bytes(buf));
    }
    Ok(ScalarField::from_vec(slices, rows, data))
}

/// Read a snapshot back; when the sidecar exists the checksum and shape
/// are verified first.
pub fn read_field_snapshot(path: &Path) -> Result<(ScalarField, SnapshotFormat), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let sidecar = sidecar_path(path);
    let meta = if sidecar.exists() { Some(read_sidecar(&sidecar)?) } else { None };
    if let Some(meta) = &meta {
        let actual = sha256_hex(&bytes);
        if actual != meta.sha256 {
            return Err(CliError::Io(format!(
                "{}: checksum mismatch (file {actual}, sidecar {})",
                path.display(),
                meta.sha256
            )));
        }
    }
    let format = match meta.as_ref().map(|m| m.format) {
        Some(f) => f,
        None if bytes.starts_with(RAW_MAGIC) => SnapshotFormat::Raw,
        None => SnapshotFormat::Csv,
    };
    let field = match format {
        SnapshotFormat::Csv => decode_csv(&bytes, path)?,
        SnapshotFormat::Raw => decode_raw(&bytes, path)?,
    };
    if let Some(meta) = &meta {
        if field.slices() != meta.slices || field.n() != meta.n {
            return Err(CliError::Io(format!(
                "{}: shape {}x{}x{} does not match sidecar {}x{}x{}",
                path.display(),
                field.slices(),
                field.n(),
                field.n(),
                meta.slices,
                meta.n,
                meta.n
            )));
        }
    }
    Ok((field, format))
}
