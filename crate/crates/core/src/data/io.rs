//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` and one `<split>.bin` per split.
//! Each binary file is little-endian:
//!
//! ```text
//! magic  8 bytes  "GNASDS01"
//! n, c, h, w      u64 each
//! images          n*c*h*w f64, NCHW order
//! y1              n f64
//! y2              2n f64, (column, row) per example
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Benchmark, DataError, GeneratorConfig, Split};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GNASDS01";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub file: String,
    pub n: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator_version: u32,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub source_train: SplitEntry,
    pub source_test: SplitEntry,
    pub targets: Vec<SplitEntry>,
}

impl Manifest {
    /// Hash over all split hashes; identifies the dataset as a whole.
    pub fn dataset_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in std::iter::once(&self.source_train).chain([&self.source_test]).chain(&self.targets) {
            h.update(e.name.as_bytes());
            h.update(e.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Serialized bytes of one split.
pub fn split_bytes(split: &Split) -> Vec<u8> {
    let shape = split.images.shape();
    let mut out = Vec::with_capacity(40 + 8 * (split.images.numel() + 3 * split.len()));
    out.extend_from_slice(MAGIC);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in split.images.data().iter().chain(&split.y1).chain(&split.y2) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_split(name: &str, bytes: &[u8]) -> Result<Split, DataError> {
    let bad = |m: &str| DataError::Format(format!("{name}: {m}"));
    if bytes.len() < 40 || &bytes[..8] != MAGIC {
        return Err(bad("missing header"));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().expect("8 bytes")) as usize;
    let (n, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_add(3 * n))
        .ok_or_else(|| bad("header overflows"))?;
    if bytes.len() != 40 + 8 * count {
        return Err(bad(&format!("expected {} bytes, found {}", 40 + 8 * count, bytes.len())));
    }
    let values: Vec<f64> =
        bytes[40..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let m = n * c * h * w;
    let images = Tensor::from_vec([n, c, h, w], values[..m].to_vec()).map_err(|e| bad(&e.to_string()))?;
    Ok(Split { name: name.to_string(), images, y1: values[m..m + n].to_vec(), y2: values[m + n..].to_vec() })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_split(dir: &Path, split: &Split) -> Result<SplitEntry, DataError> {
    let bytes = split_bytes(split);
    let file = format!("{}.bin", split.name);
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok(SplitEntry { name: split.name.clone(), file, n: split.len(), sha256: sha256_hex(&bytes) })
}

/// Writes every split plus the manifest; returns the manifest.
pub fn save_benchmark(b: &Benchmark, dir: &Path) -> Result<Manifest, DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        generator_version: b.version,
        seed: b.seed,
        config: b.config.clone(),
        source_train: write_split(dir, &b.source_train)?,
        source_test: write_split(dir, &b.source_test)?,
        targets: b.targets.iter().map(|s| write_split(dir, s)).collect::<Result<_, _>>()?,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads one split and checks it against its recorded hash.
pub fn load_split(dir: &Path, entry: &SplitEntry) -> Result<Split, DataError> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256 {
        return Err(DataError::Format(format!("{}: hash {digest} does not match manifest {}", entry.name, entry.sha256)));
    }
    let split = parse_split(&entry.name, &bytes)?;
    if split.len() != entry.n {
        return Err(DataError::Format(format!("{}: {} examples, manifest says {}", entry.name, split.len(), entry.n)));
    }
    Ok(split)
}

pub fn load_benchmark(dir: &Path) -> Result<(Benchmark, Manifest), DataError> {
    let m = load_manifest(dir)?;
    let b = Benchmark {
        seed: m.seed,
        version: m.generator_version,
        config: m.config.clone(),
        source_train: load_split(dir, &m.source_train)?,
        source_test: load_split(dir, &m.source_test)?,
        targets: m.targets.iter().map(|e| load_split(dir, e)).collect::<Result<_, _>>()?,
    };
    Ok((b, m))
}
