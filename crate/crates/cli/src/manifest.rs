use std::path::{Path, PathBuf};

use anyhow::Context;
use ecgibi_core::noisemix::{read_f32_signal, MixWeights};
use ecgibi_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub target_snr_db: i32,
    pub achieved_snr_db: f64,
    /// Effective amplitudes of (em, ma, bw).
    pub gains: [f64; 3],
    pub weights: MixWeights,
    pub seed: u64,
    pub offset: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub dataset: String,
    pub record: String,
    pub split: Split,
    pub source_fs: f64,
    pub channel: String,
    pub n_samples: usize,
    pub clean_file: String,
    pub clean_sha256: String,
    pub beats_file: String,
    pub n_beats: usize,
    pub variants: Vec<VariantEntry>,
}

impl RecordEntry {
    pub fn variant(&self, snr_db: i32) -> anyhow::Result<&VariantEntry> {
        self.variants
            .iter()
            .find(|v| v.target_snr_db == snr_db)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "record {}/{} has no {snr_db} dB variant",
                    self.dataset, self.record
                ))
                .into()
            })
    }
}

/// Everything `prepare` wrote; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub target_fs: f64,
    pub max_samples: usize,
    pub mix_seed: u64,
    pub weights: MixWeights,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> anyhow::Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            Error::InvalidInput(format!(
                "no dataset manifest at {}; run `prepare` first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("parsing {}", path.display()))
    }

    pub fn find(&self, dataset: &str, record: &str) -> Option<&RecordEntry> {
        self.records
            .iter()
            .find(|r| r.dataset == dataset && r.record == record)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).map_err(|_| Error::NotFound { path: path.into() })?;
    Ok(sha256_hex(&bytes))
}

/// Read a prepared signal, checking it against the manifest hash.
pub fn read_signal(dir: &Path, file: &str, sha256: &str) -> anyhow::Result<Vec<f64>> {
    let path: PathBuf = dir.join(file);
    let actual = sha256_file(&path)?;
    if actual != sha256 {
        return Err(Error::InvalidInput(format!(
            "{} does not match the manifest checksum; re-run `prepare`",
            path.display()
        ))
        .into());
    }
    Ok(read_f32_signal(&path)?.2)
}
