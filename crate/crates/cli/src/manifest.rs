//! Content-addressed stage manifest, one JSON line per completed stage.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestLine {
    pub stage: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timestamp_ms: u128,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

fn digest_map(out_dir: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for path in paths {
        let key = path
            .strip_prefix(out_dir)
            .unwrap_or(path)
            .display()
            .to_string();
        map.insert(key, sha256_file(path)?);
    }
    Ok(map)
}

/// Append one stage line to `<out>/manifest.jsonl`.
pub fn record_stage(
    out_dir: &Path,
    stage: &str,
    seed: u64,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let line = ManifestLine {
        stage: stage.to_string(),
        seed,
        inputs: digest_map(out_dir, inputs)?,
        outputs: digest_map(out_dir, outputs)?,
        timestamp_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock after epoch")
            .as_millis(),
    };
    let path = out_dir.join("manifest.jsonl");
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    use std::io::Write;
    writeln!(file, "{}", serde_json::to_string(&line)?)?;
    Ok(())
}
