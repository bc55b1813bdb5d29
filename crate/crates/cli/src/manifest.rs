use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Context, Result};

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub checkpoint_format: u32,
    pub command: &'a str,
    pub args: &'a [String],
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `<dir>/manifest.json` for directories, `<file>.manifest.json` otherwise.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn write_manifest(
    primary: &Path,
    command: &str,
    args: &[String],
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<PathBuf> {
    let show = |p: &&Path| p.display().to_string();
    let m = Manifest {
        tool: "seqlearn",
        version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: seqlearn_core::tensor::CHECKPOINT_VERSION,
        command,
        args,
        seed: cfg.effective_seed(),
        config_hash: config_hash(cfg),
        config: cfg,
        inputs: inputs.iter().map(show).collect(),
        outputs: outputs.iter().map(show).collect(),
    };
    let path = manifest_path(primary);
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).at(&path)?;
    Ok(path)
}
