use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct FileEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    config: &'a PipelineConfig,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn entry(path: &Path) -> Result<FileEntry, CliError> {
    Ok(FileEntry {
        file: path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
        sha256: hash_file(path)?,
    })
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

/// Writes `<out>/<command>.manifest.json`. File entries carry names, not
/// paths, so identical runs into different directories match.
pub fn write(out: &Path, command: &str, cfg: &PipelineConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let m = Manifest {
        tool: "lanesight",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: config_hash(cfg),
        config: cfg,
        inputs: inputs.iter().map(|p| entry(p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| entry(p)).collect::<Result<_, _>>()?,
    };
    let path = out.join(format!("{command}.manifest.json"));
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}
