//! Provenance records: the resolved configuration, seed, tool and format
//! versions, and SHA-256 digests of every input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use medmus_core::geometry::io::{read_volume_header, FORMAT_VERSION};
use medmus_core::tensor::checkpoint::CHECKPOINT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// File name used for records written inside output directories.
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub threads: usize,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub stack_format_version: u32,
    pub checkpoint_version: u32,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Invocation details shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub args: Vec<String>,
    pub threads: usize,
}

impl Context {
    pub fn new(args: Vec<String>, threads: usize) -> Self {
        Context { args, threads }
    }

    pub fn record(
        &self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<Provenance> {
        Ok(Provenance {
            tool: "medmus".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: self.args.clone(),
            threads: self.threads,
            seed,
            config,
            stack_format_version: FORMAT_VERSION,
            checkpoint_version: CHECKPOINT_VERSION,
            inputs: digest_all(inputs)?,
            outputs: digest_all(outputs)?,
        })
    }
}

impl Provenance {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Where the record for `out` goes: inside it for directories, otherwise
/// next to it as `<stem>.provenance.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join(PROVENANCE_FILE);
    }
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.provenance.json"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_all(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        for f in artifact_files(p)? {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            out.push(FileDigest {
                path: f.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(out)
}

/// Files making up an artifact: everything under a directory (sorted, minus
/// provenance records), or a file plus the raw payload of a volume header.
pub fn artifact_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == PROVENANCE_FILE) {
                continue;
            }
            files.extend(artifact_files(&e)?);
        }
        return Ok(files);
    }
    if !path.is_file() {
        anyhow::bail!("{} does not exist", path.display());
    }
    let mut files = vec![path.to_owned()];
    if path.extension().is_some_and(|e| e == "json") {
        if let Ok(h) = read_volume_header(path) {
            files.push(path.with_file_name(h.data_file));
        }
    }
    Ok(files)
}
