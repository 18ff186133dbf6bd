//! Per-stage run manifests.
//!
//! Each stage directory holds `manifest.json` (config hash, seed, digests of
//! every input read and output written) and `timestamps.json`. The manifest
//! is a pure function of the inputs, so reruns reproduce it byte for byte;
//! wall-clock times only ever go to the timestamps file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const TIMESTAMPS: &str = "timestamps.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
    /// Every file the stage read, in first-read order.
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timestamps {
    stage: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<(String, u64)> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((format!("{:x}", h.finalize()), n))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn rel_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Subcommand that writes a stage directory.
fn producer(stage: &str) -> &str {
    match stage.split('/').next().unwrap_or(stage) {
        "cohort" => "simulate",
        "instances" => "extract",
        "cnn" => "train-cnn",
        "scores" => "score",
        "landmark" => "landmark-fit",
        other => other,
    }
}

pub fn read_manifest(root: &Path, stage: &str) -> Result<RunManifest> {
    let path = root.join(stage).join(MANIFEST);
    if !path.exists() {
        return Err(CliError::MissingInput {
            hint: format!("run `deeplm {}` with --out-dir {} first", producer(stage), root.display()),
            path,
        });
    }
    Ok(serde_json::from_slice(&fs::read(&path)?)?)
}

/// One running stage: verifies upstream artifacts against the manifests
/// that produced them and records what it reads and writes.
pub struct StageRun<'a> {
    root: PathBuf,
    stage: String,
    config: &'a Config,
    started: u128,
    upstream: BTreeMap<String, RunManifest>,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl<'a> StageRun<'a> {
    /// `stage` may be nested (`evaluate/pi1`); its directory is created empty.
    pub fn start(root: &Path, stage: &str, config: &'a Config) -> Result<Self> {
        let dir = root.join(stage);
        if dir.exists() {
            // Stale outputs of an earlier configuration must not survive.
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            root: root.to_path_buf(),
            stage: stage.to_string(),
            config,
            started: now_ms(),
            upstream: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.stage)
    }

    pub fn config(&self) -> &Config {
        self.config
    }

    fn manifest_of(&mut self, stage: &str) -> Result<&RunManifest> {
        if !self.upstream.contains_key(stage) {
            let m = read_manifest(&self.root, stage)?;
            self.upstream.insert(stage.to_string(), m);
        }
        Ok(&self.upstream[stage])
    }

    /// Checks `rel` (relative to the run directory) against the manifest of
    /// `stage` and logs it as read. Returns the absolute path.
    pub fn input(&mut self, stage: &str, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        let expected = self
            .manifest_of(stage)?
            .outputs
            .iter()
            .find(|d| d.path == rel)
            .cloned()
            .ok_or_else(|| CliError::MissingInput {
                path: path.clone(),
                hint: format!("not an output of stage `{stage}`"),
            })?;
        if !path.exists() {
            return Err(CliError::MissingInput {
                path,
                hint: format!("listed by stage `{stage}` but absent; rerun it"),
            });
        }
        let (sha, bytes) = file_digest(&path)?;
        if sha != expected.sha256 {
            return Err(CliError::Stale {
                path,
                stage: stage.to_string(),
                expected: expected.sha256,
                actual: sha,
            });
        }
        if !self.inputs.iter().any(|d| d.path == rel) {
            self.inputs.push(FileDigest {
                path: rel.to_string(),
                sha256: sha,
                bytes,
            });
        }
        Ok(path)
    }

    /// Verifies and logs every output of `stage` whose path starts with
    /// `prefix`. Returns the stage directory.
    pub fn input_tree(&mut self, stage: &str, prefix: &str) -> Result<PathBuf> {
        let paths: Vec<String> = self
            .manifest_of(stage)?
            .outputs
            .iter()
            .filter(|d| d.path.starts_with(prefix))
            .map(|d| d.path.clone())
            .collect();
        if paths.is_empty() {
            return Err(CliError::MissingInput {
                path: self.root.join(prefix),
                hint: format!("stage `{stage}` wrote nothing under it"),
            });
        }
        for p in paths {
            self.input(stage, &p)?;
        }
        Ok(self.root.join(prefix))
    }

    /// Registers a file written by this stage (absolute path).
    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    /// Path inside the stage directory, registered as an output.
    pub fn out_path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir().join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.outputs {
            let rel = rel_string(&self.root, p);
            if !seen.insert(rel.clone()) {
                continue;
            }
            let (sha256, bytes) = file_digest(p)?;
            outputs.push(FileDigest { path: rel, sha256, bytes });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let config = self.config.to_text();
        let mut versions = BTreeMap::new();
        versions.insert("deeplm".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            stage: self.stage.clone(),
            seed: self.config.seed(),
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            inputs: self.inputs,
            outputs,
            versions,
        };
        let dir = self.root.join(&self.stage);
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        let ts = Timestamps {
            stage: self.stage,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        };
        fs::write(dir.join(TIMESTAMPS), serde_json::to_vec_pretty(&ts)?)?;
        Ok(manifest)
    }
}
