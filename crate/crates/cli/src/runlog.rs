//! Run manifests: enough to repeat a run and check that it reproduced.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "lesionkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    /// Every parameter of the run, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Collects the files a subcommand touches.
#[derive(Default)]
pub struct RunLog {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunLog {
    pub fn input(&mut self, path: &Path) -> PathBuf {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    pub fn output(&mut self, path: &Path) -> PathBuf {
        self.outputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn finish(
        self,
        command: &str,
        argv: Vec<String>,
        config: serde_json::Value,
    ) -> anyhow::Result<RunManifest> {
        let digests = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<anyhow::Result<Vec<_>>>();
        Ok(RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            argv,
            cwd: std::env::current_dir().context("resolving the working directory")?,
            config,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
        })
    }
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> anyhow::Result<()> {
    let json = serde_json::to_vec_pretty(manifest)?;
    lesionkit::io::write_atomic(path, |w| {
        w.write_all(&json)?;
        w.write_all(b"\n")
    })?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest =
        serde_json::from_slice(&bytes).with_context(|| format!("{} is not a run manifest", path.display()))?;
    if m.tool != TOOL {
        bail!("{} was written by {:?}, not {TOOL}", path.display(), m.tool);
    }
    Ok(m)
}

/// Fails on the first recorded file whose current content differs.
pub fn verify(files: &[FileDigest], what: &str) -> anyhow::Result<()> {
    for f in files {
        let now = FileDigest::of(&f.path).with_context(|| format!("{what} {}", f.path.display()))?;
        if now.sha256 != f.sha256 {
            bail!("{what} {} has sha256 {}, manifest records {}", f.path.display(), now.sha256, f.sha256);
        }
    }
    Ok(())
}
