//! Report writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use persuasion::dataset::SessionSchema;
use persuasion::Dataset;

use crate::args::InputArgs;

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects written files and input digests, then writes `manifest.json`.
pub struct Run {
    dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest(&bytes),
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: digest(contents.as_bytes()),
        });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn finish<C: Serialize>(self, command: &str, config: &C) -> Result<()> {
        let manifest = Manifest {
            tool: "persuasion",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Loads the corpus, recording input digests. Rejected rows fail the load
/// unless `lenient` is set.
pub fn load(input: &InputArgs, run: &mut Run) -> Result<Dataset> {
    run.input(&input.sessions)?;
    if let Some(p) = &input.profiles {
        run.input(p)?;
    }
    let (ds, rejected) = Dataset::load(
        &input.sessions,
        input.profiles.as_deref(),
        &SessionSchema::default(),
        input.lenient,
    )
    .with_context(|| format!("loading {}", input.sessions.display()))?;
    for r in &rejected {
        log::warn!("dropped {r}");
    }
    Ok(ds)
}
