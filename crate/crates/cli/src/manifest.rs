//! Run manifests.
//!
//! `manifest.json` holds only what determines the outputs (inputs with
//! digests, seed, version, parameters, output digests), so identical runs
//! produce byte-identical manifests. Wall-clock data goes to `run.json`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn display(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    parameters: &'a serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    started_unix_s: f64,
    finished_unix_s: f64,
    elapsed_s: f64,
    threads: usize,
}

/// Collects inputs and outputs of one subcommand run.
pub struct Recorder {
    command: String,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: SystemTime,
    clock: Instant,
}

fn unix(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl Recorder {
    pub fn new(command: &str, out: &Path) -> anyhow::Result<Recorder> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Recorder {
            command: command.to_string(),
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    /// Path of an output file, registered for the manifest.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let rel = rel.as_ref().to_path_buf();
        self.outputs.push(rel.clone());
        self.out.join(rel)
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.inputs.push(path.as_ref().to_path_buf());
    }

    /// Registers a dataset root: its index and every file it references.
    pub fn dataset_input(&mut self, root: &Path) -> anyhow::Result<()> {
        let index = vessel_agreement::dataset::DatasetIndex::load(root)?;
        self.input(root.join(vessel_agreement::dataset::INDEX_FILE));
        for e in &index.images {
            self.input(root.join(&e.image));
            for a in &e.annotations {
                for p in [&a.mask, &a.contours, &a.centerline_udf, &a.edge_sdf]
                    .into_iter()
                    .flatten()
                {
                    self.input(root.join(p));
                }
            }
        }
        Ok(())
    }

    /// Registers every file under `dir` (relative to the output root) as an
    /// output.
    pub fn output_tree(&mut self, dir: &str) -> anyhow::Result<()> {
        let mut stack = vec![PathBuf::from(dir)];
        while let Some(rel) = stack.pop() {
            for entry in std::fs::read_dir(self.out.join(&rel))? {
                let entry = entry?;
                let child = rel.join(entry.file_name());
                if entry.file_type()?.is_dir() {
                    stack.push(child);
                } else {
                    self.outputs.push(child);
                }
            }
        }
        Ok(())
    }

    pub fn finish(
        mut self,
        seed: u64,
        parameters: &serde_json::Value,
        threads: usize,
    ) -> anyhow::Result<()> {
        self.outputs.sort();
        self.outputs.dedup();
        self.outputs
            .retain(|p| p != Path::new(MANIFEST_FILE) && p != Path::new(RUN_FILE));
        let digest = |p: &Path, shown: String| -> anyhow::Result<FileDigest> {
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(p)?,
            })
        };
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(p, display(p)))
            .collect::<anyhow::Result<_>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|p| digest(&self.out.join(p), display(p)))
            .collect::<anyhow::Result<_>>()?;
        let manifest = Manifest {
            tool: "vagree",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            seed,
            parameters,
            inputs,
            outputs,
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)?;
        let finished = SystemTime::now();
        let run = RunRecord {
            command: &self.command,
            started_unix_s: unix(self.started),
            finished_unix_s: unix(finished),
            elapsed_s: self.clock.elapsed().as_secs_f64(),
            threads,
        };
        write_json(&self.out.join(RUN_FILE), &run)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
