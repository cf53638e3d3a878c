//! Run artifacts: per-trial and per-step tables as CSV, aggregates as
//! JSON, and a manifest inventorying every emitted file by content
//! digest. All output is deterministic for a given run result, so
//! re-emitting reproduces the digests byte for byte; only the manifest
//! timestamp moves.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;
use sha2::{Digest, Sha256};

use qht_core::likelihood::Hypothesis;
use qht_core::scenarios::RunResult;
use qht_core::trajectories::MeasurementRecord;

use crate::CliError;

/// Stamped into every manifest; bump when any emitted file changes shape.
pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Inventory of one invocation: what ran, with which effective
/// configuration, and exactly which bytes it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub format_version: u32,
    pub command: String,
    pub created_utc: String,
    pub seed: u64,
    /// Configuration as parsed from the input file.
    pub config: serde_json::Value,
    /// Run description with every default applied.
    pub resolved: serde_json::Value,
    pub files: Vec<FileEntry>,
    /// Outputs intentionally not written, with reasons.
    pub omitted: Vec<String>,
    /// Digest over all emitted files: sha256 of their sorted
    /// `name:sha256` lines.
    pub bundle_sha256: String,
}

/// Collects output files for one directory, then seals them under a
/// manifest.
pub struct Emitter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    omitted: Vec<String>,
}

impl Emitter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            omitted: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn note_omitted(&mut self, note: impl Into<String>) {
        self.omitted.push(note.into());
    }

    /// Write the manifest and hand it back.
    pub fn finish(
        mut self,
        command: &str,
        seed: u64,
        config: serde_json::Value,
        resolved: serde_json::Value,
    ) -> Result<RunManifest, CliError> {
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        let mut lines = String::new();
        for f in &self.files {
            lines.push_str(&format!("{}:{}\n", f.name, f.sha256));
        }
        let manifest = RunManifest {
            tool: "qht",
            version: env!("CARGO_PKG_VERSION"),
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            created_utc: Utc::now().to_rfc3339(),
            seed,
            config,
            resolved,
            files: self.files,
            omitted: self.omitted,
            bundle_sha256: sha256_hex(lines.as_bytes()),
        };
        let path = self.dir.join(MANIFEST_NAME);
        let body = to_pretty_json(&manifest)?;
        fs::write(&path, body)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("serialization failed: {e}")))?;
    body.push('\n');
    Ok(body)
}

fn decision_id(d: Option<Hypothesis>) -> &'static str {
    match d {
        Some(Hypothesis::Null) => "null",
        Some(Hypothesis::Alternative) => "alternative",
        None => "",
    }
}

/// One row per trial: index, final log-likelihood ratio, decision.
/// Faulted trials keep their row with the value fields empty.
pub fn trials_csv(result: &RunResult) -> String {
    let mut csv = String::from("trial,log_lambda,decision\n");
    for o in &result.outcomes {
        let ll = o.log_lambda.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", o.trial, ll, decision_id(o.decision)));
    }
    csv
}

/// Thinned single-trial trajectory, when the run stored one.
pub fn trajectory_csv(result: &RunResult) -> Option<String> {
    let tr = result.trajectory.as_ref()?;
    if tr.t.is_empty() {
        return None;
    }
    let mut csv = String::from("t,dy,mu1,mu0,log_lambda\n");
    for k in 0..tr.t.len() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            tr.t[k], tr.dy[k], tr.mu1[k], tr.mu0[k], tr.log_lambda[k]
        ));
    }
    Some(csv)
}

/// Record increments against the time after each step.
pub fn record_csv(record: &MeasurementRecord) -> String {
    let mut csv = String::from("t,dy\n");
    for (k, dy) in record.increments.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", record.time_after(k), dy));
    }
    csv
}

/// Write the full output set of a scenario run: per-trial CSV, aggregate
/// JSON, the optional trajectory CSV, and the sealing manifest.
pub fn emit_run(
    dir: &Path,
    command: &str,
    result: &RunResult,
    seed: u64,
    config: serde_json::Value,
    resolved: serde_json::Value,
) -> Result<RunManifest, CliError> {
    let mut emitter = Emitter::new(dir)?;
    emitter.write("trials.csv", &trials_csv(result))?;
    emitter.write("aggregate.json", &to_pretty_json(result)?)?;
    match trajectory_csv(result) {
        Some(csv) => emitter.write("trajectory.csv", &csv)?,
        None => emitter.note_omitted("trajectory.csv: run stored no trajectory"),
    }
    emitter.finish(command, seed, config, resolved)
}
