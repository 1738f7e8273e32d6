//! Result directories: writing outputs with their manifest, and replaying
//! a directory to check that it still reproduces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{self, Artifact};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
    /// True when the content depends on the seed.
    pub stochastic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: String,
    pub files: Vec<FileEntry>,
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_for(cfg: &ExperimentConfig, artifacts: &[Artifact]) -> Manifest {
    Manifest {
        manifest_version: MANIFEST_VERSION,
        experiment: cfg.experiment.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        model_hash: cfg.model_hash(),
        files: artifacts
            .iter()
            .map(|a| FileEntry {
                name: a.name.clone(),
                sha256: sha(&a.bytes),
                bytes: a.bytes.len(),
                stochastic: a.stochastic,
            })
            .collect(),
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

/// Runs the experiment and writes `config.json`, every artifact and
/// `manifest.json` into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    let artifacts = experiments::run(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out.display(), e))?;
    write(&out.join(CONFIG), cfg.pretty_json().as_bytes())?;
    for a in &artifacts {
        write(&out.join(&a.name), &a.bytes)?;
    }
    let manifest = manifest_for(cfg, &artifacts);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&out.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mismatch {
    pub file: String,
    pub stochastic: bool,
    /// `stored` (file differs from its manifest hash), `regenerated`
    /// (re-run output differs from the file) or `missing`.
    pub kind: String,
    /// 1-based line of the first difference; line 1 of a CSV is its header.
    pub line: Option<usize>,
    /// CSV column of the first differing cell.
    pub column: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    pub report_version: u32,
    pub experiment: String,
    pub stored_seed: u64,
    pub replay_seed: u64,
    pub config_hash_ok: bool,
    pub files_checked: usize,
    pub deterministic_mismatches: usize,
    pub stochastic_mismatches: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn all_match(&self) -> bool {
        self.config_hash_ok && self.mismatches.is_empty()
    }
}

/// First differing line, and for CSV the name of the first differing column.
fn locate(name: &str, a: &[u8], b: &[u8]) -> (Option<usize>, Option<String>) {
    let a = String::from_utf8_lossy(a);
    let b = String::from_utf8_lossy(b);
    let mut la = a.split('\n');
    let mut lb = b.split('\n');
    let header = a.lines().next().unwrap_or("");
    let mut n = 0;
    loop {
        n += 1;
        let (x, y) = (la.next(), lb.next());
        if x.is_none() && y.is_none() {
            return (None, None);
        }
        if x == y {
            continue;
        }
        let column = match (name.ends_with(".csv"), x, y) {
            (true, Some(x), Some(y)) if n > 1 && !x.is_empty() && !y.is_empty() => x
                .split(',')
                .zip(y.split(','))
                .position(|(p, q)| p != q)
                .and_then(|k| header.split(',').nth(k))
                .map(str::to_string),
            _ => None,
        };
        return (Some(n), column);
    }
}

/// Re-executes the stored configuration, optionally with another seed, and
/// compares every recorded output byte for byte.
pub fn replay(dir: &Path, seed_override: Option<u64>) -> CliResult<ReplayReport> {
    let mpath = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| CliError::io(mpath.display(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::io(mpath.display(), format!("bad manifest: {e}")))?;
    let mut cfg = ExperimentConfig::load(&dir.join(CONFIG))?;
    let config_hash_ok = cfg.hash() == manifest.config_hash;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let fresh = experiments::run(&cfg)?;
    let mut mismatches = Vec::new();
    for entry in &manifest.files {
        let mismatch = |kind: &str, line, column| Mismatch {
            file: entry.name.clone(),
            stochastic: entry.stochastic,
            kind: kind.into(),
            line,
            column,
        };
        let stored = match std::fs::read(dir.join(&entry.name)) {
            Ok(b) => b,
            Err(_) => {
                mismatches.push(mismatch("missing", None, None));
                continue;
            }
        };
        let regenerated = fresh.iter().find(|a| a.name == entry.name).map(|a| a.bytes.as_slice());
        match regenerated {
            None => mismatches.push(mismatch("missing", None, None)),
            Some(r) if r != stored.as_slice() => {
                let (line, column) = locate(&entry.name, &stored, r);
                mismatches.push(mismatch("regenerated", line, column));
            }
            Some(_) if sha(&stored) != entry.sha256 => mismatches.push(mismatch("stored", None, None)),
            Some(_) => {}
        }
    }
    let deterministic_mismatches = mismatches.iter().filter(|m| !m.stochastic).count();
    Ok(ReplayReport {
        report_version: REPORT_VERSION,
        experiment: manifest.experiment,
        stored_seed: manifest.seed,
        replay_seed: cfg.seed,
        config_hash_ok,
        files_checked: manifest.files.len(),
        deterministic_mismatches,
        stochastic_mismatches: mismatches.len() - deterministic_mismatches,
        mismatches,
    })
}
