//! Run directories, CSV output and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use suspension_core::particles::ConfigDiagnostics;

use crate::config::RunConfig;
use crate::error::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sign and metric conventions recorded with every run.
pub fn sign_conventions() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("contraction".into(), "(M:grad Phi)_a = sum_{g,b} M_{gb} d_b Phi_{ag}".into());
    m.insert("rotlet".into(), "T x x / (8 pi |x|^3) = -1/2 [T]_M : grad Phi".into());
    m.insert("velocity_from_stress".into(), "u(x) = + sum_y sigma(y) : grad Phi(x - y) h^3".into());
    m.insert("stress".into(), "sigma = gamma_E int (Id - 3 xi xi) f".into());
    m.insert(
        "torque_reaction_sign".into(),
        format!("{} (multiplies the stochastic part of the Stokes pairing)", suspension_core::pairing::TORQUE_REACTION_SIGN),
    );
    m.insert("w1_ground_cost".into(), "|x - x'| + geodesic(xi, xi')".into());
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub mode: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub diagnostics: Vec<ConfigDiagnostics>,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    pub sign_conventions: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

/// An output directory `out/<run-id>/` being filled by one run.
pub struct RunDir {
    pub path: PathBuf,
    pub run_id: String,
    config_hash: String,
    mode: String,
    files: Vec<String>,
    seeds: Vec<u64>,
    diagnostics: Vec<ConfigDiagnostics>,
    notes: Vec<String>,
    started: Instant,
}

impl RunDir {
    pub fn create(out_root: &Path, config: &RunConfig) -> Result<RunDir> {
        let run_id = config.run_id();
        let path = out_root.join(&run_id);
        fs::create_dir_all(&path)?;
        let mut dir = RunDir {
            path,
            run_id,
            config_hash: config.hash(),
            mode: config.mode.name().to_string(),
            files: Vec::new(),
            seeds: vec![config.seed],
            diagnostics: Vec::new(),
            notes: Vec::new(),
            started: Instant::now(),
        };
        dir.write_json("config.json", &serde_json::from_str::<serde_json::Value>(&config.canonical_json())?)?;
        Ok(dir)
    }

    pub fn record_seed(&mut self, seed: u64) {
        if !self.seeds.contains(&seed) {
            self.seeds.push(seed);
        }
    }

    pub fn record_diagnostics(&mut self, d: ConfigDiagnostics) {
        self.diagnostics.push(d);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    fn track(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Write rows (serializable structs) as CSV with a header line; the
    /// provenance columns `config_hash` and `code_version` are appended.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        #[derive(Serialize)]
        struct Tag<'a> {
            config_hash: &'a str,
            code_version: &'a str,
        }
        let tag = Tag { config_hash: &self.config_hash[..16], code_version: CODE_VERSION };
        let mut w = csv::Writer::from_path(self.path.join(name))?;
        for r in rows {
            w.serialize((r, &tag))?;
        }
        w.flush()?;
        self.track(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        atomic_write(&self.path.join(name), serde_json::to_string_pretty(value)?.as_bytes())?;
        self.track(name);
        Ok(())
    }

    /// Register a file written by other means (e.g. a subdirectory).
    pub fn register(&mut self, name: &str) {
        self.track(name);
    }

    /// Writes `diagnostics.json` and then, atomically, `manifest.json`.
    pub fn finish(mut self) -> Result<RunManifest> {
        let diagnostics = self.diagnostics.clone();
        self.write_json("diagnostics.json", &diagnostics)?;
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            mode: self.mode.clone(),
            config_hash: self.config_hash.clone(),
            code_version: CODE_VERSION.to_string(),
            seeds: self.seeds.clone(),
            diagnostics,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
            sign_conventions: sign_conventions(),
            notes: self.notes.clone(),
        };
        atomic_write(&self.path.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}

/// Write to a temporary sibling and rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
