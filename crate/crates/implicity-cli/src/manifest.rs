//! Run manifests: a key=value record of the effective config, input and
//! output content hashes, seeds, and stage timings, written next to each
//! command's primary output. Re-running with the same manifest inputs in
//! deterministic mode reproduces the outputs byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let data = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&data);
    Ok(format!("{:x}", h.finalize()))
}

pub struct Manifest {
    subcommand: String,
    seed: u64,
    deterministic: bool,
    config: BTreeMap<String, String>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<(PathBuf, String)>,
    timings: Vec<(String, u128)>,
    stage_started: Option<(String, Instant)>,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64, deterministic: bool) -> Manifest {
        Manifest {
            subcommand: subcommand.to_string(),
            seed,
            deterministic,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            stage_started: None,
        }
    }

    pub fn set_config(&mut self, snapshot: BTreeMap<String, String>) {
        self.config = snapshot;
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    /// Hash an output file after it has been written; also verifies the
    /// artifact actually exists.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.outputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn start_stage(&mut self, name: &str) {
        self.finish_stage();
        self.stage_started = Some((name.to_string(), Instant::now()));
    }

    pub fn finish_stage(&mut self) {
        if let Some((name, t0)) = self.stage_started.take() {
            self.timings.push((name, t0.elapsed().as_millis()));
        }
    }

    /// In deterministic mode wall-clock timings are replaced by zeros so
    /// repeated runs stay byte-identical.
    pub fn write_to(&mut self, path: &Path) -> Result<()> {
        self.finish_stage();
        // Paths under the manifest's own directory are recorded relative to
        // it, so runs into different directories stay comparable.
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        let shown = |p: &Path| -> String {
            match base.and_then(|b| p.strip_prefix(b).ok()) {
                Some(rel) => rel.display().to_string(),
                None => p.display().to_string(),
            }
        };
        let mut out = String::new();
        out.push_str("manifest_version=1\n");
        out.push_str(&format!("tool=implicity {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("subcommand={}\n", self.subcommand));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("deterministic={}\n", self.deterministic));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        for (p, h) in &self.inputs {
            out.push_str(&format!("input.{}=sha256:{h}\n", shown(p)));
        }
        for (p, h) in &self.outputs {
            out.push_str(&format!("output.{}=sha256:{h}\n", shown(p)));
        }
        for (name, ms) in &self.timings {
            let shown = if self.deterministic { 0 } else { *ms };
            out.push_str(&format!("timing.{name}_ms={shown}\n"));
        }
        let mut f = std::fs::File::create(path)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Manifest path for a primary output file: `dsm.asc` -> `dsm.asc.manifest`.
pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut s = primary_output.as_os_str().to_os_string();
    s.push(".manifest");
    PathBuf::from(s)
}
