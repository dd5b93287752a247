//! Output directory bookkeeping: every file a run writes is recorded so a
//! failed run can mark them `.partial`, and every run ends with a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::CliError;

pub struct RunDir {
    dir: PathBuf,
    written: Vec<String>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    error: Option<String>,
    failed_stage: Option<String>,
    seed: u64,
    config_hash: String,
    config_echo: Vec<(&'static str, String)>,
    versions: Versions,
    threads: usize,
    stage_timings: &'a [(String, f64)],
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Versions {
    ddc: &'static str,
    ddc_core: &'static str,
}

/// Hash of the echoed settings other than the output directory, so the same
/// run written elsewhere hashes the same.
pub fn config_hash(settings: &Settings) -> String {
    let text: String = settings.echo().iter().filter(|(k, _)| *k != "out").map(|(k, v)| format!("{k} = {v}\n")).collect();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), timings: Vec::new(), clock: Instant::now() })
    }

    /// Path for a new artifact, registered as written.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let stale = self.dir.join(format!("{name}.partial"));
        let _ = fs::remove_file(stale);
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.file(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let path = self.file(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.write_record(&r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    /// Close the current stage and record its wall time.
    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push((stage.to_string(), (now - self.clock).as_secs_f64()));
        self.clock = now;
    }

    pub fn add_timings(&mut self, prefix: &str, t: &[(String, f64)]) {
        self.timings.extend(t.iter().map(|(s, v)| (format!("{prefix}.{s}"), *v)));
    }

    pub fn finish(mut self, command: &str, settings: &Settings, outcome: Result<(), &CliError>) -> Result<(), CliError> {
        let (status, error, stage) = match outcome {
            Ok(()) => ("ok", None, None),
            Err(e) => {
                for name in &self.written {
                    let from = self.dir.join(name);
                    if from.exists() {
                        let _ = fs::rename(&from, self.dir.join(format!("{name}.partial")));
                    }
                }
                self.written = self.written.iter().map(|n| format!("{n}.partial")).collect();
                ("failed", Some(e.to_string()), e.stage().map(str::to_string))
            }
        };
        let manifest = Manifest {
            command,
            status,
            error,
            failed_stage: stage,
            seed: settings.int("seed"),
            config_hash: config_hash(settings),
            config_echo: settings.echo(),
            versions: Versions { ddc: env!("CARGO_PKG_VERSION"), ddc_core: ddc_core::VERSION },
            threads: rayon::current_num_threads(),
            stage_timings: &self.timings,
            artifacts: self.written.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), text + "\n").map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(self.dir.join("config.txt"), settings.echo_text()).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Shortest round-trip text for a float, so rereading is exact.
pub fn num(v: f64) -> String {
    v.to_string()
}
