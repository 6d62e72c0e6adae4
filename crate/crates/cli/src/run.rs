//! Run directories, manifests and exit codes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use ctrlstop::config::ConfigError;
use ctrlstop::io::IoError;
use ctrlstop::kernel::KernelError;
use ctrlstop::oracles::ObstacleError;
use ctrlstop::pde::{ContinuationFailure, PdeError};
use ctrlstop::sim::SimError;
use ctrlstop::verify::VerifyError;

/// Why a command did not succeed; each kind maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    /// A validation or asserted bound failed (exit 1).
    Check(String),
    /// A solver did not converge (exit 2).
    Convergence(String),
    /// Unreadable input, malformed config or an I/O error (exit 3).
    Input(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Convergence(_) => 2,
            Failure::Input(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Convergence(m) => write!(f, "no convergence: {m}"),
            Failure::Input(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Pde(p) => p.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<PdeError> for Failure {
    fn from(e: PdeError) -> Self {
        if e.is_convergence() {
            Failure::Convergence(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<ContinuationFailure> for Failure {
    fn from(e: ContinuationFailure) -> Self {
        let msg = e.to_string();
        match Failure::from(e.error) {
            Failure::Convergence(_) => Failure::Convergence(msg),
            _ => Failure::Input(msg),
        }
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ObstacleError> for Failure {
    fn from(e: ObstacleError) -> Self {
        Failure::Convergence(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Rejected { .. } => Failure::Convergence(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Pde(p) => p.into(),
            VerifyError::Obstacle(o) => o.into(),
            VerifyError::Sim(s) => s.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// One asserted bound: passes when `observed <= limit`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    /// The problem file with defaults and command-line overrides applied.
    pub config: String,
    pub tolerances: BTreeMap<String, f64>,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<Stage>,
    pub files: Vec<FileEntry>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub error: Option<String>,
    /// Command-specific details (schedule, grid, per-point bounds, ...).
    pub details: BTreeMap<String, serde_json::Value>,
}

/// A fresh output directory named by config hash and timestamp.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
    clock: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunDir {
    /// Creates `<out>/<hash>-<unix seconds>[-n]`; an existing directory is never reused.
    pub fn create(out: &Path, command: &str, config: &str) -> Result<RunDir, Failure> {
        let hash = sha256_hex(config.as_bytes())[..16].to_string();
        fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let base = format!("{hash}-{stamp}");
        let mut n = 0;
        let path = loop {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let p = out.join(name);
            match fs::create_dir(&p) {
                Ok(()) => break p,
                Err(e) if e.kind() == ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(Failure::Input(format!("{}: {e}", p.display()))),
            }
        };
        Ok(RunDir {
            path,
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: hash,
                config: config.to_string(),
                tolerances: BTreeMap::new(),
                seeds: BTreeMap::new(),
                stages: Vec::new(),
                files: Vec::new(),
                checks: Vec::new(),
                pass: true,
                error: None,
                details: BTreeMap::new(),
            },
            clock: Instant::now(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records a file already written into the run directory.
    pub fn record(&mut self, name: &str) -> Result<(), Failure> {
        let bytes = fs::read(self.file(name))?;
        self.manifest.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.file(name), text + "\n")?;
        self.record(name)
    }

    /// Closes the current stage (timed since the previous one).
    pub fn stage(&mut self, name: &str) {
        self.manifest.stages.push(Stage {
            name: name.to_string(),
            seconds: self.clock.elapsed().as_secs_f64(),
        });
        self.clock = Instant::now();
    }

    pub fn check(&mut self, name: impl Into<String>, observed: f64, limit: f64) -> bool {
        let pass = observed <= limit;
        self.manifest.checks.push(Check {
            name: name.into(),
            observed,
            limit,
            pass,
        });
        pass
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) -> Result<(), Failure> {
        self.manifest.details.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Writes `manifest.json` and turns failed checks into an exit status.
    pub fn finish(mut self, error: Option<Failure>) -> Result<PathBuf, Failure> {
        let failed: Vec<String> = self
            .manifest
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} ({:.3e} > {:.3e})", c.name, c.observed, c.limit))
            .collect();
        self.manifest.pass = error.is_none() && failed.is_empty();
        self.manifest.error = error.as_ref().map(ToString::to_string);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.file("manifest.json"), text + "\n")?;
        println!("run directory: {}", self.path.display());
        match error {
            Some(e) => Err(e),
            None if !failed.is_empty() => Err(Failure::Check(failed.join(", "))),
            None => Ok(self.path),
        }
    }
}
