use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

/// Everything needed to understand and repeat one invocation. Timings live
/// only here, never in the metric or table outputs.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub parallel: bool,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub results: serde_json::Value,
    pub timings: Vec<Timing>,
}

pub struct Recorder {
    pub report: RunReport,
    start: Instant,
    phase: Instant,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Recorder {
    pub fn new(command: &str, config: serde_json::Value, threads: Option<usize>) -> Self {
        let now = Instant::now();
        Recorder {
            report: RunReport {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                parallel: cfg!(feature = "parallel"),
                threads,
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                results: serde_json::Value::Null,
                timings: Vec::new(),
            },
            start: now,
            phase: now,
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let sha256 = sha256_file(path)?;
        self.report.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.report.outputs.push(path.to_path_buf());
    }

    /// Closes the current phase.
    pub fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        self.report.timings.push(Timing {
            phase: phase.to_string(),
            seconds: (now - self.phase).as_secs_f64(),
        });
        self.phase = now;
    }

    pub fn finish(mut self, results: serde_json::Value) -> RunReport {
        self.report.timings.push(Timing {
            phase: "total".into(),
            seconds: self.start.elapsed().as_secs_f64(),
        });
        self.report.results = results;
        self.report
    }
}
