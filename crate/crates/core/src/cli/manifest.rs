use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fields::checkpoint::write_atomic;

/// `git describe` of the source tree the binary was built from.
pub const GIT_DESCRIBE: &str = match option_env!("NEUSED_GIT_DESCRIBE") {
    Some(v) => v,
    None => "unknown",
};

/// Record of one command run, rewritten atomically when a stage starts and
/// when it finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Pipeline stage tag: "source", "edited", "render", "mesh", "eval" or "synth".
    pub stage: String,
    /// "running" or "complete".
    pub status: String,
    pub config_sha256: String,
    pub seed: u64,
    pub git_describe: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn start(command: &str, stage: &str, config_bytes: &[u8], seed: u64) -> (Self, Instant) {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        (
            Self {
                command: command.into(),
                stage: stage.into(),
                status: "running".into(),
                config_sha256: sha256_hex(config_bytes),
                seed,
                git_describe: GIT_DESCRIBE.into(),
                started_unix,
                wall_clock_secs: 0.0,
                outputs: Vec::new(),
            },
            Instant::now(),
        )
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn finish(&mut self, started: Instant, outputs: Vec<String>) {
        self.status = "complete".into();
        self.wall_clock_secs = started.elapsed().as_secs_f64();
        self.outputs = outputs;
    }
}
