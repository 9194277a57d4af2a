use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written into every output directory; `command_line` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    pub command_line: Vec<String>,
    /// Fully resolved settings, including defaults the command line left implicit.
    pub settings: serde_json::Value,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(subcommand: &str, output: &Path, started_unix: u64, command_line: Vec<String>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            output: output.to_path_buf(),
            started_unix,
            finished_unix: started_unix,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command_line,
            settings: serde_json::Value::Null,
        }
    }

    pub fn write(mut self, dir: &Path) -> mbivs::Result<()> {
        self.finished_unix = unix_now();
        mbivs::io::write_json(&dir.join(MANIFEST_FILE), &self)
    }
}

/// Recorded arguments with the value of `--out` replaced by `out`.
pub fn replay_args(command_line: &[String], out: Option<&Path>) -> Vec<String> {
    let mut args: Vec<String> = command_line.to_vec();
    let Some(out) = out else { return args };
    let out = out.display().to_string();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--out" && i + 1 < args.len() {
            args[i + 1] = out.clone();
            i += 1;
        } else if args[i].starts_with("--out=") {
            args[i] = format!("--out={out}");
        }
        i += 1;
    }
    args
}
