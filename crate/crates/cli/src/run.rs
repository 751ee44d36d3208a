//! Timestamped run directories and their JSON-lines log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use deepseed::evaluation::{REPORT_FORMAT, SWEEP_FORMAT};
use deepseed::signal::CACHE_FORMAT;
use deepseed::tensor::TENSOR_FORMAT;
use deepseed::trainer::CHECKPOINT_FORMAT;
use serde::Serialize;
use serde_json::json;

use crate::commands::Failure;
use crate::config::{RunConfig, CONFIG_FORMAT};

pub const RUN_FORMAT: &str = "deepseed-run/v1";
pub const LOG_FORMAT: &str = "deepseed-log/v1";

pub struct RunDir {
    pub path: PathBuf,
    log: BufWriter<File>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Create `<output_dir>/<command>-<timestamp>` and write the resolved
    /// configuration and format manifest into it.
    pub fn create(config: &RunConfig, command: &str) -> Result<Self, Failure> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
        fs::create_dir_all(&config.output_dir).map_err(io(&config.output_dir))?;
        let mut path = config.output_dir.join(format!("{command}-{stamp}"));
        let mut n = 1;
        while path.exists() {
            path = config.output_dir.join(format!("{command}-{stamp}-{n}"));
            n += 1;
        }
        fs::create_dir_all(&path).map_err(io(&path))?;
        write(&path.join("config.toml"), config.to_toml())?;
        let manifest = json!({
            "format": RUN_FORMAT,
            "command": command,
            "started": chrono::Local::now().to_rfc3339(),
            "version": env!("CARGO_PKG_VERSION"),
            "train_fingerprint": config.train_config().fingerprint(),
            "formats": {
                "config": CONFIG_FORMAT,
                "log": LOG_FORMAT,
                "cache": CACHE_FORMAT,
                "checkpoint": CHECKPOINT_FORMAT,
                "tensors": TENSOR_FORMAT,
                "report": REPORT_FORMAT,
                "sweep": SWEEP_FORMAT,
            },
        });
        write_json(&path.join("run.json"), &manifest)?;
        let log_path = path.join("log.jsonl");
        let log = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
        let mut dir = Self { path, log };
        dir.event(&json!({ "event": "start", "format": LOG_FORMAT, "command": command }))?;
        Ok(dir)
    }

    pub fn event(&mut self, value: &serde_json::Value) -> Result<(), Failure> {
        let line = serde_json::to_string(value).expect("json value serializes");
        writeln!(self.log, "{line}").map_err(|e| Failure::Data(format!("run log: {e}")))
    }

    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        self.event(&json!({ "event": "finish" }))?;
        self.log.flush().map_err(|e| Failure::Data(format!("run log: {e}")))?;
        Ok(self.path)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf, Failure> {
        let p = self.path.join(name);
        fs::create_dir_all(&p).map_err(io(&p))?;
        Ok(p)
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(io(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    write(path, text)
}
