//! Run directories and line-delimited JSON logging.
//!
//! A run directory holds: the config snapshot, `metrics.jsonl` (one JSON
//! object per optimization step, no wall-clock data so reruns are
//! byte-comparable), `events.jsonl` (operational events, timestamped),
//! checkpoints per component, inference results, and a final manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{Error, Result};

enum Sink {
    File(BufWriter<File>),
    Memory(Vec<String>),
    Stdout,
    Null,
}

impl Sink {
    fn write_line(&mut self, line: &str) {
        match self {
            Sink::File(w) => {
                let _ = writeln!(w, "{line}");
            }
            Sink::Memory(v) => v.push(line.to_string()),
            Sink::Stdout => println!("{line}"),
            Sink::Null => {}
        }
    }

    fn flush(&mut self) {
        if let Sink::File(w) = self {
            let _ = w.flush();
        }
    }
}

/// Destination for step metrics and operational events.
///
/// Metrics must stay free of timing so that two runs of the same config
/// produce identical bytes; anything wall-clock flavored belongs in events.
pub struct RunLogger {
    metrics: Sink,
    events: Sink,
}

impl RunLogger {
    pub fn for_dir(dir: &RunDir) -> Result<Self> {
        let metrics_path = dir.metrics_path();
        let events_path = dir.events_path();
        let metrics = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let events = File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
        Ok(RunLogger {
            metrics: Sink::File(BufWriter::new(metrics)),
            events: Sink::File(BufWriter::new(events)),
        })
    }

    pub fn in_memory() -> Self {
        RunLogger {
            metrics: Sink::Memory(Vec::new()),
            events: Sink::Memory(Vec::new()),
        }
    }

    pub fn null() -> Self {
        RunLogger {
            metrics: Sink::Null,
            events: Sink::Null,
        }
    }

    /// Stream both metric and event lines to stdout, for runs without a
    /// run directory.
    pub fn stdout() -> Self {
        RunLogger {
            metrics: Sink::Stdout,
            events: Sink::Stdout,
        }
    }

    /// Append one metrics line. Keys are emitted in sorted order, values
    /// exactly as given; callers must not include timing fields.
    pub fn metric(&mut self, value: serde_json::Value) {
        let line = serde_json::to_string(&value).expect("metric serializes");
        self.metrics.write_line(&line);
    }

    /// Append one event line, stamped with wall-clock milliseconds.
    pub fn event(&mut self, kind: &str, mut value: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("event".into(), serde_json::Value::String(kind.into()));
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0);
            map.insert("ts_ms".into(), serde_json::json!(ts));
        }
        let line = serde_json::to_string(&value).expect("event serializes");
        self.events.write_line(&line);
    }

    pub fn flush(&mut self) {
        self.metrics.flush();
        self.events.flush();
    }

    /// Captured metric lines (memory sink only).
    pub fn metric_lines(&self) -> &[String] {
        match &self.metrics {
            Sink::Memory(v) => v,
            _ => &[],
        }
    }
}

/// Filesystem layout of one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Create (or reuse) the directory at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(RunDir {
            root: path.to_path_buf(),
        })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    pub fn config_snapshot_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    /// Checkpoint directory for one component at one tag (e.g. "epoch1",
    /// "final"). Created on demand.
    pub fn checkpoint_dir(&self, component: &str, tag: &str) -> PathBuf {
        self.root.join("ckpt").join(component).join(tag)
    }

    pub fn write_config_snapshot(&self, cfg: &Config) -> Result<()> {
        let path = self.config_snapshot_path();
        std::fs::write(&path, cfg.to_toml_string()).map_err(|e| Error::io(&path, e))
    }

    pub fn write_manifest(&self, manifest: &serde_json::Value) -> Result<()> {
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::data(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json(&self, filename: &str, value: &serde_json::Value) -> Result<()> {
        let path = self.root.join(filename);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::data(format!("json serialization: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logger_writes_jsonl_files() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(&dir.path().join("run1")).unwrap();
        let mut logger = RunLogger::for_dir(&run).unwrap();
        logger.metric(serde_json::json!({"phase": "st", "step": 1, "loss": 0.5}));
        logger.metric(serde_json::json!({"phase": "st", "step": 2, "loss": 0.4}));
        logger.event("phase_done", serde_json::json!({"phase": "st"}));
        logger.flush();

        let metrics = std::fs::read_to_string(run.metrics_path()).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["step"], 1);

        let events = std::fs::read_to_string(run.events_path()).unwrap();
        let ev: serde_json::Value = serde_json::from_str(events.lines().next().unwrap()).unwrap();
        assert_eq!(ev["event"], "phase_done");
        assert!(ev["ts_ms"].as_u64().is_some());
    }

    #[test]
    fn metric_lines_are_key_sorted_and_timing_free() {
        let mut logger = RunLogger::in_memory();
        logger.metric(serde_json::json!({"z_last": 1, "a_first": 2}));
        let line = &logger.metric_lines()[0];
        assert_eq!(line, "{\"a_first\":2,\"z_last\":1}");
    }

    #[test]
    fn checkpoint_paths_nest_by_component_and_tag() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let p = run.checkpoint_dir("target", "epoch2");
        assert!(p.ends_with("ckpt/target/epoch2"));
    }
}
