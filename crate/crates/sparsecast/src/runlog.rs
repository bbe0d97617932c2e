//! Append-only run log, one JSON object per line.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sparsecast_core::metrics::{Confusion, Metrics};
use sparsecast_core::trainer::PhaseReport;

use crate::error::{Error, IoContext, Result};

pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &Value) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).at(&self.path)?;
        let mut line = serde_json::to_string(record).expect("json values serialize");
        line.push('\n');
        f.write_all(line.as_bytes()).at(&self.path)?;
        f.sync_data().at(&self.path)
    }

    pub fn read(&self) -> Result<Vec<Value>> {
        let f = std::fs::File::open(&self.path).at(&self.path)?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.at(&self.path)?;
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(&line).map_err(|e| Error::format(&self.path, format!("line {}: {e}", i + 1)))?;
            out.push(v);
        }
        Ok(out)
    }
}

pub fn confusion_json(c: &Confusion) -> Value {
    json!({ "tp": c.tp, "fp": c.fp, "fn": c.fn_, "tn": c.tn })
}

pub fn metrics_json(m: &Metrics) -> Value {
    json!({
        "accuracy": m.accuracy,
        "macro_precision": m.macro_precision,
        "macro_recall": m.macro_recall,
        "macro_f1": m.macro_f1,
    })
}

pub fn phase_json(event: &str, r: &PhaseReport) -> Value {
    json!({
        "event": event,
        "phase": r.phase,
        "spec": r.spec.to_string(),
        "cumulative_train_participants": r.cumulative_train_participants,
        "test_participants": r.test_participants,
        "train_windows": r.train_windows,
        "test_windows": r.test_windows,
        "epoch_losses": r.epoch_losses,
        "confusion": confusion_json(&r.confusion),
        "metrics": metrics_json(&r.metrics),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparsecast_core::FeatureSetSpec;

    #[test]
    fn appends_one_object_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let log = RunLog::new(dir.path().join("run.jsonl"));
        let r = PhaseReport {
            phase: 2,
            spec: FeatureSetSpec::HK,
            cumulative_train_participants: 9,
            test_participants: 4,
            train_windows: 30,
            test_windows: 12,
            epoch_losses: vec![0.7, 0.6],
            confusion: Confusion { tp: 1, fp: 2, fn_: 3, tn: 4 },
            metrics: Metrics::default(),
        };
        log.append(&phase_json("phase", &r)).unwrap();
        log.append(&json!({"event": "done"})).unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = log.read().unwrap();
        assert_eq!(back[0]["spec"], "H+K");
        assert_eq!(back[0]["confusion"]["fn"], 3);
        assert_eq!(back[0]["epoch_losses"][1], 0.6);
        assert_eq!(back[1]["event"], "done");
    }
}
