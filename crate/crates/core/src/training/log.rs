use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::FusionComponents;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Align,
    Fusion,
    Recon,
    Mae,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Align => "align",
            Stage::Fusion => "fusion",
            Stage::Recon => "recon",
            Stage::Mae => "mae",
        };
        f.write_str(s)
    }
}

/// One optimizer step. Wall time is kept out of the serialized record so that logs of
/// identical runs are byte-identical; it is written to a separate timing file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<FusionComponents>,
    #[serde(skip)]
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn stage_losses(&self, stage: Stage) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.loss)
            .collect()
    }

    /// Appends `other`, renumbering its steps to continue after this log.
    pub fn extend(&mut self, other: TrainLog) {
        let offset = self.records.last().map_or(0, |r| r.step + 1);
        self.records.extend(other.records.into_iter().map(|mut r| {
            r.step += offset;
            r
        }));
        if other.checkpoint.is_some() {
            self.checkpoint = other.checkpoint;
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Writes the JSON-lines log; with `append`, adds to an existing file.
    pub fn write_jsonl(&self, path: &Path, append: bool) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Per-step wall times, `step,elapsed_ms` CSV.
    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let mut s = String::from("step,elapsed_ms\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.3}\n", r.step, r.elapsed_ms));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<TrainLog> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog {
            records,
            checkpoint: None,
        })
    }
}
