use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::network::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss: f64,
    pub ce: f64,
    pub dice: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Iterations completed when the evaluation ran.
    pub iteration: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub iteration: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub version: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Successful iterations only; every loss is finite.
    pub iterations: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
    pub skipped: Vec<SkipRecord>,
    pub wall_time_secs: f64,
    pub stopped_early: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Config { version: String, model: ModelConfig, train: TrainConfig },
    Iter(IterRecord),
    Eval(EvalRecord),
    Skip(SkipRecord),
    Summary { wall_time_secs: f64, stopped_early: Option<usize> },
}

impl TrainLog {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            model,
            train,
            iterations: Vec::new(),
            evals: Vec::new(),
            skipped: Vec::new(),
            wall_time_secs: 0.0,
            stopped_early: None,
        }
    }

    /// Iterations attempted, including skipped ones.
    pub fn iterations_run(&self) -> usize {
        let a = self.iterations.last().map_or(0, |r| r.iteration + 1);
        let b = self.skipped.last().map_or(0, |r| r.iteration + 1);
        a.max(b)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }

    /// Mean loss of each consecutive `block` iterations over the first `limit`.
    pub fn block_means(&self, block: usize, limit: usize) -> Vec<f64> {
        let losses = self.losses();
        losses[..limit.min(losses.len())].chunks_exact(block).map(|c| c.iter().sum::<f64>() / block as f64).collect()
    }

    pub fn final_report(&self) -> Option<&MetricsReport> {
        self.evals.last().map(|e| &e.report)
    }

    /// One JSON object per line: config, iterations, evaluations, skips, summary.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let mut push = |line: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, line)?;
            out.push(b'\n');
            Ok(())
        };
        push(&Line::Config { version: self.version.clone(), model: self.model.clone(), train: self.train.clone() })?;
        for r in &self.iterations {
            push(&Line::Iter(r.clone()))?;
        }
        for r in &self.evals {
            push(&Line::Eval(r.clone()))?;
        }
        for r in &self.skipped {
            push(&Line::Skip(r.clone()))?;
        }
        push(&Line::Summary { wall_time_secs: self.wall_time_secs, stopped_early: self.stopped_early })?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut log: Option<TrainLog> = None;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)?;
            match (parsed, log.as_mut()) {
                (Line::Config { version, model, train }, None) => {
                    log = Some(TrainLog { version, ..TrainLog::new(model, train) });
                }
                (Line::Iter(r), Some(l)) => l.iterations.push(r),
                (Line::Eval(r), Some(l)) => l.evals.push(r),
                (Line::Skip(r), Some(l)) => l.skipped.push(r),
                (Line::Summary { wall_time_secs, stopped_early }, Some(l)) => {
                    l.wall_time_secs = wall_time_secs;
                    l.stopped_early = stopped_early;
                }
                _ => return Err(Error::Data(format!("{}: line {} out of order", path.display(), n + 1))),
            }
        }
        log.ok_or_else(|| Error::Data(format!("{}: no config line", path.display())))
    }
}
