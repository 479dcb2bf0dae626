//! Retained-sample records and their line-delimited JSON form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::AssignmentField;

/// Log prior contributions of the scalar parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LogPrior {
    pub sticks: f64,
    pub alpha: f64,
    pub kernel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub log_prior: LogPrior,
    pub alpha: f64,
    pub kernel: BTreeMap<String, f64>,
    /// Occupied clusters at each location.
    pub cluster_counts: Vec<usize>,
    #[serde(skip)]
    pub assignments: Option<AssignmentField>,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Running mean of the Gram matrix over retained iterations (row-major).
    pub sigma_mean: Vec<f64>,
    /// Wall time of every iteration, burn-in included.
    pub iteration_times: Vec<Duration>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loglik).collect()
    }

    pub fn kernel_samples(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.kernel.get(name).copied()).collect()
    }

    pub fn kernel_names(&self) -> Vec<String> {
        self.records
            .first()
            .map(|r| r.kernel.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// The retained record with the highest collapsed log likelihood.
    pub fn best(&self) -> Result<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.assignments.is_some())
            .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
            .ok_or(Error::EmptyTrace)
    }

    pub fn mean_iteration_time(&self) -> Duration {
        if self.iteration_times.is_empty() {
            return Duration::ZERO;
        }
        self.iteration_times.iter().sum::<Duration>() / self.iteration_times.len() as u32
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads records written by [`Trace::save_jsonl`] (without assignments).
    pub fn load_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: i as u64 + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Posterior mean and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and 2.5% / 97.5% empirical quantiles (linear interpolation).
pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let i = h.floor() as usize;
        let j = (i + 1).min(s.len() - 1);
        s[i] + (h - i as f64) * (s[j] - s[i])
    };
    Some(Summary {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        lower: q(0.025),
        upper: q(0.975),
    })
}
