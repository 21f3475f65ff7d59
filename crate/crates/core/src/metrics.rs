//! Per-round measurements and CSV output.
//!
//! Each simulated round records the five evaluation measures (thirsty
//! users, bridges distributed, bridges blocked, total bridges used, and,
//! at termination, latency) plus message counts per user and per
//! distributor.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("failed to write CSV: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("CSV encoding failed: {0}")]
    Encode(#[from] csv::Error),
}

/// One row of the per-round series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Shared round counter value after this round's distribution.
    pub round: u32,
    /// Users without a single unblocked bridge, measured after the round's
    /// blocking and before the next distribution.
    pub thirsty: u64,
    /// Per-instance pool size distributed this round (user count in the
    /// unique-bridge fallback).
    pub distributed: u64,
    /// Largest per-instance blocked count at the end of the round.
    pub blocked: u64,
    /// Unique bridges handed out since the start of the run.
    pub used: u64,
    /// Most messages any user received this round.
    pub msgs_user: u64,
    /// Fewest messages any user received this round (not part of the CSV
    /// schema; used to check that per-user counts are exact).
    pub msgs_user_min: u64,
    /// Largest per-distributor send+receive count this round.
    pub msgs_dist: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalMetrics {
    /// Round counter at termination.
    pub latency_rounds: u32,
    /// Whether every honest user held at least one unblocked bridge at
    /// termination.
    pub success: bool,
    /// Total unique bridges used over the run.
    pub bridges_used: u64,
}

/// Full record of one simulated trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rounds: Vec<RoundMetrics>,
    pub terminal: TerminalMetrics,
}

impl MetricsSeries {
    /// Writes the series: a header row, then one row per round, all values
    /// decimal integers.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "round",
            "thirsty",
            "distributed",
            "blocked",
            "used",
            "msgs_user",
            "msgs_dist",
        ])?;
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.thirsty.to_string(),
                r.distributed.to_string(),
                r.blocked.to_string(),
                r.used.to_string(),
                r.msgs_user.to_string(),
                r.msgs_dist.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), CsvError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}

/// Aggregate of one sweep point over its trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept parameter value (adversary budget unless stated otherwise).
    pub param: u64,
    pub trials: u32,
    pub latency_min: u32,
    pub latency_mean: f64,
    pub latency_max: u32,
    pub used_min: u64,
    pub used_mean: f64,
    pub used_max: u64,
    /// Trials in which some honest user ended without an unblocked bridge.
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn aggregate(param: u64, trials: &[MetricsSeries]) -> SweepRow {
        let n = trials.len() as u32;
        let lat: Vec<u32> = trials.iter().map(|t| t.terminal.latency_rounds).collect();
        let used: Vec<u64> = trials.iter().map(|t| t.terminal.bridges_used).collect();
        SweepRow {
            param,
            trials: n,
            latency_min: lat.iter().copied().min().unwrap_or(0),
            latency_mean: lat.iter().map(|&v| v as f64).sum::<f64>() / n.max(1) as f64,
            latency_max: lat.iter().copied().max().unwrap_or(0),
            used_min: used.iter().copied().min().unwrap_or(0),
            used_mean: used.iter().map(|&v| v as f64).sum::<f64>() / n.max(1) as f64,
            used_max: used.iter().copied().max().unwrap_or(0),
            failures: trials.iter().filter(|t| !t.terminal.success).count() as u32,
        }
    }

    /// One header row, then one row per sweep point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "param",
            "trials",
            "latency_min",
            "latency_mean",
            "latency_max",
            "used_min",
            "used_mean",
            "used_max",
            "failures",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.param.to_string(),
                r.trials.to_string(),
                r.latency_min.to_string(),
                format!("{:.3}", r.latency_mean),
                r.latency_max.to_string(),
                r.used_min.to_string(),
                format!("{:.3}", r.used_mean),
                r.used_max.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), CsvError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}
