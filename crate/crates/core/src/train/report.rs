//! CSV and JSON outputs for training runs and suites.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::suites::{DepthReport, LadderReport, RunRecord};
use super::trainer::EpochMetrics;

#[derive(Serialize)]
struct SuiteRow<'a> {
    rung: &'a str,
    run: usize,
    epoch: usize,
    train_loss: f64,
    valid_acc: f64,
}

/// `rung,run,epoch,train_loss,valid_acc`, one row per epoch of every run.
pub fn write_runs_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in runs {
        for m in &r.history {
            w.serialize(SuiteRow {
                rung: &r.group,
                run: r.run,
                epoch: m.epoch,
                train_loss: m.train_loss,
                valid_acc: m.valid_acc,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-epoch metrics of a single training run.
pub fn write_history_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in history {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct LadderSummary<'a> {
    rungs: Vec<RungOut<'a>>,
}

#[derive(Serialize)]
struct RungOut<'a> {
    name: &'a str,
    accuracies: &'a [f64],
    mean: f64,
    median: f64,
    q1: f64,
    q3: f64,
    min: f64,
    max: f64,
    outliers: &'a [f64],
}

pub fn write_ladder_summary(path: &Path, report: &LadderReport) -> Result<()> {
    let rungs = report
        .rungs
        .iter()
        .map(|r| RungOut {
            name: &r.name,
            accuracies: &r.accuracies,
            mean: r.stats.mean,
            median: r.stats.median,
            q1: r.stats.q1,
            q3: r.stats.q3,
            min: r.stats.min,
            max: r.stats.max,
            outliers: &r.stats.outliers,
        })
        .collect();
    write_json(path, &LadderSummary { rungs })
}

#[derive(Serialize)]
struct DepthRow<'a> {
    depth: usize,
    hidden: usize,
    mode: &'a str,
    param_count: u64,
    runs: usize,
    mean_acc: f64,
    ci_low: f64,
    ci_high: f64,
}

/// One row per (depth, mode) cell.
pub fn write_depth_csv(path: &Path, report: &DepthReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in &report.cells {
        w.serialize(DepthRow {
            depth: c.depth,
            hidden: c.hidden,
            mode: c.mode.name(),
            param_count: c.param_count,
            runs: c.accuracies.len(),
            mean_acc: c.mean,
            ci_low: c.ci_low,
            ci_high: c.ci_high,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
