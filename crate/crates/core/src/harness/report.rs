use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::{Algorithm, ExperimentConfig};
use super::run::{ExperimentReport, TrialRow};

/// One CSV line per experiment; keyed by the grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub loss: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub private: bool,
    pub repetitions: usize,
    pub mean_excess_risk: f64,
    pub stderr: f64,
    pub halted_fraction: f64,
}

impl SummaryRow {
    pub fn from_report(report: &ExperimentReport) -> Self {
        let c: &ExperimentConfig = &report.config;
        Self {
            config_hash: report.config_hash.clone(),
            algorithm: c.algorithm,
            loss: serde_json::to_value(c.loss)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            n: c.n,
            m: c.m,
            d: c.d,
            epsilon: c.epsilon,
            delta: c.delta,
            seed: c.seed,
            private: report.private,
            repetitions: report.aggregate.repetitions,
            mean_excess_risk: report.aggregate.mean_excess_risk,
            stderr: report.aggregate.stderr,
            halted_fraction: report.aggregate.halted_fraction,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_jsonl<'a>(path: &Path, rows: impl IntoIterator<Item = &'a TrialRow>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrialRow>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trials.jsonl`, `summary.csv` and the resolved `config.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("trials.jsonl"), &report.trials)?;
    write_summary_csv(&dir.join("summary.csv"), &[SummaryRow::from_report(report)])?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&report.config)? + "\n",
    )?;
    Ok(())
}

/// Writes `sweep.csv` (one row per grid point) and `trials.jsonl` (all trials) into `dir`.
pub fn write_sweep(reports: &[ExperimentReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(
        &dir.join("trials.jsonl"),
        reports.iter().flat_map(|r| &r.trials),
    )?;
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    write_summary_csv(&dir.join("sweep.csv"), &rows)
}
