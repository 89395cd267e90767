//! Result files.
//!
//! * `episodes.csv`: `cell_id,replication,try_index,steps`, one row per try,
//!   `try_index` counting from 0.
//! * `summary.csv`: one row per cell and replication, plus a row with
//!   replication `mean` for the pointwise-averaged series when there is more
//!   than one replication. Columns: `cell_id, observability, encoder,
//!   strategy, learning_rate, pseudoset_size, relearn_gap, replication, seed,
//!   mean, median, classification, first_success_run, random_baseline_mean,
//!   error`. Axes that do not apply to a cell and missing values are empty.
//! * `summary.json`: the same rows grouped per cell.
//! * `tables.md`: per-observability overview tables.
//! * `plots/<cell_id>.svg` (first replication) and `plots/<cell_id>-mean.svg`
//!   (averaged series) for each selected cell.
//!
//! Reals are written with 6 significant digits so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use prlab_core::{CellSpec, CellStrategy, CellSummary, SweepResult};
use serde_json::{json, Value};

use crate::plot::line_chart_svg;

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("cannot write {path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("cannot write {path}: {error}")]
    Csv { path: PathBuf, error: csv::Error },
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |error| EmitError::Io {
        path: path.to_path_buf(),
        error,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EmitError + '_ {
    move |error| EmitError::Csv {
        path: path.to_path_buf(),
        error,
    }
}

/// `%g`-style formatting with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // the exponent after rounding to 6 digits
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn round6(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

/// Which cells get plots.
#[derive(Debug, Clone, Default)]
pub struct PlotSelection {
    pub enabled: bool,
    /// Cell-id substrings; empty selects every cell.
    pub cells: Vec<String>,
}

impl PlotSelection {
    pub fn all() -> Self {
        Self {
            enabled: true,
            cells: Vec::new(),
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn selects(&self, cell_id: &str) -> bool {
        self.enabled && (self.cells.is_empty() || self.cells.iter().any(|f| cell_id.contains(f)))
    }
}

struct AxisColumns {
    learning_rate: String,
    pseudoset_size: String,
    relearn_gap: String,
}

fn axis_columns(cell: &CellSpec) -> AxisColumns {
    let rehearsal = cell.strategy.is_rehearsal();
    AxisColumns {
        learning_rate: if cell.strategy == CellStrategy::Random {
            String::new()
        } else {
            sig6(cell.learning_rate)
        },
        pseudoset_size: if rehearsal {
            cell.pseudoset_size.to_string()
        } else {
            String::new()
        },
        relearn_gap: if rehearsal {
            cell.relearn_gap.to_string()
        } else {
            String::new()
        },
    }
}

fn encoder_column(cell: &CellSpec) -> &'static str {
    if cell.strategy == CellStrategy::Random {
        ""
    } else {
        cell.encoder.name()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_json(s: Option<&CellSummary>) -> Value {
    match s {
        Some(s) => json!({
            "mean": round6(s.mean),
            "median": round6(s.median),
            "classification": s.classification.label(),
            "first_success_run": s.first_success_run,
            "random_baseline_mean": s.random_baseline_mean.map(round6),
        }),
        None => Value::Null,
    }
}

/// Writes every result file into `out_dir`, creating it if needed, and
/// returns the paths written.
pub fn emit_results(
    result: &SweepResult,
    out_dir: &Path,
    plots: &PlotSelection,
) -> Result<Vec<PathBuf>, EmitError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let path = out_dir.join("episodes.csv");
    write_episodes(result, &path)?;
    written.push(path);

    let path = out_dir.join("summary.csv");
    write_summary_csv(result, &path)?;
    written.push(path);

    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary_document(result)).expect("json values") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);

    let path = out_dir.join("tables.md");
    fs::write(&path, summary_tables(result)).map_err(io_err(&path))?;
    written.push(path);

    for cell in &result.cells {
        let id = cell.cell.id();
        if !plots.selects(&id) {
            continue;
        }
        let series: Vec<Vec<f64>> = cell
            .logs
            .iter()
            .filter_map(|l| l.as_ref().ok())
            .map(|l| l.steps.iter().map(|&s| s as f64).collect())
            .collect();
        written.extend(write_cell_plots(out_dir, &id, &series)?);
    }
    Ok(written)
}

fn write_episodes(result: &SweepResult, path: &Path) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["cell_id", "replication", "try_index", "steps"])
        .map_err(csv_err(path))?;
    for cell in &result.cells {
        let id = cell.cell.id();
        for (r, log) in cell.logs.iter().enumerate() {
            let Ok(log) = log else { continue };
            let rep = r.to_string();
            for (i, steps) in log.steps.iter().enumerate() {
                w.write_record([id.as_str(), &rep, &i.to_string(), &steps.to_string()])
                    .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

const SUMMARY_HEADER: [&str; 15] = [
    "cell_id",
    "observability",
    "encoder",
    "strategy",
    "learning_rate",
    "pseudoset_size",
    "relearn_gap",
    "replication",
    "seed",
    "mean",
    "median",
    "classification",
    "first_success_run",
    "random_baseline_mean",
    "error",
];

fn write_summary_csv(result: &SweepResult, path: &Path) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    for cell in &result.cells {
        let id = cell.cell.id();
        let axes = axis_columns(&cell.cell);
        let mut row = |rep: String, seed: String, s: Option<&CellSummary>, err: &str| {
            let record = [
                id.clone(),
                cell.cell.observability.name().to_string(),
                encoder_column(&cell.cell).to_string(),
                cell.cell.strategy.name().to_string(),
                axes.learning_rate.clone(),
                axes.pseudoset_size.clone(),
                axes.relearn_gap.clone(),
                rep,
                seed,
                opt(s.map(|s| sig6(s.mean))),
                opt(s.map(|s| sig6(s.median))),
                opt(s.map(|s| s.classification.label())),
                opt(s.and_then(|s| s.first_success_run)),
                opt(s.and_then(|s| s.random_baseline_mean).map(sig6)),
                err.to_string(),
            ];
            w.write_record(&record).map_err(csv_err(path))
        };
        for (r, (log, summary)) in cell.logs.iter().zip(&cell.summaries).enumerate() {
            let seed = result.base_seed.wrapping_add(r as u64).to_string();
            let err = log.as_ref().err().map(String::as_str).unwrap_or("");
            row(r.to_string(), seed, summary.as_ref(), err)?;
        }
        if result.replications > 1 {
            row("mean".into(), String::new(), cell.averaged.as_ref(), "")?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn summary_document(result: &SweepResult) -> Value {
    let cells: Vec<Value> = result
        .cells
        .iter()
        .map(|cell| {
            let c = &cell.cell;
            let rehearsal = c.strategy.is_rehearsal();
            let reps: Vec<Value> = cell
                .logs
                .iter()
                .zip(&cell.summaries)
                .enumerate()
                .map(|(r, (log, s))| {
                    json!({
                        "replication": r,
                        "seed": result.base_seed.wrapping_add(r as u64),
                        "summary": summary_json(s.as_ref()),
                        "error": log.as_ref().err(),
                    })
                })
                .collect();
            json!({
                "cell_id": c.id(),
                "observability": c.observability.name(),
                "encoder": (c.strategy != CellStrategy::Random).then(|| c.encoder.name()),
                "strategy": c.strategy.name(),
                "learning_rate": (c.strategy != CellStrategy::Random).then(|| round6(c.learning_rate)),
                "pseudoset_size": rehearsal.then_some(c.pseudoset_size),
                "relearn_gap": rehearsal.then_some(c.relearn_gap),
                "replications": reps,
                "averaged": summary_json(cell.averaged.as_ref()),
            })
        })
        .collect();
    json!({
        "replications": result.replications,
        "base_seed": result.base_seed,
        "cells": cells,
    })
}

/// Markdown tables, one per observability, using the averaged summary when
/// present and the first replication otherwise.
pub fn summary_tables(result: &SweepResult) -> String {
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for cell in &result.cells {
        let c = &cell.cell;
        let s = cell
            .averaged
            .as_ref()
            .or_else(|| cell.summaries.first().and_then(Option::as_ref));
        let axes = axis_columns(c);
        let line = match s {
            Some(s) => format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                encoder_column(c),
                c.strategy.name(),
                axes.learning_rate,
                axes.pseudoset_size,
                axes.relearn_gap,
                sig6(s.mean),
                sig6(s.median),
                s.classification.label(),
                opt(s.first_success_run),
            ),
            None => format!(
                "| {} | {} | {} | {} | {} | failed | | | |",
                encoder_column(c),
                c.strategy.name(),
                axes.learning_rate,
                axes.pseudoset_size,
                axes.relearn_gap,
            ),
        };
        groups.entry(c.observability.name()).or_default().push(line);
    }
    let mut out = String::new();
    for (obs, lines) in groups {
        out.push_str(&format!("## {} results\n\n", obs.to_uppercase()));
        out.push_str(
            "| encoder | strategy | lr | pr | G | mean | median | class | first success |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Writes the first-replication plot and, for several replications, the
/// averaged plot of one cell.
pub fn write_cell_plots(
    out_dir: &Path,
    cell_id: &str,
    series: &[Vec<f64>],
) -> Result<Vec<PathBuf>, EmitError> {
    let mut written = Vec::new();
    let Some(first) = series.first() else {
        return Ok(written);
    };
    let dir = out_dir.join("plots");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(format!("{cell_id}.svg"));
    fs::write(&path, line_chart_svg(cell_id, first)).map_err(io_err(&path))?;
    written.push(path);
    if series.len() > 1 {
        let len = series.iter().map(Vec::len).min().unwrap_or(0);
        let averaged: Vec<f64> = (0..len)
            .map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64)
            .collect();
        let title = format!("{cell_id} (mean of {} runs)", series.len());
        let path = dir.join(format!("{cell_id}-mean.svg"));
        fs::write(&path, line_chart_svg(&title, &averaged)).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// A cell id with one step series per replication.
pub type CellSeries = (String, Vec<Vec<f64>>);

/// Step series read back from an `episodes.csv`, grouped per cell in file
/// order, replications in index order.
pub fn read_episodes(path: &Path) -> Result<Vec<CellSeries>, EmitError> {
    let read_err = |message: String| EmitError::Read {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| read_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| read_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["cell_id", "replication", "try_index", "steps"] {
        return Err(read_err("unexpected episodes.csv header".into()));
    }
    let mut cells: Vec<(String, BTreeMap<usize, Vec<f64>>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| read_err(e.to_string()))?;
        let bad = |what: &str| read_err(format!("row {}: bad {what}", line + 2));
        let id = &record[0];
        let rep: usize = record[1].parse().map_err(|_| bad("replication"))?;
        let steps: f64 = record[3].parse().map_err(|_| bad("steps"))?;
        if cells.last().map(|(c, _)| c.as_str()) != Some(id) {
            cells.push((id.to_string(), BTreeMap::new()));
        }
        let reps = &mut cells.last_mut().expect("just pushed").1;
        reps.entry(rep).or_default().push(steps);
    }
    Ok(cells
        .into_iter()
        .map(|(id, reps)| (id, reps.into_values().collect()))
        .collect())
}
