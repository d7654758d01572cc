//! Report files.
//!
//! `report.csv` has one row per cell, preceded by `#` lines carrying the
//! schema, the effective configuration and any failed cells. `rows.jsonl`
//! holds the per-run rows, `curves.jsonl` one record per training episode,
//! `trajectories.jsonl` one record per inference run, and `timings.csv` the
//! wall-clock measurements that are kept out of the other files so those
//! stay byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellFailure, CellKey, HarnessError, MetricsRow};
use crate::agents::{Inference, TrainLog};
use crate::env::{Action, Environment};

pub const REPORT_SCHEMA: &str = "quizforge.report/1";
pub const ROWS_SCHEMA: &str = "quizforge.rows/1";
pub const CURVE_SCHEMA: &str = "quizforge.curves/1";
pub const TRAJECTORY_SCHEMA: &str = "quizforge.trajectories/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub dataset: String,
    pub target: String,
    pub algorithm: String,
    pub alpha: String,
    pub episode: usize,
    pub steps: usize,
    pub max_value: f64,
    pub terminal_match: f64,
    pub success: bool,
    pub action_shares: [f64; 4],
}

impl CurveRecord {
    pub fn from_log(key: &CellKey, log: &TrainLog) -> Vec<Self> {
        log.episodes
            .iter()
            .map(|e| {
                let total: u64 = e.action_counts.iter().sum();
                let shares = e
                    .action_counts
                    .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 });
                CurveRecord {
                    dataset: key.dataset.clone(),
                    target: key.target.clone(),
                    algorithm: key.algorithm.clone(),
                    alpha: key.alpha.clone(),
                    episode: e.episode,
                    steps: e.steps,
                    max_value: e.max_value,
                    terminal_match: e.terminal_match,
                    success: e.success,
                    action_shares: shares,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub quiz: usize,
    /// Action that led here; absent for the start quiz.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub mcqs: Vec<u32>,
    pub topic_match: f64,
    pub diff_match: f64,
    pub target_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dataset: String,
    pub target: String,
    pub algorithm: String,
    pub alpha: String,
    pub run: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn from_inference(key: &CellKey, run: usize, env: &Environment, inf: &Inference) -> Self {
        let point = |quiz: usize, action: Option<Action>| TrajectoryStep {
            quiz,
            action,
            mcqs: env.universe().quiz(quiz).mcq_ids.clone(),
            topic_match: env.topic_score(quiz),
            diff_match: env.diff_score(quiz),
            target_match: env.score(quiz),
        };
        let mut steps = Vec::with_capacity(inf.trace.len() + 1);
        steps.push(point(inf.start, None));
        steps.extend(inf.trace.iter().map(|r| point(r.to, Some(r.action))));
        Self {
            dataset: key.dataset.clone(),
            target: key.target.clone(),
            algorithm: key.algorithm.clone(),
            alpha: key.alpha.clone(),
            run,
            steps,
        }
    }
}

/// Per-cell aggregate of the run rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub target: String,
    pub algorithm: String,
    pub alpha: String,
    pub runs: usize,
    pub mean_similarity: f64,
    pub mean_iterations: f64,
    pub mean_best_step: f64,
    pub success_rate: f64,
    pub share_sim_topic: f64,
    pub share_sim_level: f64,
    pub share_diss_topic: f64,
    pub share_diss_level: f64,
    #[serde(skip)]
    pub mean_infer_time_sec: f64,
}

/// Groups rows by cell in order of first appearance.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<CellSummary> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut groups: BTreeMap<CellKey, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = r.key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = |f: &dyn Fn(&MetricsRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut hist = [0u64; 4];
            for r in g {
                for (h, c) in hist.iter_mut().zip(r.action_histogram) {
                    *h += c;
                }
            }
            let total: u64 = hist.iter().sum();
            let share = |i: usize| if total == 0 { 0.0 } else { hist[i] as f64 / total as f64 };
            CellSummary {
                dataset: key.dataset.clone(),
                target: key.target.clone(),
                algorithm: key.algorithm.clone(),
                alpha: key.alpha.clone(),
                runs: g.len(),
                mean_similarity: mean(&|r| r.similarity),
                mean_iterations: mean(&|r| r.iterations as f64),
                mean_best_step: mean(&|r| r.best_step as f64),
                success_rate: mean(&|r| r.success as u8 as f64),
                share_sim_topic: share(Action::SimTopic.index()),
                share_sim_level: share(Action::SimLevel.index()),
                share_diss_topic: share(Action::DissTopic.index()),
                share_diss_level: share(Action::DissLevel.index()),
                mean_infer_time_sec: mean(&|r| r.infer_time_sec),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct JsonlHeader<'a> {
    schema: &'a str,
    config: &'a serde_json::Value,
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    schema: &str,
    config: &serde_json::Value,
    items: &[T],
) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &JsonlHeader { schema, config })?;
    out.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rows_jsonl(
    path: &Path,
    rows: &[MetricsRow],
    config: &serde_json::Value,
) -> Result<(), HarnessError> {
    write_jsonl(path, ROWS_SCHEMA, config, rows)
}

/// Reads a rows file written by [`write_rows_jsonl`]; returns the embedded
/// configuration and the rows.
pub fn read_rows_jsonl<R: BufRead>(
    input: R,
) -> Result<(serde_json::Value, Vec<MetricsRow>), HarnessError> {
    let mut lines = input.lines();
    let err = |line: usize, message: String| HarnessError::Format { line, message };
    let first = lines.next().ok_or_else(|| err(1, "missing header".into()))??;
    let header: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| err(1, e.to_string()))?;
    if header.get("schema").and_then(|s| s.as_str()) != Some(ROWS_SCHEMA) {
        return Err(err(1, format!("expected schema {ROWS_SCHEMA}")));
    }
    let config = header.get("config").cloned().unwrap_or(serde_json::Value::Null);
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| err(i + 2, e.to_string()))?);
    }
    Ok((config, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub rows: PathBuf,
    pub curves: PathBuf,
    pub trajectories: PathBuf,
    pub timings: PathBuf,
}

impl ReportFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            report: dir.join("report.csv"),
            rows: dir.join("rows.jsonl"),
            curves: dir.join("curves.jsonl"),
            trajectories: dir.join("trajectories.jsonl"),
            timings: dir.join("timings.csv"),
        }
    }
}

/// Writes the report, rows, curves, trajectories and timings into `dir`.
pub fn emit_report(
    dir: &Path,
    rows: &[MetricsRow],
    curves: &[CurveRecord],
    trajectories: &[TrajectoryRecord],
    failures: &[CellFailure],
    config: &serde_json::Value,
) -> Result<ReportFiles, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::NoRows);
    }
    fs::create_dir_all(dir)?;
    let files = ReportFiles::in_dir(dir);
    let summaries = aggregate(rows);

    let mut out = BufWriter::new(File::create(&files.report)?);
    writeln!(out, "# schema={REPORT_SCHEMA}")?;
    writeln!(out, "# config={}", serde_json::to_string(config)?)?;
    for f in failures {
        writeln!(out, "# failed {}: {}", f.cell.label(), f.error.replace('\n', " "))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for s in &summaries {
            w.serialize(s).map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        w.flush()?;
    }
    out.flush()?;

    write_rows_jsonl(&files.rows, rows, config)?;
    write_jsonl(&files.curves, CURVE_SCHEMA, config, curves)?;
    write_jsonl(&files.trajectories, TRAJECTORY_SCHEMA, config, trajectories)?;

    let mut t = BufWriter::new(File::create(&files.timings)?);
    writeln!(t, "dataset,target,algorithm,alpha,run,infer_time_sec")?;
    for r in rows {
        writeln!(
            t,
            "{},{},{},{},{},{}",
            r.dataset, r.target, r.algorithm, r.alpha, r.run, r.infer_time_sec
        )?;
    }
    t.flush()?;
    Ok(files)
}
