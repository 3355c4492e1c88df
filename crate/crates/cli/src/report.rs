//! Report emission from persisted runs: the GapReport as JSON, flat CSV rows
//! and the plotdata document consumed by external plotting tools.
//!
//! plotdata:
//!
//! ```json
//! {
//!   "series": [
//!     { "condition": "correct", "image_ids": ["…"], "scores": [0.93], "mean": 0.93 },
//!     { "condition": "incorrect", "image_ids": ["…"], "scores": [0.01], "mean": 0.01 }
//!   ],
//!   "gap": 0.92
//! }
//! ```
//!
//! Scores are per-image means over samples, ordered by image id. `gap` is
//! present when exactly two runs are given and equals the difference of the
//! two series means.

use std::collections::HashMap;
use std::io::Write;

use cyclecap_core::metrics::aggregate;
use cyclecap_core::{compute_gap, Condition, Error, GapReport, Result, RunResult};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub condition: Condition,
    pub image_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub series: Vec<Series>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

/// Puts a correct/incorrect pair in that order; any other pair stays as given.
fn ordered_pair(runs: &[RunResult]) -> Option<(&RunResult, &RunResult)> {
    match runs {
        [a, b] if a.condition == Condition::Incorrect && b.condition == Condition::Correct => {
            Some((b, a))
        }
        [a, b] => Some((a, b)),
        _ => None,
    }
}

pub fn gap_report(runs: &[RunResult]) -> Result<GapReport> {
    let (a, b) = ordered_pair(runs).ok_or_else(|| {
        Error::Precondition(format!("a gap report needs two runs, got {}", runs.len()))
    })?;
    compute_gap(a, b)
}

pub fn plot_data(runs: &[RunResult]) -> Result<PlotData> {
    let ordered: Vec<&RunResult> = match ordered_pair(runs) {
        Some((a, b)) => vec![a, b],
        None => runs.iter().collect(),
    };
    let series: Vec<Series> = ordered
        .iter()
        .map(|run| {
            let (image_ids, scores): (Vec<String>, Vec<f64>) =
                run.per_image_cosines().into_iter().unzip();
            Series {
                condition: run.condition,
                mean: aggregate(&scores).mean,
                image_ids,
                scores,
            }
        })
        .collect();
    let gap = match ordered.as_slice() {
        [_, _] => Some(gap_report(runs)?.gap),
        _ => None,
    };
    Ok(PlotData { series, gap })
}

pub fn write_csv(runs: &[RunResult], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record([
        "image_id",
        "condition",
        "sample",
        "cosine",
        "bleu",
        "text2text_mean",
    ])
    .map_err(csv_err)?;
    for run in runs {
        let baselines: HashMap<&str, _> = run
            .baselines
            .iter()
            .flatten()
            .map(|b| (b.image_id.as_str(), b))
            .collect();
        for r in &run.records {
            let b = baselines.get(r.image_id.as_str());
            w.write_record([
                r.image_id.clone(),
                r.condition.to_string(),
                r.sample_index.to_string(),
                r.cosine.to_string(),
                b.map(|b| b.bleu.to_string()).unwrap_or_default(),
                b.and_then(|b| b.text2text.as_ref())
                    .map(|t| t.mean.to_string())
                    .unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(())
}

/// JSON for one run: its condition and summary; for two, the GapReport.
pub fn write_json(runs: &[RunResult], out: &mut dyn Write) -> Result<()> {
    let value = match runs {
        [run] => serde_json::json!({
            "condition": run.condition,
            "summary": run.summary,
            "failures": run.failures.len(),
        }),
        _ => serde_json::to_value(gap_report(runs)?)?,
    };
    serde_json::to_writer_pretty(&mut *out, &value)?;
    writeln!(out).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(())
}

pub fn write_report(runs: &[RunResult], format: ReportFormat, out: &mut dyn Write) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Precondition("no runs given".into()));
    }
    match format {
        ReportFormat::Json => write_json(runs, out),
        ReportFormat::Csv => write_csv(runs, out),
        ReportFormat::Plotdata => {
            serde_json::to_writer_pretty(&mut *out, &plot_data(runs)?)?;
            writeln!(out).map_err(|e| Error::Invalid(e.to_string()))?;
            Ok(())
        }
    }
}
