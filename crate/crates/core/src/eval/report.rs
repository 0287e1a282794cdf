//! CSV writers for metric tables, sweep grids and per-frame traces.

use std::io::Write;

use super::cv::RunReport;
use super::sweep::SweepResult;
use super::{binarize, MetricReport};
use crate::error::Result;
use crate::timeline::{dilate_events, FrameStream, GroundTruth};

pub const REPORT_HEADER: &str = "dataset,model,prompt,threshold,flipped,accuracy,balanced_acc,precision,recall,f1,rtf";
pub const SWEEP_HEADER: &str = "threshold,flipped,accuracy,balanced_acc,precision,recall,f1";
pub const TRACE_HEADER: &str = "frame,truth_event,effective_label,pred_binary,prob";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub threshold: Option<f64>,
    pub flipped: Option<bool>,
    /// `None` for a skipped fold.
    pub report: Option<MetricReport>,
}

impl ReportRow {
    /// One row per fold (`<dataset>:fold<k>`) and a final `<dataset>:aggregate` row.
    pub fn from_run(dataset: &str, run: &RunReport) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = run
            .folds
            .iter()
            .map(|f| ReportRow {
                dataset: format!("{dataset}:fold{}", f.fold),
                model: run.model.clone(),
                prompt: run.prompt.clone(),
                threshold: f.sweep.as_ref().map(|s| s.best_threshold),
                flipped: f.sweep.as_ref().map(|s| s.flipped),
                report: f.report,
            })
            .collect();
        let common = run.common_threshold();
        rows.push(ReportRow {
            dataset: format!("{dataset}:aggregate"),
            model: run.model.clone(),
            prompt: run.prompt.clone(),
            threshold: common.map(|c| c.0),
            flipped: common.map(|c| c.1),
            report: run.aggregate,
        });
        rows
    }
}

fn metric(v: f64) -> String {
    format!("{v:.6}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map_or(String::new(), f)
}

/// Fields are not quoted, so commas in names are replaced.
fn field(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

pub fn write_report<W: Write>(rows: &[ReportRow], mut out: W) -> Result<()> {
    let mut text = String::new();
    text.push_str(REPORT_HEADER);
    text.push('\n');
    for r in rows {
        let m = r.report;
        let cells = [
            field(&r.dataset),
            field(&r.model),
            field(&r.prompt),
            opt(r.threshold, |t| t.to_string()),
            opt(r.flipped, |f| f.to_string()),
            opt(m, |m| metric(m.accuracy)),
            opt(m, |m| metric(m.balanced_accuracy)),
            opt(m, |m| metric(m.precision)),
            opt(m, |m| metric(m.recall)),
            opt(m, |m| metric(m.f1)),
            opt(m.and_then(|m| m.rtf), metric),
        ];
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| crate::Error::io("<report>", e))
}

pub fn write_sweep<W: Write>(sweep: &SweepResult, mut out: W) -> Result<()> {
    let mut text = String::new();
    text.push_str(SWEEP_HEADER);
    text.push('\n');
    for e in &sweep.grid {
        let m = e.report;
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.threshold,
            e.flipped,
            metric(m.accuracy),
            metric(m.balanced_accuracy),
            metric(m.precision),
            metric(m.recall),
            metric(m.f1)
        ));
    }
    out.write_all(text.as_bytes()).map_err(|e| crate::Error::io("<sweep>", e))
}

pub fn write_trace<W: Write>(
    mut out: W,
    truth: &GroundTruth,
    window_frames: usize,
    probs: &FrameStream,
    threshold: f64,
    flipped: bool,
) -> Result<()> {
    if probs.len() != truth.total_frames() {
        return Err(crate::Error::LengthMismatch {
            what: "trace predictions vs ground truth",
            left: probs.len(),
            right: truth.total_frames(),
        });
    }
    let effective = dilate_events(truth, window_frames);
    let binary = binarize(probs, threshold, flipped);
    let mut is_event = vec![false; truth.total_frames()];
    for &e in truth.events() {
        is_event[e] = true;
    }
    let mut text = String::with_capacity(32 * probs.len());
    text.push_str(TRACE_HEADER);
    text.push('\n');
    for f in 0..probs.len() {
        text.push_str(&format!(
            "{f},{},{},{},{}\n",
            u8::from(is_event[f]),
            u8::from(effective[f]),
            u8::from(binary[f]),
            probs.values()[f]
        ));
    }
    out.write_all(text.as_bytes()).map_err(|e| crate::Error::io("<trace>", e))
}
