//! Frame-level scoring against events dilated by the evaluation window.
//!
//! Every ratio whose denominator is zero is defined as 0.

pub mod cv;
pub mod report;
pub mod sweep;

pub use cv::{evaluate_run, kfold_split, loo_split, CvScheme, FoldReport, RunOptions, RunReport};
pub use report::{write_report, write_sweep, write_trace, ReportRow};
pub use sweep::{threshold_sweep, threshold_sweep_pooled, SweepEntry, SweepResult};

use crate::error::{Error, Result};
use crate::timeline::{dilate_events, FrameStream, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    #[inline]
    pub fn record(&mut self, pred: bool, label: bool) {
        match (pred, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rtf: Option<f64>,
}

pub fn metrics(conf: &ConfusionCounts) -> Result<MetricReport> {
    if conf.total() == 0 {
        return Err(Error::invalid("no frames were scored"));
    }
    let recall = conf.sensitivity();
    let precision = ratio(conf.tp, conf.tp + conf.fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricReport {
        accuracy: ratio(conf.tp + conf.tn, conf.total()),
        balanced_accuracy: 0.5 * (recall + conf.specificity()),
        precision,
        recall,
        f1,
        rtf: None,
    })
}

/// `p >= threshold`, after `p -> 1 - p` when flipped.
pub fn binarize(stream: &FrameStream, threshold: f64, flipped: bool) -> Vec<bool> {
    stream
        .values()
        .iter()
        .map(|&p| if flipped { 1.0 - p >= threshold } else { p >= threshold })
        .collect()
}

pub fn windowed_confusion(pred: &[bool], truth: &GroundTruth, window_frames: usize) -> Result<ConfusionCounts> {
    if pred.len() != truth.total_frames() {
        return Err(Error::LengthMismatch {
            what: "predictions vs ground truth",
            left: pred.len(),
            right: truth.total_frames(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in pred.iter().zip(&dilate_events(truth, window_frames)) {
        c.record(p, l);
    }
    Ok(c)
}

/// Real-time factor: processing time over audio duration.
pub fn rtf(processing_s: f64, audio_s: f64) -> Result<f64> {
    if !(audio_s > 0.0) {
        return Err(Error::invalid("audio duration must be positive"));
    }
    if !(processing_s >= 0.0) {
        return Err(Error::invalid("processing time must be non-negative"));
    }
    Ok(processing_s / audio_s)
}
