//! Threshold search over a fixed grid, optionally on inverted probabilities.

use super::{metrics, ConfusionCounts, MetricReport};
use crate::error::{Error, Result};
use crate::timeline::{dilate_events, EvalConfig, FrameStream, GroundTruth, Objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEntry {
    pub threshold: f64,
    pub flipped: bool,
    pub confusion: ConfusionCounts,
    pub report: MetricReport,
}

impl SweepEntry {
    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::BalancedAccuracy => self.report.balanced_accuracy,
            Objective::F1 => self.report.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub flipped: bool,
    pub report: MetricReport,
    /// Unflipped entries in grid order, then flipped ones.
    pub grid: Vec<SweepEntry>,
}

pub fn threshold_sweep(probs: &FrameStream, truth: &GroundTruth, cfg: &EvalConfig) -> Result<SweepResult> {
    threshold_sweep_pooled(&[(probs, truth)], cfg)
}

/// Sweeps with confusion counts pooled over several recordings. The best
/// entry maximizes the objective; ties go to the unflipped side, then to the
/// lowest threshold.
pub fn threshold_sweep_pooled(pairs: &[(&FrameStream, &GroundTruth)], cfg: &EvalConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to sweep"));
    }
    let labelled: Vec<(&FrameStream, Vec<bool>)> = pairs
        .iter()
        .map(|(p, t)| {
            if p.len() != t.total_frames() {
                return Err(Error::LengthMismatch {
                    what: "predictions vs ground truth",
                    left: p.len(),
                    right: t.total_frames(),
                });
            }
            Ok((*p, dilate_events(t, cfg.window_frames)))
        })
        .collect::<Result<_>>()?;

    let sides: &[bool] = if cfg.allow_flip { &[false, true] } else { &[false] };
    let mut grid = Vec::with_capacity(sides.len() * cfg.threshold_grid.len());
    for &flipped in sides {
        for &threshold in &cfg.threshold_grid {
            let mut confusion = ConfusionCounts::default();
            for (p, labels) in &labelled {
                for (&v, &l) in p.values().iter().zip(labels) {
                    let v = if flipped { 1.0 - v } else { v };
                    confusion.record(v >= threshold, l);
                }
            }
            grid.push(SweepEntry {
                threshold,
                flipped,
                confusion,
                report: metrics(&confusion)?,
            });
        }
    }
    let mut best = grid[0];
    for e in &grid[1..] {
        if e.objective(cfg.objective) > best.objective(cfg.objective) {
            best = *e;
        }
    }
    Ok(SweepResult {
        best_threshold: best.threshold,
        flipped: best.flipped,
        report: best.report,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_as_stream(truth: &GroundTruth, complement: bool) -> FrameStream {
        let v = dilate_events(truth, 75)
            .into_iter()
            .map(|l| if l != complement { 1.0 } else { 0.0 })
            .collect();
        FrameStream::new(50, v, "labels").unwrap()
    }

    #[test]
    fn perfect_stream_picks_lowest_unflipped() {
        let truth = GroundTruth::new(vec![200, 700], 1000).unwrap();
        let r = threshold_sweep(&labels_as_stream(&truth, false), &truth, &EvalConfig::default()).unwrap();
        assert_eq!(r.report.balanced_accuracy, 1.0);
        assert_eq!((r.best_threshold, r.flipped), (0.05, false));
        assert_eq!(r.grid.len(), 38);
    }

    #[test]
    fn complemented_stream_is_flipped() {
        let truth = GroundTruth::new(vec![200, 700], 1000).unwrap();
        let r = threshold_sweep(&labels_as_stream(&truth, true), &truth, &EvalConfig::default()).unwrap();
        assert_eq!(r.report.balanced_accuracy, 1.0);
        assert!(r.flipped);
        assert_eq!(r.best_threshold, 0.05);
    }

    #[test]
    fn constant_half_is_chance_everywhere() {
        let truth = GroundTruth::new(vec![300], 1000).unwrap();
        let p = FrameStream::constant(50, 1000, 0.5, "c").unwrap();
        let r = threshold_sweep(&p, &truth, &EvalConfig::default()).unwrap();
        assert!(r.grid.iter().all(|e| e.report.balanced_accuracy == 0.5));
        assert_eq!((r.best_threshold, r.flipped), (0.05, false));
    }

    #[test]
    fn no_flip_grid_is_half_size() {
        let truth = GroundTruth::new(vec![3], 10).unwrap();
        let p = FrameStream::constant(50, 10, 0.2, "c").unwrap();
        let cfg = EvalConfig {
            allow_flip: false,
            ..Default::default()
        };
        assert_eq!(threshold_sweep(&p, &truth, &cfg).unwrap().grid.len(), 19);
    }

    proptest! {
        #[test]
        fn best_is_invariant_under_inversion(
            values in proptest::collection::vec(0.0f64..=1.0, 50..400),
            event_frac in 0.0f64..1.0,
        ) {
            let n = values.len();
            let truth = GroundTruth::new(vec![(event_frac * (n - 1) as f64) as usize], n).unwrap();
            let p = FrameStream::new(50, values, "p").unwrap();
            let cfg = EvalConfig { window_frames: 10, ..Default::default() };
            let a = threshold_sweep(&p, &truth, &cfg).unwrap();
            let b = threshold_sweep(&p.complement(), &truth, &cfg).unwrap();
            // flipping one equals not flipping the other, so both see the same entries
            prop_assert_eq!(a.report.balanced_accuracy, b.report.balanced_accuracy);
        }

        #[test]
        fn pooled_equals_concatenated(
            a in proptest::collection::vec(0.0f64..=1.0, 30..200),
            b in proptest::collection::vec(0.0f64..=1.0, 30..200),
        ) {
            let ta = GroundTruth::new(vec![a.len() / 2], a.len()).unwrap();
            let tb = GroundTruth::new(vec![b.len() / 2], b.len()).unwrap();
            let cfg = EvalConfig { window_frames: 5, ..Default::default() };
            let sa = FrameStream::new(50, a.clone(), "a").unwrap();
            let sb = FrameStream::new(50, b.clone(), "b").unwrap();
            let pooled = threshold_sweep_pooled(&[(&sa, &ta), (&sb, &tb)], &cfg).unwrap();
            let joined = FrameStream::new(50, [a.clone(), b.clone()].concat(), "ab").unwrap();
            let tj = GroundTruth::new(vec![a.len() / 2, a.len() + b.len() / 2], joined.len()).unwrap();
            let concat = threshold_sweep(&joined, &tj, &cfg).unwrap();
            for (x, y) in pooled.grid.iter().zip(&concat.grid) {
                prop_assert_eq!(x.confusion, y.confusion);
            }
        }
    }
}
