//! Cross-validation: fit on training folds, freeze the sweep's threshold and
//! flip there, score the held-out fold, pool confusion counts across folds.

use std::thread;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;

use super::sweep::{threshold_sweep_pooled, SweepResult};
use super::{binarize, metrics, rtf, windowed_confusion, ConfusionCounts, MetricReport};
use crate::ensemble::{FusionStrategy, Recording};
use crate::error::{Error, Result};
use crate::rng;
use crate::timeline::{EvalConfig, FrameStream};

/// `k` disjoint folds covering `0..n`, sizes differing by at most one.
pub fn kfold_split(n_items: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs at least two folds"));
    }
    if k > n_items {
        return Err(Error::invalid(format!("cannot split {n_items} items into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n_items).collect();
    idx.shuffle(&mut rng::derived(seed, rng::OFFSET_SPLIT));
    let (base, extra) = (n_items / k, n_items % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

pub fn loo_split(n_items: usize) -> Result<Vec<Vec<usize>>> {
    if n_items < 2 {
        return Err(Error::invalid("leave-one-out needs at least two items"));
    }
    Ok((0..n_items).map(|i| vec![i]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CvScheme {
    KFold { k: usize, seed: u64 },
    LeaveOneOut,
    /// Test folds given as recording indices.
    Explicit(Vec<Vec<usize>>),
}

impl CvScheme {
    pub fn folds(&self, n_items: usize) -> Result<Vec<Vec<usize>>> {
        match self {
            CvScheme::KFold { k, seed } => kfold_split(n_items, *k, *seed),
            CvScheme::LeaveOneOut => loo_split(n_items),
            CvScheme::Explicit(folds) => {
                let mut seen = vec![false; n_items];
                for &i in folds.iter().flatten() {
                    if i >= n_items || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::invalid(format!("fold index {i} is out of range or repeated")));
                    }
                }
                Ok(folds.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub test: Vec<usize>,
    /// `None` when the fold was skipped.
    pub sweep: Option<SweepResult>,
    pub confusion: ConfusionCounts,
    pub report: Option<MetricReport>,
    pub skipped: Option<String>,
    /// Held-out predictions, parallel to `test`.
    pub predictions: Vec<FrameStream>,
    pub processing_s: f64,
    pub audio_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub model: String,
    pub prompt: String,
    pub folds: Vec<FoldReport>,
    pub pooled: ConfusionCounts,
    /// Metrics of the pooled confusion; `None` if every fold was skipped.
    pub aggregate: Option<MetricReport>,
}

impl RunReport {
    /// The frozen choice shared by every scored fold, if they agree.
    pub fn common_threshold(&self) -> Option<(f64, bool)> {
        let mut choices = self
            .folds
            .iter()
            .filter_map(|f| f.sweep.as_ref().map(|s| (s.best_threshold, s.flipped)));
        let first = choices.next()?;
        choices.all(|c| c == first).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: usize,
    /// Timing is only meaningful single-threaded, so this forces `jobs = 1`.
    pub measure_rtf: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            measure_rtf: false,
        }
    }
}

fn run_fold(
    strategy: &dyn FusionStrategy,
    recordings: &[Recording],
    fold: usize,
    test: &[usize],
    cfg: &EvalConfig,
    measure_rtf: bool,
) -> Result<FoldReport> {
    let train: Vec<Recording> = (0..recordings.len())
        .filter(|i| !test.contains(i))
        .map(|i| recordings[i].clone())
        .collect();
    let audio_s: f64 = test.iter().map(|&i| recordings[i].duration_s()).sum();
    let skipped = |reason: String| {
        warn!("fold {fold} skipped: {reason}");
        Ok(FoldReport {
            fold,
            test: test.to_vec(),
            sweep: None,
            confusion: ConfusionCounts::default(),
            report: None,
            skipped: Some(reason),
            predictions: Vec::new(),
            processing_s: 0.0,
            audio_s,
        })
    };
    if train.is_empty() {
        return skipped("no training recordings".into());
    }
    let mut predictor = match strategy.fit(&train) {
        Ok(p) => p,
        Err(Error::DegenerateLabels(reason)) => return skipped(reason),
        Err(e) => return Err(e),
    };

    let train_pred = train.iter().map(|r| predictor.predict(r)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = train_pred.iter().zip(&train).map(|(p, r)| (p, &r.truth)).collect();
    let sweep = threshold_sweep_pooled(&pairs, cfg)?;

    let mut predictions = Vec::with_capacity(test.len());
    let mut processing_s = 0.0;
    let mut confusion = ConfusionCounts::default();
    for &i in test {
        let rec = &recordings[i];
        let start = Instant::now();
        let p = predictor.predict(rec)?;
        processing_s += start.elapsed().as_secs_f64();
        let binary = binarize(&p, sweep.best_threshold, sweep.flipped);
        confusion.add(&windowed_confusion(&binary, &rec.truth, cfg.window_frames)?);
        predictions.push(p);
    }
    let mut report = metrics(&confusion)?;
    if measure_rtf {
        report.rtf = Some(rtf(processing_s, audio_s)?);
    }
    Ok(FoldReport {
        fold,
        test: test.to_vec(),
        sweep: Some(sweep),
        confusion,
        report: Some(report),
        skipped: None,
        predictions,
        processing_s,
        audio_s,
    })
}

/// Runs every fold, on up to `opts.jobs` threads. Folds whose training labels
/// are single-class are skipped and recorded, not fatal.
pub fn evaluate_run(
    strategy: &dyn FusionStrategy,
    recordings: &[Recording],
    scheme: &CvScheme,
    cfg: &EvalConfig,
    opts: RunOptions,
) -> Result<RunReport> {
    cfg.validate()?;
    let folds = scheme.folds(recordings.len())?;
    let jobs = if opts.measure_rtf { 1 } else { opts.jobs.max(1) };

    let mut results: Vec<(usize, Result<FoldReport>)> = if jobs == 1 {
        folds
            .iter()
            .enumerate()
            .map(|(f, test)| (f, run_fold(strategy, recordings, f, test, cfg, opts.measure_rtf)))
            .collect()
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let folds = &folds;
                    scope.spawn(move || {
                        folds
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(jobs)
                            .map(|(f, test)| (f, run_fold(strategy, recordings, f, test, cfg, false)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("fold worker panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(f, _)| *f);

    let folds = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>>>()?;
    let mut pooled = ConfusionCounts::default();
    let (mut processing_s, mut audio_s) = (0.0, 0.0);
    for f in folds.iter().filter(|f| f.skipped.is_none()) {
        pooled.add(&f.confusion);
        processing_s += f.processing_s;
        audio_s += f.audio_s;
    }
    let aggregate = if pooled.total() == 0 {
        None
    } else {
        let mut m = metrics(&pooled)?;
        if opts.measure_rtf {
            m.rtf = Some(rtf(processing_s, audio_s)?);
        }
        Some(m)
    };
    Ok(RunReport {
        model: strategy.name().to_string(),
        prompt: strategy.prompt_label().to_string(),
        folds,
        pooled,
        aggregate,
    })
}
