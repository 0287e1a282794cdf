//! Mini-batch training over fixed-length windows and windowed inference.

use std::io::Write;

use log::info;
use ndarray::{s, Array2};
use rand::seq::SliceRandom;

use super::loss::focal_loss_single;
use super::network::{compute_gradients, predict_batch, Batch};
use super::optim::{adamw_step, AdamWConfig, AdamWState};
use super::{LstmConfig, LstmModel};
use crate::ensemble::Recording;
use crate::error::{Error, Result};
use crate::eval::{metrics, ConfusionCounts};
use crate::rng;
use crate::timeline::{dilate_events, FrameStream, DEFAULT_WINDOW_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Supervision targets are events dilated by this many frames.
    pub window_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            alpha: 0.75,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 32,
            seq_len: 100,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            window_frames: DEFAULT_WINDOW_FRAMES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::invalid("seq_len and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One epoch of training history. Validation columns are `None` when no
/// validation recordings were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub pos_ratio: Option<f64>,
}

pub fn write_history_csv<W: Write>(rows: &[HistoryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss,balanced_acc,sensitivity,specificity,pos_ratio")?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            cell(r.val_loss),
            cell(r.balanced_acc),
            cell(r.sensitivity),
            cell(r.specificity),
            cell(r.pos_ratio),
        )?;
    }
    Ok(())
}

fn inputs(vap: &FrameStream, llm: &FrameStream) -> Result<Array2<f64>> {
    if vap.len() != llm.len() {
        return Err(Error::LengthMismatch {
            what: "VAP vs LLM stream",
            left: vap.len(),
            right: llm.len(),
        });
    }
    Ok(Array2::from_shape_fn((vap.len(), 2), |(t, c)| {
        if c == 0 {
            vap.values()[t]
        } else {
            llm.values()[t]
        }
    }))
}

struct Prepared {
    x: Array2<f64>,
    y: Vec<bool>,
}

fn prepare(recs: &[Recording], window: usize) -> Result<Vec<Prepared>> {
    recs.iter()
        .map(|r| {
            Ok(Prepared {
                x: inputs(&r.vap, &r.llm)?,
                y: dilate_events(&r.truth, window),
            })
        })
        .collect()
}

/// Frames with a per-frame probability at or above one half count as positive.
fn evaluate(model: &LstmModel, data: &[Prepared], cfg: &TrainConfig) -> Result<(f64, ConfusionCounts)> {
    let mut loss = 0.0;
    let mut n = 0usize;
    let mut conf = ConfusionCounts::default();
    for d in data {
        let p = predict_inputs(model, &d.x, cfg.seq_len, cfg.batch_size)?;
        for (&p, &y) in p.iter().zip(&d.y) {
            loss += focal_loss_single(p, y, cfg.gamma, cfg.alpha);
            conf.record(p >= 0.5, y);
        }
        n += d.y.len();
    }
    Ok((loss / n.max(1) as f64, conf))
}

/// Trains a freshly initialized model. Sequences are cut into `seq_len`
/// windows (the last one per recording shorter and masked), shuffled each
/// epoch and grouped into mini-batches.
pub fn train_lstm(
    train: &[Recording],
    val: &[Recording],
    model_cfg: LstmConfig,
    cfg: &TrainConfig,
) -> Result<(LstmModel, Vec<HistoryRow>)> {
    cfg.validate()?;
    if model_cfg.input_dim != 2 {
        return Err(Error::invalid("the fusion model takes exactly two input streams"));
    }
    if train.is_empty() {
        return Err(Error::invalid("no training recordings"));
    }
    let data = prepare(train, cfg.window_frames)?;
    let val_data = prepare(val, cfg.window_frames)?;
    if !data.iter().any(|d| d.y.iter().any(|&y| y)) {
        return Err(Error::DegenerateLabels(
            "training labels contain no positive frames".into(),
        ));
    }
    let mut model = LstmModel::initialized(model_cfg, cfg.seed)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((model, history));
    }

    let mut chunks: Vec<(usize, usize, usize)> = Vec::new();
    for (i, d) in data.iter().enumerate() {
        let n = d.y.len();
        let mut start = 0;
        while start < n {
            let len = cfg.seq_len.min(n - start);
            chunks.push((i, start, len));
            start += len;
        }
    }
    let mut shuffle_rng = rng::derived(cfg.seed, rng::OFFSET_SHUFFLE);
    let mut dropout_rng = rng::derived(cfg.seed, rng::OFFSET_DROPOUT);
    let mut state = AdamWState::new(model.n_params());
    let adamw = cfg.adamw();

    for epoch in 1..=cfg.epochs {
        chunks.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for group in chunks.chunks(cfg.batch_size) {
            let seqs: Vec<_> = group
                .iter()
                .map(|&(i, start, len)| {
                    let d = &data[i];
                    (d.x.slice(s![start..start + len, ..]), Some(&d.y[start..start + len]))
                })
                .collect();
            let batch = Batch::from_sequences(&seqs)?;
            let (loss, grads) =
                compute_gradients(&model, &batch, cfg.gamma, cfg.alpha, Some(&mut dropout_rng))?;
            adamw_step(model.params_mut(), &grads.data, &mut state, &adamw)?;
            loss_sum += loss * batch.n_valid() as f64;
            frames += batch.n_valid();
        }
        let train_loss = loss_sum / frames as f64;
        let row = if val_data.is_empty() {
            HistoryRow {
                epoch,
                train_loss,
                val_loss: None,
                balanced_acc: None,
                sensitivity: None,
                specificity: None,
                pos_ratio: None,
            }
        } else {
            let (val_loss, conf) = evaluate(&model, &val_data, cfg)?;
            let m = metrics(&conf)?;
            HistoryRow {
                epoch,
                train_loss,
                val_loss: Some(val_loss),
                balanced_acc: Some(m.balanced_accuracy),
                sensitivity: Some(m.recall),
                specificity: Some(conf.specificity()),
                pos_ratio: Some((conf.tp + conf.fp) as f64 / conf.total() as f64),
            }
        };
        info!(
            "epoch {epoch}: train loss {train_loss:.6}{}",
            row.balanced_acc
                .map_or(String::new(), |b| format!(", val balanced accuracy {b:.4}"))
        );
        history.push(row);
    }
    Ok((model, history))
}

fn predict_inputs(model: &LstmModel, x: &Array2<f64>, window: usize, batch_size: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(window.max(1)).collect();
    let mut out = Vec::with_capacity(n);
    for group in starts.chunks(batch_size.max(1)) {
        let seqs: Vec<_> = group
            .iter()
            .map(|&s| (x.slice(s![s..(s + window).min(n), ..]), None))
            .collect();
        for p in predict_batch(model, &Batch::from_sequences(&seqs)?)? {
            out.extend(p);
        }
    }
    Ok(out)
}

/// Per-frame probabilities, attending within consecutive `window`-frame blocks.
pub fn predict_lstm(model: &LstmModel, vap: &FrameStream, llm: &FrameStream, window: usize) -> Result<FrameStream> {
    if window == 0 {
        return Err(Error::invalid("prediction window must be positive"));
    }
    if vap.frame_rate() != llm.frame_rate() {
        return Err(Error::FrameRateMismatch(vap.frame_rate(), llm.frame_rate()));
    }
    let x = inputs(vap, llm)?;
    let p = if x.nrows() == 0 {
        Vec::new()
    } else {
        predict_inputs(model, &x, window, 32)?
    };
    FrameStream::new(vap.frame_rate(), p, "lstm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::GroundTruth;

    fn recording(n: usize, events: Vec<usize>) -> Recording {
        let vap: Vec<f64> = (0..n).map(|i| ((i * 7) % 10) as f64 / 10.0).collect();
        let llm: Vec<f64> = (0..n).map(|i| ((i * 3) % 10) as f64 / 10.0).collect();
        Recording::new(
            "r",
            FrameStream::new(50, vap, "vap").unwrap(),
            FrameStream::new(50, llm, "llm").unwrap(),
            GroundTruth::new(events, n).unwrap(),
        )
        .unwrap()
    }

    fn small() -> LstmConfig {
        LstmConfig {
            hidden: 4,
            heads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = TrainConfig {
            epochs: 0,
            seed: 3,
            ..Default::default()
        };
        let (m, h) = train_lstm(&[recording(120, vec![50])], &[], small(), &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(m, LstmModel::initialized(small(), 3).unwrap());
    }

    #[test]
    fn no_positives_is_rejected() {
        let cfg = TrainConfig::default();
        let err = train_lstm(&[recording(120, vec![])], &[], small(), &cfg).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = TrainConfig {
            epochs: 2,
            seq_len: 30,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let recs = [recording(130, vec![40]), recording(70, vec![10])];
        let (a, ha) = train_lstm(&recs, &recs[1..], small(), &cfg).unwrap();
        let (b, hb) = train_lstm(&recs, &recs[1..], small(), &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
        assert!(ha[0].balanced_acc.is_some());
        let other = TrainConfig { seed: 10, ..cfg };
        let (c, _) = train_lstm(&recs, &[], small(), &other).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn prediction_keeps_length() {
        let m = LstmModel::initialized(small(), 1).unwrap();
        let r = recording(257, vec![3]);
        let p = predict_lstm(&m, &r.vap, &r.llm, 100).unwrap();
        assert_eq!(p.len(), 257);
        assert!(p.values().iter().all(|&v| v > 0.0 && v < 1.0));
        let short = FrameStream::constant(50, 10, 0.1, "llm").unwrap();
        assert!(predict_lstm(&m, &r.vap, &short, 100).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let rows = [HistoryRow {
            epoch: 1,
            train_loss: 0.5,
            val_loss: None,
            balanced_acc: Some(0.75),
            sensitivity: None,
            specificity: None,
            pos_ratio: None,
        }];
        let mut buf = Vec::new();
        write_history_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,balanced_acc,sensitivity,specificity,pos_ratio\n1,0.5,,0.75,,,\n"
        );
    }
}
