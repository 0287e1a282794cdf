//! Whole-stack forward and backward passes over a padded mini-batch.
//!
//! Sequences shorter than the batch's longest are padded at the end. The
//! forward direction never sees padding before real steps. The backward
//! direction reads each sequence reversed within its own length, so padding
//! again trails the real steps. Padded steps are masked as attention keys
//! and carry no loss.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::RngExt;

use super::attention::{mha_backward, mha_forward, AttnCache, AttnWeights};
use super::cell::{dir_backward, dir_forward, sigmoid, DirCache};
use super::loss::{focal_grad_logit, focal_loss_single};
use super::{attn_tensor, head_b, head_w, lstm_tensor, LstmModel, BK, BO, BQ, BV, B_LSTM, WK, WO, WQ, WV, W_HH, W_IH};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    steps: usize,
    batch: usize,
    x: Array2<f64>,
    y: Vec<bool>,
    valid: Vec<bool>,
    lens: Vec<usize>,
}

impl Batch {
    /// Packs `[len_i, input_dim]` sequences, each with optional per-step labels.
    pub fn from_sequences(seqs: &[(ArrayView2<f64>, Option<&[bool]>)]) -> Result<Self> {
        let Some((first, _)) = seqs.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let dim = first.ncols();
        let steps = seqs.iter().map(|(x, _)| x.nrows()).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        let batch = seqs.len();
        let mut x = Array2::zeros((steps * batch, dim));
        let mut y = vec![false; steps * batch];
        let mut valid = vec![false; steps * batch];
        let mut lens = Vec::with_capacity(batch);
        for (b, (seq, labels)) in seqs.iter().enumerate() {
            if seq.nrows() == 0 {
                return Err(Error::invalid("empty sequence"));
            }
            if seq.ncols() != dim {
                return Err(Error::LengthMismatch {
                    what: "sequence feature width",
                    left: seq.ncols(),
                    right: dim,
                });
            }
            if let Some(l) = labels {
                if l.len() != seq.nrows() {
                    return Err(Error::LengthMismatch {
                        what: "sequence labels",
                        left: l.len(),
                        right: seq.nrows(),
                    });
                }
            }
            for t in 0..seq.nrows() {
                let r = t * batch + b;
                x.row_mut(r).assign(&seq.row(t));
                valid[r] = true;
                y[r] = labels.is_some_and(|l| l[t]);
            }
            lens.push(seq.nrows());
        }
        Ok(Self {
            steps,
            batch,
            x,
            y,
            valid,
            lens,
        })
    }

    pub fn single(seq: ArrayView2<f64>) -> Result<Self> {
        Self::from_sequences(&[(seq, None)])
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn n_valid(&self) -> usize {
        self.lens.iter().sum()
    }

    /// Row of step `t` of sequence `b`.
    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }
}

/// Per-sequence time reversal within each length; padded rows become zero.
/// An involution on the real rows, so it is also its own adjoint.
fn reverse_rows(a: &Array2<f64>, batch: &Batch) -> Array2<f64> {
    let mut out = Array2::zeros(a.raw_dim());
    for (b, &len) in batch.lens.iter().enumerate() {
        for s in 0..len {
            out.row_mut(batch.row(s, b)).assign(&a.row(batch.row(len - 1 - s, b)));
        }
    }
    out
}

fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("non-finite activation in {layer}")))
    }
}

pub(crate) struct LayerCache {
    fwd: DirCache,
    bwd: DirCache,
}

pub(crate) fn bilstm_forward(model: &LstmModel, batch: &Batch) -> Result<(Array2<f64>, Vec<LayerCache>)> {
    let cfg = model.config();
    if batch.x.ncols() != cfg.input_dim {
        return Err(Error::LengthMismatch {
            what: "input feature width",
            left: batch.x.ncols(),
            right: cfg.input_dim,
        });
    }
    let mut input = batch.x.clone();
    let mut caches = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let run = |d: usize, x: Array2<f64>| {
            dir_forward(
                x,
                model.view2(lstm_tensor(l, d, W_IH)),
                model.view2(lstm_tensor(l, d, W_HH)),
                model.view1(lstm_tensor(l, d, B_LSTM)),
                batch.steps,
                batch.batch,
            )
        };
        let reversed = reverse_rows(&input, batch);
        let fwd = run(0, input);
        let bwd = run(1, reversed);
        let out = concatenate(Axis(1), &[fwd.h.view(), reverse_rows(&bwd.h, batch).view()])
            .expect("matching rows");
        check_finite(&out, &format!("lstm layer {l}"))?;
        caches.push(LayerCache { fwd, bwd });
        input = out;
    }
    Ok((input, caches))
}

pub(crate) struct ForwardCache {
    layers: Vec<LayerCache>,
    attn: AttnCache,
    mask: Option<Array2<f64>>,
    dropped: Array2<f64>,
    pub logits: Vec<f64>,
}

/// Full forward pass. Dropout is applied only when a generator is supplied.
pub(crate) fn forward(
    model: &LstmModel,
    batch: &Batch,
    dropout: Option<&mut SplitMix64>,
) -> Result<ForwardCache> {
    let cfg = model.config();
    let (y, layers) = bilstm_forward(model, batch)?;
    let w = AttnWeights::of(model);
    let (attn_out, attn) = mha_forward(&y, &w, batch.steps, batch.batch, &batch.valid, cfg.heads);
    check_finite(&attn_out, "attention")?;

    let (mask, dropped) = match dropout {
        Some(r) if cfg.dropout > 0.0 => {
            let keep = 1.0 / (1.0 - cfg.dropout);
            let mask = Array2::from_shape_simple_fn(attn_out.raw_dim(), || {
                if r.random::<f64>() < cfg.dropout {
                    0.0
                } else {
                    keep
                }
            });
            let dropped = &attn_out * &mask;
            (Some(mask), dropped)
        }
        _ => (None, attn_out),
    };

    let hw = model.view2(head_w(cfg));
    let hb = model.view1(head_b(cfg))[0];
    let logits: Vec<f64> = dropped.dot(&hw.t()).iter().map(|z| z + hb).collect();
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("non-finite logit in output head at row {i}")));
    }
    Ok(ForwardCache {
        layers,
        attn,
        mask,
        dropped,
        logits,
    })
}

/// Gradient buffer in the model's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    fn add(&mut self, model: &LstmModel, idx: usize, values: impl IntoIterator<Item = f64>) {
        let range = model.layout()[idx].range();
        for (g, v) in self.data[range].iter_mut().zip(values) {
            *g += v;
        }
    }

    pub fn tensor<'a>(&'a self, model: &LstmModel, name: &str) -> Option<&'a [f64]> {
        let spec = model.layout().iter().find(|t| t.name == name)?;
        Some(&self.data[spec.range()])
    }
}

/// Mean focal loss over the batch's real steps.
pub fn batch_loss(
    model: &LstmModel,
    batch: &Batch,
    gamma: f64,
    alpha: f64,
    dropout: Option<&mut SplitMix64>,
) -> Result<f64> {
    let fc = forward(model, batch, dropout)?;
    Ok(loss_of(&fc.logits, batch, gamma, alpha))
}

fn loss_of(logits: &[f64], batch: &Batch, gamma: f64, alpha: f64) -> f64 {
    let n = batch.n_valid() as f64;
    logits
        .iter()
        .zip(&batch.y)
        .zip(&batch.valid)
        .filter(|(_, &ok)| ok)
        .map(|((&z, &y), _)| focal_loss_single(sigmoid(z), y, gamma, alpha))
        .sum::<f64>()
        / n
}

/// Mean focal loss and its exact gradient with respect to every parameter.
pub fn compute_gradients(
    model: &LstmModel,
    batch: &Batch,
    gamma: f64,
    alpha: f64,
    dropout: Option<&mut SplitMix64>,
) -> Result<(f64, Gradients)> {
    let cfg = *model.config();
    let fc = forward(model, batch, dropout)?;
    let loss = loss_of(&fc.logits, batch, gamma, alpha);
    let n = batch.n_valid() as f64;
    let rows = batch.steps * batch.batch;
    let mut grads = Gradients {
        data: vec![0.0; model.n_params()],
    };

    let dz = Array2::from_shape_fn((rows, 1), |(r, _)| {
        if batch.valid[r] {
            focal_grad_logit(sigmoid(fc.logits[r]), batch.y[r], gamma, alpha) / n
        } else {
            0.0
        }
    });
    grads.add(model, head_w(&cfg), dz.t().dot(&fc.dropped));
    grads.add(model, head_b(&cfg), [dz.sum()]);
    let mut d_attn = dz.dot(&model.view2(head_w(&cfg)));
    if let Some(mask) = &fc.mask {
        d_attn *= mask;
    }

    let w = AttnWeights::of(model);
    let ag = mha_backward(&fc.attn, &d_attn, &w, batch.steps, batch.batch, cfg.heads);
    for (which, g) in [
        (WQ, ag.wq.iter().copied().collect()),
        (BQ, ag.bq.to_vec()),
        (WK, ag.wk.iter().copied().collect()),
        (BK, ag.bk.to_vec()),
        (WV, ag.wv.iter().copied().collect()),
        (BV, ag.bv.to_vec()),
        (WO, ag.wo.iter().copied().collect()),
        (BO, ag.bo.to_vec()),
    ] {
        grads.add(model, attn_tensor(&cfg, which), g);
    }

    let h = cfg.hidden;
    let mut d_y = ag.x;
    for l in (0..cfg.layers).rev() {
        let cache = &fc.layers[l];
        let d_hf = d_y.slice(s![.., ..h]).to_owned();
        let d_hb = reverse_rows(&d_y.slice(s![.., h..]).to_owned(), batch);
        let gf = dir_backward(
            &cache.fwd,
            &d_hf,
            model.view2(lstm_tensor(l, 0, W_IH)),
            model.view2(lstm_tensor(l, 0, W_HH)),
            batch.steps,
            batch.batch,
        );
        let gb = dir_backward(
            &cache.bwd,
            &d_hb,
            model.view2(lstm_tensor(l, 1, W_IH)),
            model.view2(lstm_tensor(l, 1, W_HH)),
            batch.steps,
            batch.batch,
        );
        for (d, g) in [(0, &gf), (1, &gb)] {
            grads.add(model, lstm_tensor(l, d, W_IH), g.w_ih.iter().copied());
            grads.add(model, lstm_tensor(l, d, W_HH), g.w_hh.iter().copied());
            grads.add(model, lstm_tensor(l, d, B_LSTM), g.b.iter().copied());
        }
        if l > 0 {
            d_y = gf.x + reverse_rows(&gb.x, batch);
        }
    }
    if !loss.is_finite() || grads.data.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("non-finite loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// Sigmoid outputs for every real step, dropout off, in `(sequence, step)` order.
pub(crate) fn predict_batch(model: &LstmModel, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    let fc = forward(model, batch, None)?;
    Ok(batch
        .lens
        .iter()
        .enumerate()
        .map(|(b, &len)| (0..len).map(|t| sigmoid(fc.logits[batch.row(t, b)])).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::LstmConfig;
    use super::*;
    use crate::rng;
    use ndarray::Array2;
    use rand::RngExt;

    fn tiny(layers: usize) -> LstmConfig {
        LstmConfig {
            input_dim: 2,
            hidden: 4,
            layers,
            heads: 2,
            dropout: 0.3,
        }
    }

    fn random_seq(r: &mut SplitMix64, len: usize) -> (Array2<f64>, Vec<bool>) {
        let x = Array2::from_shape_simple_fn((len, 2), || r.random::<f64>());
        let y = (0..len).map(|_| r.random::<f64>() < 0.4).collect();
        (x, y)
    }

    /// Per-tensor `|g - fd| / max(|g|, |fd|)` in the Euclidean norm.
    fn max_relative_error(model: &LstmModel, batch: &Batch, drop_seed: u64) -> (String, f64) {
        let (_, g) =
            compute_gradients(model, batch, 3.0, 0.75, Some(&mut rng::seeded(drop_seed))).unwrap();
        let step = 1e-4;
        let mut worst = (String::new(), 0.0);
        for spec in model.layout() {
            let mut diff = 0.0;
            let mut norm_g = 0.0;
            let mut norm_fd = 0.0;
            for i in spec.range() {
                let mut plus = model.clone();
                plus.params_mut()[i] += step;
                let mut minus = model.clone();
                minus.params_mut()[i] -= step;
                let lp = batch_loss(&plus, batch, 3.0, 0.75, Some(&mut rng::seeded(drop_seed))).unwrap();
                let lm = batch_loss(&minus, batch, 3.0, 0.75, Some(&mut rng::seeded(drop_seed))).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                diff += (fd - g.data[i]).powi(2);
                norm_g += g.data[i].powi(2);
                norm_fd += fd * fd;
            }
            let denom = norm_g.sqrt().max(norm_fd.sqrt()).max(1e-12);
            let rel = diff.sqrt() / denom;
            if rel > worst.1 {
                worst = (spec.name.clone(), rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_with_padding_and_dropout() {
        let mut r = rng::seeded(11);
        let model = LstmModel::initialized(tiny(2), 11).unwrap();
        let seqs: Vec<_> = [5, 3, 5].iter().map(|&n| random_seq(&mut r, n)).collect();
        let refs: Vec<_> = seqs.iter().map(|(x, y)| (x.view(), Some(y.as_slice()))).collect();
        let batch = Batch::from_sequences(&refs).unwrap();
        let (name, rel) = max_relative_error(&model, &batch, 99);
        assert!(rel <= 1e-4, "{name}: {rel}");
    }

    #[test]
    fn duplicated_batch_has_the_same_gradient() {
        let mut r = rng::seeded(2);
        let model = LstmModel::initialized(tiny(2), 2).unwrap();
        let (x, y) = random_seq(&mut r, 6);
        let one = Batch::from_sequences(&[(x.view(), Some(&y))]).unwrap();
        let two = Batch::from_sequences(&[(x.view(), Some(&y)), (x.view(), Some(&y))]).unwrap();
        let (l1, g1) = compute_gradients(&model, &one, 3.0, 0.75, None).unwrap();
        let (l2, g2) = compute_gradients(&model, &two, 3.0, 0.75, None).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((a - b).abs() < 1e-13 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn padding_does_not_change_short_sequences() {
        let mut r = rng::seeded(4);
        let model = LstmModel::initialized(tiny(2), 4).unwrap();
        let (short, _) = random_seq(&mut r, 3);
        let (long, _) = random_seq(&mut r, 7);
        let alone = predict_batch(&model, &Batch::single(short.view()).unwrap()).unwrap();
        let padded =
            predict_batch(&model, &Batch::from_sequences(&[(long.view(), None), (short.view(), None)]).unwrap())
                .unwrap();
        for (a, b) in alone[0].iter().zip(&padded[1]) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_step_directions_agree_in_shape() {
        let model = LstmModel::initialized(LstmConfig::default(), 1).unwrap();
        let x = Array2::from_elem((1, 2), 0.5);
        let out = model.bilstm_forward(x.view()).unwrap();
        assert_eq!(out.dim(), (1, 256));
    }

    #[test]
    fn time_reversal_swaps_directions() {
        let mut r = rng::seeded(8);
        let model = LstmModel::initialized(tiny(2), 8).unwrap();
        let h = 4;
        // exchange fwd/bwd tensors; deeper layers also read their input halves swapped
        let mut swapped = model.clone();
        for l in 0..2 {
            for which in ["w_ih", "w_hh", "b"] {
                let f = format!("lstm.l{l}.fwd.{which}");
                let b = format!("lstm.l{l}.bwd.{which}");
                let (mut fv, mut bv) = (model.tensor(&f).unwrap().to_vec(), model.tensor(&b).unwrap().to_vec());
                if l > 0 && which == "w_ih" {
                    for w in [&mut fv, &mut bv] {
                        for row in w.chunks_mut(2 * h) {
                            let (a, c) = row.split_at_mut(h);
                            a.swap_with_slice(c);
                        }
                    }
                }
                swapped.tensor_mut(&f).unwrap().copy_from_slice(&bv);
                swapped.tensor_mut(&b).unwrap().copy_from_slice(&fv);
            }
        }
        let (x, _) = random_seq(&mut r, 3);
        let out = model.bilstm_forward(x.view()).unwrap();
        let mut rev = x.clone();
        rev.invert_axis(Axis(0));
        let out_rev = swapped.bilstm_forward(rev.view()).unwrap();
        for t in 0..3 {
            for j in 0..h {
                assert!((out[[t, j]] - out_rev[[2 - t, h + j]]).abs() < 1e-13);
                assert!((out[[t, h + j]] - out_rev[[2 - t, j]]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let model = LstmModel::zeros(LstmConfig::default()).unwrap();
        let x = Array2::from_elem((4, 2), 0.7);
        assert!(model.bilstm_forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_repeatable_and_dropout_free() {
        let mut r = rng::seeded(5);
        let model = LstmModel::initialized(tiny(2), 5).unwrap();
        let (x, _) = random_seq(&mut r, 6);
        let batch = Batch::single(x.view()).unwrap();
        assert_eq!(predict_batch(&model, &batch).unwrap(), predict_batch(&model, &batch).unwrap());
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let mut r = rng::seeded(6);
        let cfg = LstmConfig {
            dropout: 0.0,
            ..tiny(1)
        };
        let model = LstmModel::initialized(cfg, 6).unwrap();
        let (x, y) = random_seq(&mut r, 4);
        let batch = Batch::from_sequences(&[(x.view(), Some(&y))]).unwrap();
        let with = batch_loss(&model, &batch, 3.0, 0.75, Some(&mut rng::seeded(1))).unwrap();
        let without = batch_loss(&model, &batch, 3.0, 0.75, None).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let mut r = rng::seeded(7);
        let mut model = LstmModel::initialized(tiny(2), 7).unwrap();
        model.zero_head();
        let (x, _) = random_seq(&mut r, 9);
        let p = predict_batch(&model, &Batch::single(x.view()).unwrap()).unwrap();
        assert!(p[0].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn non_finite_input_names_the_layer() {
        let model = LstmModel::initialized(tiny(1), 1).unwrap();
        let x = Array2::from_elem((2, 2), f64::NAN);
        match model.bilstm_forward(x.view()) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("lstm layer 0"), "{msg}"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
