//! Multi-head scaled dot-product self-attention, non-causal, no residual.
//!
//! Padded time steps are excluded as keys; their query rows are computed
//! but carry no loss, so they receive no gradient.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{attn_tensor, LstmModel, BK, BO, BQ, BV, WK, WO, WQ, WV};

pub(crate) struct AttnWeights<'a> {
    pub wq: ArrayView2<'a, f64>,
    pub bq: ArrayView1<'a, f64>,
    pub wk: ArrayView2<'a, f64>,
    pub bk: ArrayView1<'a, f64>,
    pub wv: ArrayView2<'a, f64>,
    pub bv: ArrayView1<'a, f64>,
    pub wo: ArrayView2<'a, f64>,
    pub bo: ArrayView1<'a, f64>,
}

impl<'a> AttnWeights<'a> {
    pub fn of(m: &'a LstmModel) -> Self {
        let c = m.config();
        Self {
            wq: m.view2(attn_tensor(c, WQ)),
            bq: m.view1(attn_tensor(c, BQ)),
            wk: m.view2(attn_tensor(c, WK)),
            bk: m.view1(attn_tensor(c, BK)),
            wv: m.view2(attn_tensor(c, WV)),
            bv: m.view1(attn_tensor(c, BV)),
            wo: m.view2(attn_tensor(c, WO)),
            bo: m.view1(attn_tensor(c, BO)),
        }
    }
}

pub(crate) struct AttnCache {
    pub x: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmax rows per `(sequence, head)`, index `b * heads + h`.
    pub probs: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

pub(crate) struct AttnGrads {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub x: Array2<f64>,
}

fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Row-wise softmax over the keys marked valid; masked columns are exactly 0.
pub(crate) fn masked_softmax(scores: &mut Array2<f64>, key_valid: &[bool]) {
    for mut row in scores.rows_mut() {
        let max = row
            .iter()
            .zip(key_valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, &ok) in row.iter_mut().zip(key_valid) {
            *v = if ok { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row /= sum;
    }
}

/// `x` is `[steps * batch, d]` time-major; `valid[row]` marks real steps.
pub(crate) fn mha_forward(
    x: &Array2<f64>,
    w: &AttnWeights,
    steps: usize,
    batch: usize,
    valid: &[bool],
    heads: usize,
) -> (Array2<f64>, AttnCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(x, w.wq, w.bq);
    let k = affine(x, w.wk, w.bk);
    let v = affine(x, w.wv, w.bv);
    let mut concat = Array2::<f64>::zeros((steps * batch, d));
    let mut probs = Vec::with_capacity(batch * heads);

    for b in 0..batch {
        let key_valid: Vec<bool> = (0..steps).map(|t| valid[t * batch + b]).collect();
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qb = q.slice(s![b..;batch, cols.clone()]);
            let kb = k.slice(s![b..;batch, cols.clone()]);
            let vb = v.slice(s![b..;batch, cols.clone()]);
            let mut a = qb.dot(&kb.t());
            a *= scale;
            masked_softmax(&mut a, &key_valid);
            concat.slice_mut(s![b..;batch, cols]).assign(&a.dot(&vb));
            probs.push(a);
        }
    }
    let out = affine(&concat, w.wo, w.bo);
    (
        out,
        AttnCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

pub(crate) fn mha_backward(
    cache: &AttnCache,
    d_out: &Array2<f64>,
    w: &AttnWeights,
    steps: usize,
    batch: usize,
    heads: usize,
) -> AttnGrads {
    let d = d_out.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let wo = d_out.t().dot(&cache.concat);
    let bo = d_out.sum_axis(Axis(0));
    let d_concat = d_out.dot(&w.wo);

    let rows = steps * batch;
    let mut dq = Array2::<f64>::zeros((rows, d));
    let mut dk = Array2::<f64>::zeros((rows, d));
    let mut dv = Array2::<f64>::zeros((rows, d));
    for b in 0..batch {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &cache.probs[b * heads + h];
            let d_o = d_concat.slice(s![b..;batch, cols.clone()]);
            let qb = cache.q.slice(s![b..;batch, cols.clone()]);
            let kb = cache.k.slice(s![b..;batch, cols.clone()]);
            let vb = cache.v.slice(s![b..;batch, cols.clone()]);

            let d_a = d_o.dot(&vb.t());
            dv.slice_mut(s![b..;batch, cols.clone()]).assign(&a.t().dot(&d_o));
            let mut d_s = &d_a * a;
            let row_dot = d_s.sum_axis(Axis(1));
            for (mut r, (&dot, a_row)) in d_s.rows_mut().into_iter().zip(row_dot.iter().zip(a.rows())) {
                r.scaled_add(-dot, &a_row);
            }
            d_s *= scale;
            dq.slice_mut(s![b..;batch, cols.clone()]).assign(&d_s.dot(&kb));
            dk.slice_mut(s![b..;batch, cols]).assign(&d_s.t().dot(&qb));
        }
    }

    let x = &cache.x;
    let mut dx = dq.dot(&w.wq);
    dx += &dk.dot(&w.wk);
    dx += &dv.dot(&w.wv);
    AttnGrads {
        wq: dq.t().dot(x),
        bq: dq.sum_axis(Axis(0)),
        wk: dk.t().dot(x),
        bk: dk.sum_axis(Axis(0)),
        wv: dv.t().dot(x),
        bv: dv.sum_axis(Axis(0)),
        wo,
        bo,
        x: dx,
    }
}

/// Single-sequence attention returning the output and each head's softmax matrix.
pub fn mha_forward_single(model: &LstmModel, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
    let w = AttnWeights::of(model);
    let valid = vec![true; x.nrows()];
    let (out, cache) = mha_forward(&x.to_owned(), &w, x.nrows(), 1, &valid, model.config().heads);
    (out, cache.probs)
}
