//! LSTM cell and one direction of a layer, batched over time-major rows.
//!
//! Row `t * batch + b` holds step `t` of sequence `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One step: `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c' = f c + i g`,
/// `h' = o tanh(c')`.
pub fn lstm_cell_forward(
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    c: ArrayView1<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = h.len();
    if c.len() != n
        || w_ih.dim() != (4 * n, x.len())
        || w_hh.dim() != (4 * n, n)
        || b.len() != 4 * n
    {
        return Err(Error::invalid(format!(
            "cell shapes disagree: x {}, h {}, c {}, w_ih {:?}, w_hh {:?}, b {}",
            x.len(),
            n,
            c.len(),
            w_ih.dim(),
            w_hh.dim(),
            b.len()
        )));
    }
    let z = w_ih.dot(&x) + w_hh.dot(&h) + b;
    let mut h_new = Array1::zeros(n);
    let mut c_new = Array1::zeros(n);
    for j in 0..n {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[n + j]);
        let g = z[2 * n + j].tanh();
        let o = sigmoid(z[3 * n + j]);
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct DirCache {
    pub x: Array2<f64>,
    /// Post-activation gates `[i | f | g | o]`.
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

/// Runs one direction over `x` (`[steps * batch, in]`) from zero state.
pub(crate) fn dir_forward(
    x: Array2<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    b: ArrayView1<f64>,
    steps: usize,
    batch: usize,
) -> DirCache {
    let n = w_hh.ncols();
    let rows = steps * batch;
    let mut gates = Array2::<f64>::zeros((rows, 4 * n));
    gates += &b;
    general_mat_mul(1.0, &x, &w_ih.t(), 1.0, &mut gates);
    let mut c = Array2::<f64>::zeros((rows, n));
    let mut tanh_c = Array2::<f64>::zeros((rows, n));
    let mut h = Array2::<f64>::zeros((rows, n));

    for t in 0..steps {
        let (lo, hi) = (t * batch, (t + 1) * batch);
        if t > 0 {
            let h_prev = h.slice(s![lo - batch..lo, ..]);
            let mut z = gates.slice_mut(s![lo..hi, ..]);
            general_mat_mul(1.0, &h_prev, &w_hh.t(), 1.0, &mut z);
        }
        let g_all = gates.as_slice_mut().expect("standard layout");
        let c_all = c.as_slice_mut().expect("standard layout");
        let tc_all = tanh_c.as_slice_mut().expect("standard layout");
        let h_all = h.as_slice_mut().expect("standard layout");
        for r in lo..hi {
            let z = &mut g_all[r * 4 * n..(r + 1) * 4 * n];
            for j in 0..n {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[n + j]);
                let g = z[2 * n + j].tanh();
                let o = sigmoid(z[3 * n + j]);
                z[j] = i;
                z[n + j] = f;
                z[2 * n + j] = g;
                z[3 * n + j] = o;
                let c_prev = if t > 0 { c_all[(r - batch) * n + j] } else { 0.0 };
                let cv = f * c_prev + i * g;
                let tc = cv.tanh();
                c_all[r * n + j] = cv;
                tc_all[r * n + j] = tc;
                h_all[r * n + j] = o * tc;
            }
        }
    }
    DirCache {
        x,
        gates,
        c,
        tanh_c,
        h,
    }
}

pub(crate) struct DirGrads {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b: Array1<f64>,
    pub x: Array2<f64>,
}

/// Backpropagation through time for one direction given `dL/dh` per row.
pub(crate) fn dir_backward(
    cache: &DirCache,
    d_h: &Array2<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    steps: usize,
    batch: usize,
) -> DirGrads {
    let n = w_hh.ncols();
    let rows = steps * batch;
    let mut dz = Array2::<f64>::zeros((rows, 4 * n));
    let mut dh_next = Array2::<f64>::zeros((batch, n));
    let mut dc_next = Array2::<f64>::zeros((batch, n));

    let gates = cache.gates.as_slice().expect("standard layout");
    let c_all = cache.c.as_slice().expect("standard layout");
    let tc_all = cache.tanh_c.as_slice().expect("standard layout");
    let d_h = d_h.as_standard_layout();
    let dh_in = d_h.as_slice().expect("standard layout");

    for t in (0..steps).rev() {
        {
            let dz_all = dz.as_slice_mut().expect("standard layout");
            let dhn = dh_next.as_slice().expect("standard layout");
            let dcn = dc_next.as_slice_mut().expect("standard layout");
            for b in 0..batch {
                let r = t * batch + b;
                let gr = &gates[r * 4 * n..(r + 1) * 4 * n];
                let dzr = &mut dz_all[r * 4 * n..(r + 1) * 4 * n];
                for j in 0..n {
                    let (i, f, g, o) = (gr[j], gr[n + j], gr[2 * n + j], gr[3 * n + j]);
                    let tc = tc_all[r * n + j];
                    let c_prev = if t > 0 { c_all[(r - batch) * n + j] } else { 0.0 };
                    let dh = dh_in[r * n + j] + dhn[b * n + j];
                    let dc = dcn[b * n + j] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[n + j] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * n + j] = dc * i * (1.0 - g * g);
                    dzr[3 * n + j] = dh * tc * o * (1.0 - o);
                    dcn[b * n + j] = dc * f;
                }
            }
        }
        let dz_t = dz.slice(s![t * batch..(t + 1) * batch, ..]);
        general_mat_mul(1.0, &dz_t, &w_hh, 0.0, &mut dh_next);
    }

    let w_ih_grad = dz.t().dot(&cache.x);
    let mut w_hh_grad = Array2::<f64>::zeros((4 * n, n));
    if steps > 1 {
        let dz_later = dz.slice(s![batch..rows, ..]);
        let h_earlier = cache.h.slice(s![0..rows - batch, ..]);
        general_mat_mul(1.0, &dz_later.t(), &h_earlier, 0.0, &mut w_hh_grad);
    }
    let b_grad = dz.sum_axis(Axis(0));
    let x_grad = dz.dot(&w_ih);
    DirGrads {
        w_ih: w_ih_grad,
        w_hh: w_hh_grad,
        b: b_grad,
        x: x_grad,
    }
}
