//! BiLSTM + multi-head self-attention frame classifier over `(P_VAP, P_LLM)`.
//!
//! Stack: 2-layer bidirectional LSTM (hidden 128 per direction, outputs
//! concatenated), 4-head non-causal self-attention at width 256, inverted
//! dropout (training only), affine head, sigmoid. All math in f64.
//!
//! Parameters live in one flat buffer described by a layout table so the
//! optimizer, gradient checks and persistence treat every tensor alike.
//! Weight matrices are `[out, in]` and act as `y = x W^T + b`; LSTM gate
//! blocks are ordered i, f, g, o.

pub mod attention;
pub mod cell;
pub mod loss;
pub mod network;
pub mod optim;
pub mod persist;
pub mod train;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng;

pub use loss::{focal_loss, focal_loss_single, focal_grad_logit};
pub use network::{compute_gradients, Batch, Gradients};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use train::{predict_lstm, train_lstm, write_history_csv, HistoryRow, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmConfig {
    pub input_dim: usize,
    /// Per direction; the model width is twice this.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: 128,
            layers: 2,
            heads: 4,
            dropout: 0.3,
        }
    }
}

impl LstmConfig {
    pub fn model_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::invalid("LSTM dimensions must be positive"));
        }
        if self.model_dim() % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model width {} is not divisible by {} heads",
                self.model_dim(),
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) const W_IH: usize = 0;
pub(crate) const W_HH: usize = 1;
pub(crate) const B_LSTM: usize = 2;

pub(crate) const WQ: usize = 0;
pub(crate) const BQ: usize = 1;
pub(crate) const WK: usize = 2;
pub(crate) const BK: usize = 3;
pub(crate) const WV: usize = 4;
pub(crate) const BV: usize = 5;
pub(crate) const WO: usize = 6;
pub(crate) const BO: usize = 7;

/// Tensor index of `which` for layer `l`, direction `d` (0 forward, 1 backward).
pub(crate) fn lstm_tensor(l: usize, d: usize, which: usize) -> usize {
    (l * 2 + d) * 3 + which
}

pub(crate) fn attn_tensor(cfg: &LstmConfig, which: usize) -> usize {
    cfg.layers * 6 + which
}

pub(crate) fn head_w(cfg: &LstmConfig) -> usize {
    cfg.layers * 6 + 8
}

pub(crate) fn head_b(cfg: &LstmConfig) -> usize {
    cfg.layers * 6 + 9
}

pub fn layout(cfg: &LstmConfig) -> Vec<TensorSpec> {
    let h = cfg.hidden;
    let d = cfg.model_dim();
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec {
            name,
            shape,
            offset,
        });
        offset += len;
    };
    for l in 0..cfg.layers {
        let input = if l == 0 { cfg.input_dim } else { d };
        for dir in ["fwd", "bwd"] {
            push(format!("lstm.l{l}.{dir}.w_ih"), vec![4 * h, input]);
            push(format!("lstm.l{l}.{dir}.w_hh"), vec![4 * h, h]);
            push(format!("lstm.l{l}.{dir}.b"), vec![4 * h]);
        }
    }
    for p in ["q", "k", "v", "o"] {
        push(format!("attn.w{p}"), vec![d, d]);
        push(format!("attn.b{p}"), vec![d]);
    }
    push("head.w".into(), vec![1, d]);
    push("head.b".into(), vec![1]);
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    cfg: LstmConfig,
    layout: Vec<TensorSpec>,
    params: Vec<f64>,
}

impl LstmModel {
    pub fn zeros(cfg: LstmConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = layout(&cfg);
        let n = layout.last().map_or(0, |t| t.offset + t.len());
        Ok(Self {
            cfg,
            layout,
            params: vec![0.0; n],
        })
    }

    /// Uniform `(-k, k)` with `k = 1/sqrt(fan_in)` for every tensor, the
    /// forget-gate bias block shifted by +1. A bias uses the fan-in of the
    /// matrices it is added to (the hidden size for LSTM biases).
    pub fn initialized(cfg: LstmConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(cfg)?;
        let mut r = rng::derived(seed, rng::OFFSET_INIT);
        let h = cfg.hidden;
        let d = cfg.model_dim();
        for (idx, spec) in model.layout.clone().iter().enumerate() {
            let fan_in = match spec.shape.as_slice() {
                [_, cols] => *cols,
                _ if spec.name.starts_with("lstm") => h,
                _ => d,
            };
            let k = 1.0 / (fan_in as f64).sqrt();
            for v in &mut model.params[spec.range()] {
                *v = r.random_range(-k..k);
            }
            if spec.name.starts_with("lstm") && idx % 3 == B_LSTM {
                for v in &mut model.params[spec.offset + h..spec.offset + 2 * h] {
                    *v += 1.0;
                }
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from a flat buffer in layout order.
    pub fn from_params(cfg: LstmConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(cfg)?;
        if params.len() != model.params.len() {
            return Err(Error::LengthMismatch {
                what: "LSTM parameter buffer",
                left: params.len(),
                right: model.params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelFormat(format!(
                "parameter {} ({}) is not finite",
                i,
                model.tensor_of(i)
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &LstmConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn tensor_of(&self, flat: usize) -> &str {
        self.layout
            .iter()
            .find(|t| t.range().contains(&flat))
            .map_or("?", |t| t.name.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|t| t.name == name)?.range();
        Some(&mut self.params[range])
    }

    pub(crate) fn view2(&self, idx: usize) -> ArrayView2<'_, f64> {
        let t = &self.layout[idx];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &self.params[t.range()])
            .expect("layout shape")
    }

    pub(crate) fn view1(&self, idx: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout[idx].range()])
    }

    /// Zeroes the output head so every prediction is exactly 0.5.
    pub fn zero_head(&mut self) {
        let w = self.layout[head_w(&self.cfg)].range();
        let b = self.layout[head_b(&self.cfg)].range();
        self.params[w].fill(0.0);
        self.params[b].fill(0.0);
    }

    /// Bidirectional LSTM stack over one sequence `[T, input_dim]`.
    pub fn bilstm_forward(&self, seq: ArrayView2<f64>) -> Result<Array2<f64>> {
        let batch = Batch::single(seq)?;
        let (out, _) = network::bilstm_forward(self, &batch)?;
        Ok(out)
    }

    /// Self-attention block over one sequence `[T, model_dim]`.
    pub fn attention_forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.cfg.model_dim() {
            return Err(Error::LengthMismatch {
                what: "attention input width",
                left: x.ncols(),
                right: self.cfg.model_dim(),
            });
        }
        let w = attention::AttnWeights::of(self);
        let valid = vec![true; x.nrows()];
        let (out, _) = attention::mha_forward(&x.to_owned(), &w, x.nrows(), 1, &valid, self.cfg.heads);
        Ok(out)
    }
}
