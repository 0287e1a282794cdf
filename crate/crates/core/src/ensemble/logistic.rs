//! Logistic-regression fusion over the engineered feature matrix.
//!
//! Columns are standardized with statistics captured at fit time; constant
//! columns are flagged (stored std 0) and contribute nothing after centering.
//! Training is deterministic full-batch gradient descent on the mean log loss
//! plus `l2/2 * |w|^2` (bias unpenalized), halving the step whenever a step
//! would increase the loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::timeline::{FrameStream, DEFAULT_FRAME_RATE};

const CONSTANT_STD: f64 = 1e-12;
const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// 0.0 marks a constant column.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            means.push(mean);
            stds.push(if std > CONSTANT_STD { std } else { 0.0 });
        }
        Self { means, stds }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub column_names: Vec<String>,
    /// Regularized training loss after the last epoch.
    pub final_loss: f64,
    /// Loss before training followed by the loss after every epoch.
    pub loss_history: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Regularized log loss over standardized features.
pub struct LogisticObjective<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: &'a [f64], l2: f64) -> Self {
        Self { x, y, l2 }
    }

    /// Loss, weight gradient and bias gradient at `(w, b)`.
    pub fn evaluate(&self, w: &Array1<f64>, b: f64) -> (f64, Array1<f64>, f64) {
        let n = self.y.len() as f64;
        let z = self.x.dot(w) + b;
        let mut loss = 0.0;
        let mut residual = Array1::zeros(self.y.len());
        for (i, (&zi, &yi)) in z.iter().zip(self.y).enumerate() {
            // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
            loss += softplus(zi) - yi * zi;
            residual[i] = sigmoid(zi) - yi;
        }
        loss = loss / n + 0.5 * self.l2 * w.dot(w);
        let grad_w = self.x.t().dot(&residual) / n + self.l2 * w;
        let grad_b = residual.sum() / n;
        (loss, grad_w, grad_b)
    }
}

fn check_labels(y: &[f64]) -> Result<()> {
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives + y.iter().filter(|&&v| v == 0.0).count() != y.len() {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels(
            "training labels contain a single class".into(),
        ));
    }
    Ok(())
}

pub fn fit_logistic(x: &FeatureMatrix, y: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    if y.len() != x.n_frames() {
        return Err(Error::LengthMismatch {
            what: "labels vs feature rows",
            left: y.len(),
            right: x.n_frames(),
        });
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix contains NaN or infinite values"));
    }
    let y: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
    check_labels(&y)?;

    let standardizer = Standardizer::fit(x.values().view());
    let xs = standardizer.transform(x.values().view());
    let objective = LogisticObjective::new(xs.view(), &y, cfg.l2);

    let mut w = Array1::zeros(x.n_features());
    let mut b = 0.0;
    let mut step = cfg.learning_rate;
    let (mut loss, mut gw, mut gb) = objective.evaluate(&w, b);
    let mut history = vec![loss];
    for _ in 0..cfg.epochs {
        while step >= MIN_STEP {
            let cw = &w - &(step * &gw);
            let cb = b - step * gb;
            let (cl, cgw, cgb) = objective.evaluate(&cw, cb);
            if cl <= loss {
                (w, b, loss, gw, gb) = (cw, cb, cl, cgw, cgb);
                break;
            }
            step /= 2.0;
        }
        history.push(loss);
    }

    Ok(LogisticModel {
        weights: w.to_vec(),
        bias: b,
        standardizer,
        column_names: x.column_names().to_vec(),
        final_loss: loss,
        loss_history: history,
    })
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_features() != self.n_features() {
            return Err(Error::LengthMismatch {
                what: "feature columns vs model",
                left: x.n_features(),
                right: self.n_features(),
            });
        }
        let xs = self.standardizer.transform(x.values().view());
        let w = Array1::from(self.weights.clone());
        Ok(xs.dot(&w).iter().map(|z| sigmoid(z + self.bias)).collect())
    }

    /// Serializes to the `lr-model v1` key=value text format.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::from("lr-model v1\n");
        let _ = writeln!(s, "n_features={}", self.n_features());
        let _ = writeln!(s, "columns={}", self.column_names.join(","));
        let _ = writeln!(s, "bias={:e}", self.bias);
        let _ = writeln!(s, "weights={}", join(&self.weights));
        let _ = writeln!(s, "means={}", join(&self.standardizer.means));
        let _ = writeln!(s, "stds={}", join(&self.standardizer.stds));
        let _ = writeln!(s, "final_loss={:e}", self.final_loss);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("lr-model v1") {
            return Err(Error::ModelFormat("missing `lr-model v1` header".into()));
        }
        let rest: String = lines.collect::<Vec<_>>().join("\n");
        let kv = crate::ingest::io::parse_key_values(&rest, Path::new("<lr-model>"))?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::ModelFormat(format!("missing key `{k}`")))
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::ModelFormat(format!("bad number `{t}` in `{k}`")))
                })
                .collect()
        };
        let scalar = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::ModelFormat(format!("bad number in `{k}`")))
        };
        let n: usize = get("n_features")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad `n_features`".into()))?;
        let columns: Vec<String> = get("columns")?.split(',').map(String::from).collect();
        let model = LogisticModel {
            weights: floats("weights")?,
            bias: scalar("bias")?,
            standardizer: Standardizer {
                means: floats("means")?,
                stds: floats("stds")?,
            },
            column_names: columns,
            final_loss: scalar("final_loss")?,
            loss_history: Vec::new(),
        };
        let lens = [
            model.weights.len(),
            model.standardizer.means.len(),
            model.standardizer.stds.len(),
            model.column_names.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::ModelFormat(format!(
                "vector lengths {lens:?} disagree with n_features={n}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn predict_logistic(model: &LogisticModel, x: &FeatureMatrix) -> Result<FrameStream> {
    FrameStream::new(DEFAULT_FRAME_RATE, model.predict_proba(x)?, "lr")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let names = (0..d).map(|j| format!("x{j}")).collect();
        FeatureMatrix::new(Array2::from_shape_vec((n, d), flat).unwrap(), names).unwrap()
    }

    fn one_d(values: &[f64]) -> FeatureMatrix {
        matrix(values.iter().map(|&v| vec![v]).collect())
    }

    #[test]
    fn separable_one_dimensional() {
        let xs: Vec<f64> = (-20..=20).filter(|&i| i != 0).map(|i| i as f64 / 4.0).collect();
        let labels: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        let x = one_d(&xs);
        let model = fit_logistic(&x, &labels, &LogisticConfig::default()).unwrap();
        let p = model.predict_proba(&x).unwrap();
        let correct = p.iter().zip(&labels).filter(|(p, &l)| (**p >= 0.5) == l).count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn zero_epochs_predicts_one_half() {
        let x = one_d(&[-1.0, 0.0, 1.0, 2.0]);
        let cfg = LogisticConfig {
            epochs: 0,
            ..Default::default()
        };
        let model = fit_logistic(&x, &[false, false, true, true], &cfg).unwrap();
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(model.bias, 0.0);
        assert!(model.predict_proba(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn single_class_rejected() {
        let x = one_d(&[1.0, 2.0, 3.0]);
        let err = fit_logistic(&x, &[true; 3], &LogisticConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn nan_rejected() {
        let x = one_d(&[1.0, f64::NAN, 3.0]);
        assert!(fit_logistic(&x, &[true, false, true], &LogisticConfig::default()).is_err());
    }

    #[test]
    fn hand_sigmoid() {
        // standardized x = 1 from raw 3 with mean 1, std 2
        let model = LogisticModel {
            weights: vec![2.0],
            bias: 0.0,
            standardizer: Standardizer {
                means: vec![1.0],
                stds: vec![2.0],
            },
            column_names: vec!["x".into()],
            final_loss: 0.0,
            loss_history: vec![],
        };
        let p = model.predict_proba(&one_d(&[3.0])).unwrap()[0];
        assert!((p - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert!(model.predict_proba(&matrix(vec![vec![1.0, 2.0]])).is_err());
    }

    #[test]
    fn constant_column_contributes_nothing() {
        let x = matrix(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0], vec![4.0, 5.0]]);
        let model = fit_logistic(&x, &[false, false, true, true], &LogisticConfig::default()).unwrap();
        assert_eq!(model.standardizer.stds[1], 0.0);
        assert_eq!(model.weights[1], 0.0);
    }

    #[test]
    fn loss_is_non_increasing() {
        let mut rng = crate::rng::seeded(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<bool> = rows
            .iter()
            .map(|r| r[0] + 0.5 * r[1] - r[2] + rng.random_range(-0.5..0.5) > 0.0)
            .collect();
        let model = fit_logistic(&matrix(rows), &labels, &LogisticConfig::default()).unwrap();
        assert_eq!(model.loss_history.len(), 501);
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn huge_step_is_halved_not_diverging() {
        let x = one_d(&[-2.0, -1.0, 1.0, 2.0]);
        let cfg = LogisticConfig {
            learning_rate: 1e6,
            epochs: 50,
            l2: 1e-2,
        };
        let model = fit_logistic(&x, &[false, true, false, true], &cfg).unwrap();
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(model.final_loss.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(11);
        let x = Array2::from_shape_fn((40, 4), |_| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let obj = LogisticObjective::new(x.view(), &y, 0.05);
        for _ in 0..5 {
            let w = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let b = rng.random_range(-1.0..1.0);
            let (_, gw, gb) = obj.evaluate(&w, b);
            let h = 1e-5;
            for j in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (obj.evaluate(&wp, b).0 - obj.evaluate(&wm, b).0) / (2.0 * h);
                let rel = (fd - gw[j]).abs() / fd.abs().max(gw[j].abs()).max(1e-8);
                assert!(rel < 1e-6, "w[{j}]: analytic {} vs fd {fd}", gw[j]);
            }
            let fd = (obj.evaluate(&w, b + h).0 - obj.evaluate(&w, b - h).0) / (2.0 * h);
            assert!((fd - gb).abs() / fd.abs().max(gb.abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let x = matrix(vec![vec![0.1, 3.0], vec![0.7, 1.0], vec![0.3, 2.5], vec![0.9, 0.2]]);
        let model = fit_logistic(&x, &[false, true, false, true], &LogisticConfig::default()).unwrap();
        let back = LogisticModel::from_text(&model.to_text()).unwrap();
        assert_eq!(back.weights, model.weights);
        assert_eq!(back.bias, model.bias);
        assert_eq!(back.standardizer, model.standardizer);
        assert_eq!(back.predict_proba(&x).unwrap(), model.predict_proba(&x).unwrap());
        assert!(LogisticModel::from_text("lr-model v2\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn invariant_under_affine_rescaling(scale in 0.01f64..100.0, shift in -50.0f64..50.0, negate: bool) {
            let mut rng = crate::rng::seeded(5);
            let rows: Vec<Vec<f64>> = (0..60)
                .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let labels: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.6).collect();
            let a = if negate { -scale } else { scale };
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| vec![a * r[0] + shift, r[1]]).collect();
            let cfg = LogisticConfig { epochs: 200, ..Default::default() };
            let m1 = fit_logistic(&matrix(rows.clone()), &labels, &cfg).unwrap();
            let m2 = fit_logistic(&matrix(scaled.clone()), &labels, &cfg).unwrap();
            let p1 = m1.predict_proba(&matrix(rows)).unwrap();
            let p2 = m2.predict_proba(&matrix(scaled)).unwrap();
            for (a, b) in p1.iter().zip(&p2) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        #[test]
        fn monotone_in_positive_weight_feature(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let model = LogisticModel {
                weights: vec![1.3],
                bias: -0.2,
                standardizer: Standardizer { means: vec![0.0], stds: vec![1.0] },
                column_names: vec!["x".into()],
                final_loss: 0.0,
                loss_history: vec![],
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = model.predict_proba(&one_d(&[lo, hi])).unwrap();
            prop_assert!(p[0] <= p[1]);
        }
    }
}
