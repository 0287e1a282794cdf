//! Engineered per-frame features for the logistic-regression ensemble.
//!
//! Column layout (29 columns under the default windows):
//!
//! | columns | content |
//! |---|---|
//! | `p_vap`, `p_llm` | raw probabilities |
//! | `{vap,llm}_{mean,std,max,min}_{5,10,20}` | trailing rolling statistics |
//! | `prod`, `max`, `min` | interaction terms |
//!
//! Rolling windows are causal: frame `f` sees frames `f - w + 1 ..= f`,
//! shrinking to the available prefix near the start of a stream.

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::timeline::FrameStream;

pub const DEFAULT_WINDOWS: [usize; 3] = [5, 10, 20];

/// Trailing-window statistics for one window size.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingStats {
    pub window: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max: Vec<f64>,
    pub min: Vec<f64>,
}

fn rolling_window(values: &[f64], window: usize) -> RollingStats {
    let n = values.len();
    let mut out = RollingStats {
        window,
        mean: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
        max: Vec::with_capacity(n),
        min: Vec::with_capacity(n),
    };
    for f in 0..n {
        let w = &values[(f + 1).saturating_sub(window)..=f];
        let count = w.len() as f64;
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = (w.iter().sum::<f64>() / count).clamp(min, max);
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        out.mean.push(mean);
        out.std.push(var.sqrt());
        out.max.push(max);
        out.min.push(min);
    }
    out
}

/// Population statistics over trailing windows, one entry per window size.
pub fn rolling_stats(stream: &FrameStream, windows: &[usize]) -> Result<Vec<RollingStats>> {
    if stream.is_empty() {
        return Err(Error::invalid("rolling statistics need a non-empty stream"));
    }
    if windows.contains(&0) {
        return Err(Error::invalid("rolling window sizes must be positive"));
    }
    Ok(windows
        .iter()
        .map(|&w| rolling_window(stream.values(), w))
        .collect())
}

/// `(p_vap * p_llm, max, min)`.
pub fn interaction(p_vap: f64, p_llm: f64) -> (f64, f64, f64) {
    (p_vap * p_llm, p_vap.max(p_llm), p_vap.min(p_llm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.ncols() != column_names.len() {
            return Err(Error::LengthMismatch {
                what: "feature columns vs names",
                left: values.ncols(),
                right: column_names.len(),
            });
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Stacks matrices with identical columns row-wise.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        if let Some(p) = parts.iter().find(|p| p.column_names != first.column_names) {
            return Err(Error::LengthMismatch {
                what: "feature columns",
                left: first.n_features(),
                right: p.n_features(),
            });
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            values,
            column_names: first.column_names.clone(),
        })
    }

    /// CSV dump with the column names as header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::invalid(e.to_string());
        w.write_record(&self.column_names).map_err(err)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("writing feature CSV: {e}")))
    }
}

const STAT_NAMES: [&str; 4] = ["mean", "std", "max", "min"];

pub fn feature_names(windows: &[usize]) -> Vec<String> {
    let mut names = vec!["p_vap".to_string(), "p_llm".to_string()];
    for stream in ["vap", "llm"] {
        for w in windows {
            for stat in STAT_NAMES {
                names.push(format!("{stream}_{stat}_{w}"));
            }
        }
    }
    names.extend(["prod", "max", "min"].map(String::from));
    names
}

/// Full feature assembly under the default windows.
pub fn build_feature_matrix(vap: &FrameStream, llm: &FrameStream) -> Result<FeatureMatrix> {
    build_feature_matrix_with(vap, llm, &DEFAULT_WINDOWS)
}

pub fn build_feature_matrix_with(
    vap: &FrameStream,
    llm: &FrameStream,
    windows: &[usize],
) -> Result<FeatureMatrix> {
    if vap.len() != llm.len() {
        return Err(Error::LengthMismatch {
            what: "VAP vs LLM stream",
            left: vap.len(),
            right: llm.len(),
        });
    }
    let names = feature_names(windows);
    let n = vap.len();
    let mut values = Array2::zeros((n, names.len()));
    if n == 0 {
        return FeatureMatrix::new(values, names);
    }

    let stats = [rolling_stats(vap, windows)?, rolling_stats(llm, windows)?];
    for f in 0..n {
        let (a, b) = (vap.values()[f], llm.values()[f]);
        let mut row = values.row_mut(f);
        let mut c = 0;
        let mut put = |v: f64| {
            row[c] = v;
            c += 1;
        };
        put(a);
        put(b);
        for per_stream in &stats {
            for s in per_stream {
                put(s.mean[f]);
                put(s.std[f]);
                put(s.max[f]);
                put(s.min[f]);
            }
        }
        let (prod, max, min) = interaction(a, b);
        put(prod);
        put(max);
        put(min);
    }
    FeatureMatrix::new(values, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    fn stream(v: Vec<f64>) -> FrameStream {
        FrameStream::new(50, v, "t").unwrap()
    }

    #[test]
    fn constant_stream_statistics() {
        let s = stream(vec![0.7; 40]);
        for st in rolling_stats(&s, &DEFAULT_WINDOWS).unwrap() {
            for f in 0..40 {
                assert!(close(st.mean[f], 0.7));
                assert!(st.std[f].abs() < 1e-12);
                assert_eq!((st.max[f], st.min[f]), (0.7, 0.7));
            }
        }
    }

    #[test]
    fn two_element_prefix() {
        let st = &rolling_stats(&stream(vec![0.0, 1.0]), &[5]).unwrap()[0];
        assert_eq!(st.mean[1], 0.5);
        assert_eq!(st.std[1], 0.5);
        assert_eq!((st.max[1], st.min[1]), (1.0, 0.0));
        assert_eq!(st.std[0], 0.0);
    }

    #[test]
    fn ramp_window_five() {
        let ramp: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let st = &rolling_stats(&stream(ramp), &[5]).unwrap()[0];
        assert!(close(st.mean[9], 0.7));
        assert_eq!(st.max[9], 0.9);
        assert_eq!(st.min[9], 0.5);
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(rolling_stats(&stream(vec![]), &[5]).is_err());
    }

    #[test]
    fn interaction_values() {
        assert_eq!(interaction(0.5, 0.5), (0.25, 0.5, 0.5));
        assert_eq!(interaction(1.0, 0.0), (0.0, 1.0, 0.0));
        let (p, mx, mn) = interaction(0.8, 0.6);
        assert!(close(p, 0.48));
        assert_eq!((mx, mn), (0.8, 0.6));
    }

    #[test]
    fn matrix_shape_and_names() {
        let a = stream((0..100).map(|i| (i % 7) as f64 / 7.0).collect());
        let b = stream((0..100).map(|i| (i % 3) as f64 / 3.0).collect());
        let m = build_feature_matrix(&a, &b).unwrap();
        assert_eq!((m.n_frames(), m.n_features()), (100, 29));
        assert_eq!(m.column_names()[0], "p_vap");
        assert_eq!(m.column_names()[2], "vap_mean_5");
        assert_eq!(m.column_names()[14], "llm_mean_5");
        assert_eq!(m.column_names()[28], "min");

        let empty = build_feature_matrix(&stream(vec![]), &stream(vec![])).unwrap();
        assert_eq!((empty.n_frames(), empty.n_features()), (0, 29));
    }

    #[test]
    fn constant_streams_give_identical_rows() {
        let m = build_feature_matrix(&stream(vec![0.7; 30]), &stream(vec![0.3; 30])).unwrap();
        let first = m.values().row(0).to_owned();
        for row in m.values().rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(close(first[26], 0.21));
        assert_eq!((first[27], first[28]), (0.7, 0.3));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(build_feature_matrix(&stream(vec![0.1; 3]), &stream(vec![0.1; 4])).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = build_feature_matrix(&stream(vec![0.5; 3]), &stream(vec![0.25; 3])).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("p_vap,p_llm,vap_mean_5,vap_std_5"));
        assert!(lines[1].ends_with("0.125,0.5,0.25"));
    }

    fn probs() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 1..80)
    }

    proptest! {
        #[test]
        fn rolling_columns_are_ordered(a in probs()) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let m = build_feature_matrix(&stream(a), &stream(b)).unwrap();
            for row in m.values().rows() {
                for block in 0..6 {
                    let base = 2 + 4 * block;
                    prop_assert!(row[base + 3] <= row[base]);
                    prop_assert!(row[base] <= row[base + 2]);
                    prop_assert!(row[base + 1] >= 0.0);
                }
                prop_assert!(row[26] <= row[28] && row[28] <= row[27]);
            }
        }

        #[test]
        fn swapping_streams_swaps_blocks(a in probs()) {
            let b: Vec<f64> = a.iter().map(|v| (v * 3.7).fract()).collect();
            let ab = build_feature_matrix(&stream(a.clone()), &stream(b.clone())).unwrap();
            let ba = build_feature_matrix(&stream(b), &stream(a)).unwrap();
            for (r1, r2) in ab.values().rows().into_iter().zip(ba.values().rows()) {
                prop_assert_eq!(r1[0], r2[1]);
                prop_assert_eq!(r1[1], r2[0]);
                for k in 0..12 {
                    prop_assert_eq!(r1[2 + k], r2[14 + k]);
                    prop_assert_eq!(r1[14 + k], r2[2 + k]);
                }
                for k in 26..29 {
                    prop_assert_eq!(r1[k], r2[k]);
                }
            }
        }
    }
}
