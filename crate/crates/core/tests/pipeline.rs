//! Public-API round trips across modules.

use std::sync::Arc;

use proptest::prelude::*;
use trpfuse_core::ensemble::logistic::LogisticModel;
use trpfuse_core::ensemble::lstm::{self, train_lstm, LstmConfig, TrainConfig};
use trpfuse_core::ensemble::{fit_logistic_on, LogisticPredictor, LstmPredictor};
use trpfuse_core::eval::threshold_sweep;
use trpfuse_core::synthetic::{synth_dataset, SynthConfig};
use trpfuse_core::{EvalConfig, FrameStream, GroundTruth, Predictor};

fn small() -> SynthConfig {
    SynthConfig {
        n_frames: 800,
        ..SynthConfig::default()
    }
}

#[test]
fn saved_models_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_dataset(3, &small(), 6).unwrap();

    let lr = fit_logistic_on(&recs[..2], 75, &Default::default()).unwrap();
    lr.save(dir.path().join("m.lr")).unwrap();
    let back = LogisticModel::load(dir.path().join("m.lr")).unwrap();
    assert_eq!(
        LogisticPredictor(lr).predict(&recs[2]).unwrap(),
        LogisticPredictor(back).predict(&recs[2]).unwrap()
    );

    let cfg = LstmConfig {
        hidden: 6,
        heads: 2,
        ..LstmConfig::default()
    };
    let train = TrainConfig {
        epochs: 1,
        seed: 6,
        ..TrainConfig::default()
    };
    let (model, history) = train_lstm(&recs[..2], &[], cfg, &train).unwrap();
    assert_eq!(history.len(), 1);
    lstm::persist::save(&model, dir.path().join("m.lstm")).unwrap();
    let back = lstm::persist::load(dir.path().join("m.lstm")).unwrap();
    let run = |m| {
        LstmPredictor {
            model: Arc::new(m),
            window: 100,
        }
        .predict(&recs[2])
        .unwrap()
    };
    assert_eq!(run(model), run(back));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // inverting the stream swaps the flip flag and keeps the score
    #[test]
    fn complement_mirrors_the_sweep(
        values in prop::collection::vec(0.0f64..1.0, 200..600),
        raw_events in prop::collection::vec(0usize..10_000, 1..6),
    ) {
        let n = values.len();
        let mut events: Vec<usize> = raw_events.iter().map(|e| e % n).collect();
        events.sort_unstable();
        events.dedup();
        let truth = GroundTruth::new(events, n).unwrap();
        let cfg = EvalConfig { window_frames: 10, ..EvalConfig::default() };
        let s = FrameStream::new(50, values, "s").unwrap();
        let a = threshold_sweep(&s, &truth, &cfg).unwrap();
        let b = threshold_sweep(&s.complement(), &truth, &cfg).unwrap();
        for e in &a.grid {
            prop_assert!(e.report.balanced_accuracy <= a.report.balanced_accuracy);
        }
        prop_assert!((a.report.balanced_accuracy - b.report.balanced_accuracy).abs() < 1e-12);
    }
}
