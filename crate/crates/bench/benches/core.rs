use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use trpfuse_core::ensemble::lstm::{compute_gradients, predict_lstm, Batch, LstmConfig, LstmModel};
use trpfuse_core::ensemble::LogisticStrategy;
use trpfuse_core::eval::windowed_confusion;
use trpfuse_core::synthetic::{synth_dataset, SynthConfig};
use trpfuse_core::{FusionStrategy, GroundTruth};

fn confusion(c: &mut Criterion) {
    let mut g = c.benchmark_group("windowed_confusion");
    for n in [3_000usize, 30_000, 300_000] {
        let events: Vec<usize> = (0..n).step_by(400).collect();
        let truth = GroundTruth::new(events, n).unwrap();
        let pred: Vec<bool> = (0..n).map(|f| f % 7 < 3).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| windowed_confusion(black_box(&pred), &truth, 75).unwrap())
        });
    }
    g.finish();
}

// one minute of frames at 50 Hz
fn predict(c: &mut Criterion) {
    let recs = synth_dataset(5, &SynthConfig::default(), 1).unwrap();
    let (train, test) = recs.split_at(4);
    let rec = &test[0];
    let mut lr = LogisticStrategy::default().fit(train).unwrap();
    c.bench_function("predict/lr_60s", |b| b.iter(|| lr.predict(black_box(rec)).unwrap()));

    let model = LstmModel::initialized(LstmConfig::default(), 1).unwrap();
    let mut g = c.benchmark_group("predict");
    g.sample_size(10);
    g.bench_function("lstm_60s", |b| {
        b.iter(|| predict_lstm(&model, black_box(&rec.vap), &rec.llm, 100).unwrap())
    });
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_gradients");
    g.sample_size(10);
    for hidden in [32usize, 128] {
        let cfg = LstmConfig {
            hidden,
            ..LstmConfig::default()
        };
        let model = LstmModel::initialized(cfg, 2).unwrap();
        let seqs: Vec<(Array2<f64>, Vec<bool>)> = (0..32)
            .map(|s| {
                let x = Array2::from_shape_fn((100, 2), |(t, j)| ((t * 7 + s * 3 + j) % 11) as f64 / 11.0);
                let y = (0..100).map(|t| (t + s) % 9 == 0).collect();
                (x, y)
            })
            .collect();
        let refs: Vec<_> = seqs.iter().map(|(x, y)| (x.view(), Some(y.as_slice()))).collect();
        let batch = Batch::from_sequences(&refs).unwrap();
        g.bench_with_input(BenchmarkId::new("batch32x100", hidden), &hidden, |b, _| {
            b.iter(|| compute_gradients(&model, black_box(&batch), 3.0, 0.75, None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, confusion, predict, gradients);
criterion_main!(benches);
