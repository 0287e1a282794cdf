use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use trpfuse_core::ensemble::logistic::{LogisticConfig, LogisticModel};
use trpfuse_core::ensemble::lstm::{self, train_lstm, write_history_csv, HistoryRow, LstmConfig, TrainConfig};
use trpfuse_core::ensemble::prompt::{
    LlmClient, NdjsonClient, PromptConfig, ReplayClient, PROMPT_1, PROMPT_2, PROMPT_3,
};
use trpfuse_core::ensemble::{
    fit_logistic_on, ClientFactory, LogisticPredictor, LogisticStrategy, LstmPredictor, LstmStrategy, Passthrough,
    Pretrained, PromptStrategy, Source,
};
use trpfuse_core::eval::report::REPORT_HEADER;
use trpfuse_core::eval::{
    evaluate_run, threshold_sweep_pooled, write_report, write_sweep, write_trace, CvScheme, ReportRow, RunOptions,
};
use trpfuse_core::ingest::{
    aggregate_icc_labels, build_ccpe_timeline, load_icc_responses, parse_ccpe, store_ground_truth,
    store_prediction_stream, store_turn_spans, IccLabelConfig, TimelineConfig,
};
use trpfuse_core::synthetic::{synth_dataset, SynthConfig};
use trpfuse_core::timeline::{shift_events, DEFAULT_FRAME_RATE};
use trpfuse_core::{EvalConfig, FusionStrategy, Objective, Recording};

use crate::args::*;
use crate::data::{self, Needs};

const ICC_OFFSET_FRAMES: i64 = -90;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => create_dir(parent),
        None => Ok(()),
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn eval_config(o: &EvalOpts) -> EvalConfig {
    EvalConfig {
        window_frames: o.window_frames,
        allow_flip: !o.no_flip,
        objective: match o.objective {
            ObjectiveArg::BalancedAccuracy => Objective::BalancedAccuracy,
            ObjectiveArg::F1 => Objective::F1,
        },
        ..EvalConfig::default()
    }
}

fn logistic_config(o: &LrOpts) -> LogisticConfig {
    LogisticConfig {
        learning_rate: o.lr_step,
        epochs: o.lr_epochs,
        l2: o.l2,
    }
}

fn lstm_configs(o: &LstmOpts, seed: u64, window_frames: usize) -> (LstmConfig, TrainConfig) {
    let model = LstmConfig {
        hidden: o.hidden,
        layers: o.layers,
        heads: o.heads,
        dropout: o.dropout,
        ..LstmConfig::default()
    };
    let train = TrainConfig {
        gamma: o.gamma,
        alpha: o.alpha,
        learning_rate: o.learning_rate,
        weight_decay: o.weight_decay,
        batch_size: o.batch_size,
        seq_len: o.seq_len,
        epochs: o.epochs,
        seed,
        window_frames,
        ..TrainConfig::default()
    };
    (model, train)
}

// ---------------------------------------------------------------- prepare

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    create_dir(&a.out)?;
    match a.kind {
        CorpusKind::Ccpe => prepare_ccpe(a),
        CorpusKind::Icc => prepare_icc(a),
    }
}

fn prepare_ccpe(a: &PrepareArgs) -> Result<()> {
    let doc = fs::read(&a.input).with_context(|| format!("cannot read {}", a.input.display()))?;
    let dialogs = parse_ccpe(&doc).with_context(|| format!("parsing {}", a.input.display()))?;
    if dialogs.is_empty() {
        bail!("{} holds no dialogs", a.input.display());
    }
    let cfg = TimelineConfig {
        gap_s: a.gap_s,
        words_per_s: a.words_per_s,
        frame_rate: a.frame_rate,
    };
    let offset = a.offset_frames.unwrap_or(0);
    let mut events = 0;
    for d in &dialogs {
        let tl = build_ccpe_timeline(d, &cfg)?;
        let truth = shift_events(&tl.truth, offset);
        events += truth.events().len();
        store_ground_truth(&truth, data::truth_path(&a.out, &d.id))?;
        store_turn_spans(&tl.turns, data::spans_path(&a.out, &d.id))?;
    }
    println!("dialogs: {}", dialogs.len());
    println!("events: {events}");
    Ok(())
}

fn prepare_icc(a: &PrepareArgs) -> Result<()> {
    let total = a.total_frames.context("--total-frames is required for icc data")?;
    let name = match &a.name {
        Some(n) => n.clone(),
        None => a
            .input
            .file_stem()
            .and_then(|s| s.to_str())
            .context("cannot derive a recording name from the input path; pass --name")?
            .to_string(),
    };
    let responses = load_icc_responses(&a.input, a.participants)?;
    let cfg = IccLabelConfig {
        agreement: a.agreement,
        smear_frames: a.smear_frames,
    };
    let truth = aggregate_icc_labels(&responses, total, &cfg)?;
    let truth = shift_events(&truth, a.offset_frames.unwrap_or(ICC_OFFSET_FRAMES));
    store_ground_truth(&truth, data::truth_path(&a.out, &name))?;
    println!("recordings: 1");
    println!("participants: {}", responses.n_participants());
    println!("events: {}", truth.events().len());
    Ok(())
}

// ---------------------------------------------------------------- synth

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_frames: a.frames,
        ..SynthConfig::default()
    };
    let recs = synth_dataset(a.count, &cfg, a.seed)?;
    create_dir(&a.out)?;
    for r in &recs {
        store_ground_truth(&r.truth, data::truth_path(&a.out, &r.id))?;
        store_prediction_stream(&r.vap, data::vap_path(&a.out, &r.id))?;
        store_prediction_stream(&r.llm, data::llm_path(&a.out, &r.id))?;
    }
    println!("recordings: {}", recs.len());
    println!("events: {}", recs.iter().map(|r| r.truth.events().len()).sum::<usize>());
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train(a: &TrainArgs) -> Result<()> {
    let needs = Needs { llm: true, spans: false };
    let recs = data::load_recordings(&a.data, DEFAULT_FRAME_RATE, needs)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let history = match a.ensemble {
        TrainableKind::Lr => {
            let model = fit_logistic_on(&recs, a.window_frames, &logistic_config(&a.lr))?;
            ensure_parent(&a.out)?;
            model.save(&a.out)?;
            model
                .loss_history
                .iter()
                .enumerate()
                .map(|(epoch, &train_loss)| HistoryRow {
                    epoch,
                    train_loss,
                    val_loss: None,
                    balanced_acc: None,
                    sensitivity: None,
                    specificity: None,
                    pos_ratio: None,
                })
                .collect::<Vec<_>>()
        }
        TrainableKind::Lstm => {
            let val = match &a.val_data {
                Some(dir) => data::load_recordings(dir, DEFAULT_FRAME_RATE, needs)?,
                None => Vec::new(),
            };
            let (model_cfg, train_cfg) = lstm_configs(&a.lstm, a.seed, a.window_frames);
            let (model, history) = train_lstm(&recs, &val, model_cfg, &train_cfg)?;
            ensure_parent(&a.out)?;
            lstm::persist::save(&model, &a.out)?;
            history
        }
    };
    let mut h = create_file(&history_path)?;
    write_history_csv(&history, &mut h)?;
    h.flush()?;
    let frames: usize = recs.iter().map(|r| r.truth.total_frames()).sum();
    let name = match a.ensemble {
        TrainableKind::Lr => "lr",
        TrainableKind::Lstm => "lstm",
    };
    println!("trained {name} on {} recordings ({frames} frames)", recs.len());
    println!("model: {}", a.out.display());
    println!("history: {}", history_path.display());
    Ok(())
}

// ---------------------------------------------------------------- shared

fn prompt_strategy(o: &PromptOpts, data_dir: &Path) -> Result<PromptStrategy> {
    let (label, system_text) = match o.prompt_template.as_str() {
        "prompt1" => ("prompt1".to_string(), PROMPT_1.to_string()),
        "prompt2" => ("prompt2".to_string(), PROMPT_2.to_string()),
        "prompt3" => ("prompt3".to_string(), PROMPT_3.to_string()),
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).with_context(|| format!("cannot read prompt template {path}"))?;
            let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or(path).to_string();
            (label, text.trim_end_matches('\n').to_string())
        }
    };
    let cfg = PromptConfig {
        system_text,
        ..PromptConfig::default()
    };
    cfg.validate()?;
    if !(o.llm_timeout_s > 0.0) {
        bail!("--llm-timeout-s must be positive");
    }
    let timeout = Some(Duration::from_secs_f64(o.llm_timeout_s));
    let transport = |e: io::Error| trpfuse_core::Error::InvalidInput(format!("cannot reach LLM responder: {e}"));
    let clients: ClientFactory = if let Some(cmd) = &o.llm_command {
        let mut parts = cmd.split_whitespace().map(String::from);
        let program = parts.next().context("--llm-command is empty")?;
        let args: Vec<String> = parts.collect();
        Arc::new(move |_rec: &Recording| {
            let c = NdjsonClient::spawn(&program, &args, timeout).map_err(transport)?;
            Ok(Box::new(c) as Box<dyn LlmClient>)
        })
    } else if let Some(sock) = &o.llm_socket {
        connect(sock.clone(), timeout)?
    } else {
        let dir = data_dir.to_path_buf();
        Arc::new(move |rec: &Recording| {
            let path = data::replies_path(&dir, &rec.id);
            let c = ReplayClient::load(&path)
                .map_err(|e| trpfuse_core::Error::InvalidInput(format!("{}: {e}", path.display())))?;
            Ok(Box::new(c) as Box<dyn LlmClient>)
        })
    };
    Ok(PromptStrategy { cfg, label, clients })
}

#[cfg(unix)]
fn connect(sock: PathBuf, timeout: Option<Duration>) -> Result<ClientFactory> {
    Ok(Arc::new(move |_rec: &Recording| {
        let c = NdjsonClient::connect_unix(&sock, timeout)
            .map_err(|e| trpfuse_core::Error::InvalidInput(format!("{}: {e}", sock.display())))?;
        Ok(Box::new(c) as Box<dyn LlmClient>)
    }))
}

#[cfg(not(unix))]
fn connect(_sock: PathBuf, _timeout: Option<Duration>) -> Result<ClientFactory> {
    bail!("--llm-socket needs unix domain sockets")
}

fn load_pretrained(kind: EnsembleKind, path: &Path, seq_len: usize) -> Result<Box<dyn FusionStrategy>> {
    Ok(match kind {
        EnsembleKind::Lr => {
            let model = LogisticModel::load(path).with_context(|| format!("model {}", path.display()))?;
            Box::new(Pretrained {
                name: "lr".to_string(),
                predictor: LogisticPredictor(model),
            })
        }
        EnsembleKind::Lstm => {
            let model = lstm::persist::load(path).with_context(|| format!("model {}", path.display()))?;
            Box::new(Pretrained {
                name: "lstm".to_string(),
                predictor: LstmPredictor {
                    model: Arc::new(model),
                    window: seq_len,
                },
            })
        }
        _ => bail!("--model only applies to lr and lstm"),
    })
}

fn needs_for(kind: EnsembleKind) -> Needs {
    match kind {
        EnsembleKind::Prompt => Needs { llm: false, spans: true },
        EnsembleKind::PassthroughVap => Needs { llm: false, spans: false },
        _ => Needs { llm: true, spans: false },
    }
}

// ---------------------------------------------------------------- evaluate

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let recs = data::load_recordings(&a.data, DEFAULT_FRAME_RATE, needs_for(a.ensemble))?;
    let cfg = eval_config(&a.eval);
    let strategy: Box<dyn FusionStrategy> = match (a.ensemble, &a.model) {
        (EnsembleKind::Lr | EnsembleKind::Lstm, Some(path)) => load_pretrained(a.ensemble, path, a.lstm.seq_len)?,
        (_, Some(_)) => bail!("--model only applies to lr and lstm"),
        (EnsembleKind::Lr, None) => Box::new(LogisticStrategy {
            cfg: logistic_config(&a.lr),
            window_frames: cfg.window_frames,
        }),
        (EnsembleKind::Lstm, None) => {
            let (model, train) = lstm_configs(&a.lstm, a.seed, cfg.window_frames);
            Box::new(LstmStrategy { model, train })
        }
        (EnsembleKind::Prompt, None) => Box::new(prompt_strategy(&a.prompt, &a.data)?),
        (EnsembleKind::PassthroughVap, None) => Box::new(Passthrough(Source::Vap)),
        (EnsembleKind::PassthroughLlm, None) => Box::new(Passthrough(Source::Llm)),
    };
    let scheme = match a.cv {
        CvKind::Kfold => CvScheme::KFold {
            k: a.folds,
            seed: a.seed,
        },
        CvKind::Loo => CvScheme::LeaveOneOut,
    };
    let opts = RunOptions {
        jobs: a.jobs,
        measure_rtf: a.measure_rtf,
    };
    let run = evaluate_run(strategy.as_ref(), &recs, &scheme, &cfg, opts)?;

    let dataset = match &a.dataset_name {
        Some(n) => n.clone(),
        None => dataset_label(&a.data),
    };
    create_dir(&a.out)?;
    let report_path = a.out.join("report.csv");
    let mut out = create_file(&report_path)?;
    write_report(&ReportRow::from_run(&dataset, &run), &mut out)?;
    out.flush()?;

    if !a.no_traces {
        let traces = a.out.join("traces");
        create_dir(&traces)?;
        for fold in &run.folds {
            let Some(sweep) = &fold.sweep else { continue };
            for (&i, pred) in fold.test.iter().zip(&fold.predictions) {
                let rec = &recs[i];
                let mut t = create_file(&traces.join(format!("{}.trace.csv", rec.id)))?;
                write_trace(&mut t, &rec.truth, cfg.window_frames, pred, sweep.best_threshold, sweep.flipped)?;
                t.flush()?;
            }
        }
    }

    for f in run.folds.iter().filter_map(|f| f.skipped.as_ref().map(|s| (f.fold, s))) {
        println!("fold {} skipped: {}", f.0, f.1);
    }
    match &run.aggregate {
        Some(m) => println!(
            "{} {}: balanced_acc {:.4} f1 {:.4} over {} folds",
            dataset,
            run.model,
            m.balanced_accuracy,
            m.f1,
            run.folds.len()
        ),
        None => println!("{} {}: every fold was skipped", dataset, run.model),
    }
    println!("report: {}", report_path.display());
    info!("evaluation finished");
    Ok(())
}

fn dataset_label(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

// ---------------------------------------------------------------- sweep

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let recs = data::load_recordings(&a.data, DEFAULT_FRAME_RATE, needs_for(a.ensemble))?;
    let cfg = eval_config(&a.eval);
    let strategy: Box<dyn FusionStrategy> = match (a.ensemble, &a.model) {
        (EnsembleKind::Lr | EnsembleKind::Lstm, Some(path)) => load_pretrained(a.ensemble, path, a.seq_len)?,
        (EnsembleKind::Lr | EnsembleKind::Lstm, None) => bail!("sweeping lr or lstm needs --model"),
        (_, Some(_)) => bail!("--model only applies to lr and lstm"),
        (EnsembleKind::Prompt, None) => Box::new(prompt_strategy(&a.prompt, &a.data)?),
        (EnsembleKind::PassthroughVap, None) => Box::new(Passthrough(Source::Vap)),
        (EnsembleKind::PassthroughLlm, None) => Box::new(Passthrough(Source::Llm)),
    };
    let mut predictor = strategy.fit(&[])?;
    let preds = recs.iter().map(|r| predictor.predict(r)).collect::<trpfuse_core::Result<Vec<_>>>()?;
    let pairs: Vec<_> = preds.iter().zip(&recs).map(|(p, r)| (p, &r.truth)).collect();
    let result = threshold_sweep_pooled(&pairs, &cfg)?;
    let mut out = create_file(&a.out)?;
    write_sweep(&result, &mut out)?;
    out.flush()?;
    println!(
        "best: threshold {} flipped {} balanced_acc {:.4}",
        result.best_threshold, result.flipped, result.report.balanced_accuracy
    );
    println!("sweep: {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- report

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for path in &a.inputs {
        let body = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut lines = body.lines();
        if lines.next() != Some(REPORT_HEADER) {
            bail!("{} is not a report CSV (header must be `{REPORT_HEADER}`)", path.display());
        }
        for line in lines.filter(|l| !l.is_empty()) {
            let dataset = line.split(',').next().unwrap_or_default();
            if a.aggregate_only && !dataset.ends_with(":aggregate") {
                continue;
            }
            text.push_str(line);
            text.push('\n');
        }
    }
    match &a.out {
        Some(path) => {
            let mut out = create_file(path)?;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| anyhow!("cannot write report: {e}"))?,
    }
    Ok(())
}
