//! Fusion strategies: each turns a recording's two base-model streams (and,
//! for prompting, its transcript) into one turn-shift probability stream.

pub mod logistic;
pub mod lstm;
pub mod prompt;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::build_feature_matrix;
use crate::ingest::TurnSpan;
use crate::timeline::{dilate_events, FrameStream, GroundTruth, DEFAULT_WINDOW_FRAMES};

use self::logistic::{fit_logistic, predict_logistic, LogisticConfig, LogisticModel};
use self::lstm::{predict_lstm, train_lstm, LstmConfig, LstmModel, TrainConfig};
use self::prompt::{prompt_ensemble_predict, LlmClient, PromptConfig};

/// One recording on the shared frame clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub vap: FrameStream,
    pub llm: FrameStream,
    pub truth: GroundTruth,
    pub spans: Option<Vec<TurnSpan>>,
}

impl Recording {
    pub fn new(id: impl Into<String>, vap: FrameStream, llm: FrameStream, truth: GroundTruth) -> Result<Self> {
        if vap.frame_rate() != llm.frame_rate() {
            return Err(Error::FrameRateMismatch(vap.frame_rate(), llm.frame_rate()));
        }
        for (what, s) in [("VAP stream vs ground truth", &vap), ("LLM stream vs ground truth", &llm)] {
            if s.len() != truth.total_frames() {
                return Err(Error::LengthMismatch {
                    what,
                    left: s.len(),
                    right: truth.total_frames(),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            vap,
            llm,
            truth,
            spans: None,
        })
    }

    pub fn with_spans(mut self, spans: Vec<TurnSpan>) -> Self {
        self.spans = Some(spans);
        self
    }

    pub fn frame_rate(&self) -> u32 {
        self.vap.frame_rate()
    }

    pub fn duration_s(&self) -> f64 {
        self.vap.duration_s()
    }
}

/// A fitted model that scores recordings.
pub trait Predictor: Send {
    fn predict(&mut self, rec: &Recording) -> Result<FrameStream>;
}

/// Something that can be fitted on training recordings.
pub trait FusionStrategy: Sync {
    fn name(&self) -> &str;
    /// Prompt label for reports; empty for non-prompt strategies.
    fn prompt_label(&self) -> &str {
        ""
    }
    fn fit(&self, train: &[Recording]) -> Result<Box<dyn Predictor>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Vap,
    Llm,
}

/// Scores a recording with one of its input streams unchanged.
#[derive(Debug, Clone, Copy)]
pub struct Passthrough(pub Source);

impl Predictor for Passthrough {
    fn predict(&mut self, rec: &Recording) -> Result<FrameStream> {
        Ok(match self.0 {
            Source::Vap => rec.vap.clone(),
            Source::Llm => rec.llm.clone(),
        })
    }
}

impl FusionStrategy for Passthrough {
    fn name(&self) -> &str {
        match self.0 {
            Source::Vap => "passthrough-vap",
            Source::Llm => "passthrough-llm",
        }
    }

    fn fit(&self, _train: &[Recording]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(*self))
    }
}

#[derive(Debug, Clone)]
pub struct LogisticPredictor(pub LogisticModel);

impl Predictor for LogisticPredictor {
    fn predict(&mut self, rec: &Recording) -> Result<FrameStream> {
        predict_logistic(&self.0, &build_feature_matrix(&rec.vap, &rec.llm)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticStrategy {
    pub cfg: LogisticConfig,
    pub window_frames: usize,
}

impl Default for LogisticStrategy {
    fn default() -> Self {
        Self {
            cfg: LogisticConfig::default(),
            window_frames: DEFAULT_WINDOW_FRAMES,
        }
    }
}

/// Stacked features and dilated labels of several recordings.
pub fn logistic_training_set(
    train: &[Recording],
    window_frames: usize,
) -> Result<(crate::features::FeatureMatrix, Vec<bool>)> {
    let parts = train
        .iter()
        .map(|r| build_feature_matrix(&r.vap, &r.llm))
        .collect::<Result<Vec<_>>>()?;
    let x = crate::features::FeatureMatrix::concat(&parts)?;
    let y = train
        .iter()
        .flat_map(|r| dilate_events(&r.truth, window_frames))
        .collect();
    Ok((x, y))
}

/// Fits logistic regression on every frame of `train`, labelled by dilated events.
pub fn fit_logistic_on(train: &[Recording], window_frames: usize, cfg: &LogisticConfig) -> Result<LogisticModel> {
    let (x, y) = logistic_training_set(train, window_frames)?;
    fit_logistic(&x, &y, cfg)
}

impl FusionStrategy for LogisticStrategy {
    fn name(&self) -> &str {
        "lr"
    }

    fn fit(&self, train: &[Recording]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(LogisticPredictor(fit_logistic_on(train, self.window_frames, &self.cfg)?)))
    }
}

#[derive(Debug, Clone)]
pub struct LstmPredictor {
    pub model: Arc<LstmModel>,
    pub window: usize,
}

impl Predictor for LstmPredictor {
    fn predict(&mut self, rec: &Recording) -> Result<FrameStream> {
        predict_lstm(&self.model, &rec.vap, &rec.llm, self.window)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LstmStrategy {
    pub model: LstmConfig,
    pub train: TrainConfig,
}

impl FusionStrategy for LstmStrategy {
    fn name(&self) -> &str {
        "lstm"
    }

    fn fit(&self, train: &[Recording]) -> Result<Box<dyn Predictor>> {
        let (model, _) = train_lstm(train, &[], self.model, &self.train)?;
        Ok(Box::new(LstmPredictor {
            model: Arc::new(model),
            window: self.train.seq_len,
        }))
    }
}

/// Opens a fresh LLM connection for one recording.
/// An already-trained predictor. `fit` ignores the training recordings, so under
/// cross-validation only the threshold is chosen on the training folds.
#[derive(Debug, Clone)]
pub struct Pretrained<P> {
    pub name: String,
    pub predictor: P,
}

impl<P: Predictor + Clone + Sync + 'static> FusionStrategy for Pretrained<P> {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&self, _train: &[Recording]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.predictor.clone()))
    }
}

pub type ClientFactory = Arc<dyn Fn(&Recording) -> Result<Box<dyn LlmClient>> + Send + Sync>;

/// Queries an LLM at every turn end; nothing is fitted.
#[derive(Clone)]
pub struct PromptStrategy {
    pub cfg: PromptConfig,
    pub label: String,
    pub clients: ClientFactory,
}

impl Predictor for PromptStrategy {
    fn predict(&mut self, rec: &Recording) -> Result<FrameStream> {
        let spans = rec
            .spans
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("recording {} has no turn spans", rec.id)))?;
        let mut client = (self.clients)(rec)?;
        prompt_ensemble_predict(spans, &rec.vap, &mut client, &self.cfg)
    }
}

impl FusionStrategy for PromptStrategy {
    fn name(&self) -> &str {
        "prompt"
    }

    fn prompt_label(&self) -> &str {
        &self.label
    }

    fn fit(&self, _train: &[Recording]) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::prompt::ReplayClient;
    use crate::ingest::Speaker;

    fn rec(n: usize) -> Recording {
        Recording::new(
            "r",
            FrameStream::constant(50, n, 0.2, "vap").unwrap(),
            FrameStream::constant(50, n, 0.7, "llm").unwrap(),
            GroundTruth::new(vec![n / 2], n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn lengths_must_agree() {
        let err = Recording::new(
            "r",
            FrameStream::constant(50, 10, 0.2, "vap").unwrap(),
            FrameStream::constant(50, 11, 0.7, "llm").unwrap(),
            GroundTruth::new(vec![], 10).unwrap(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn passthrough_returns_inputs() {
        let r = rec(20);
        let mut p = Passthrough(Source::Llm).fit(&[]).unwrap();
        assert_eq!(p.predict(&r).unwrap(), r.llm);
        assert_eq!(Passthrough(Source::Vap).name(), "passthrough-vap");
    }

    #[test]
    fn prompt_strategy_needs_spans() {
        let s = PromptStrategy {
            cfg: PromptConfig::default(),
            label: "prompt2".into(),
            clients: Arc::new(|_| Ok(Box::new(ReplayClient::from_pairs([(0, "yes".to_string())])))),
        };
        let mut p = s.fit(&[]).unwrap();
        assert!(p.predict(&rec(100)).is_err());
        let r = rec(100).with_spans(vec![TurnSpan {
            start_s: 0.0,
            end_s: 1.0,
            speaker: Speaker::User,
            text: "hi".into(),
        }]);
        let out = p.predict(&r).unwrap();
        assert_eq!(out.values()[0], 1.0);
        assert_eq!(out.values()[60], 0.0);
    }
}
