//! Fusion of voice-activity-projection (VAP) and LLM turn-shift probability
//! streams on a 50 Hz frame clock, with a tolerance-window evaluation harness.

pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod rng;
pub mod synthetic;
pub mod timeline;

pub use ensemble::{FusionStrategy, Predictor, Recording};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, MetricReport};
pub use timeline::{EvalConfig, FrameStream, GroundTruth, Objective};
