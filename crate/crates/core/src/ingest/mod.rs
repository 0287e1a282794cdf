//! Turning raw corpora into frame-clock ground truth.
//!
//! CCPE dialogs have no audio here, so each dialog is laid out on a synthetic
//! timeline: utterance durations come from a words-per-second rate and turns
//! are separated by fixed silences. ICC-style data arrives as per-participant
//! button presses that are merged into consensus events.

mod ccpe;
mod icc;
pub mod io;

pub use ccpe::{build_ccpe_timeline, parse_ccpe, CcpeTimeline};
pub use icc::{aggregate_icc_labels, IccLabelConfig};
pub use io::{
    load_ground_truth, load_icc_responses, load_prediction_stream, load_turn_spans,
    store_ground_truth, store_prediction_stream, store_turn_spans,
};

use crate::error::{Error, Result};
use crate::timeline::DEFAULT_FRAME_RATE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "USER" => Some(Speaker::User),
            "ASSISTANT" => Some(Speaker::Assistant),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Speaker::User => "USER",
            Speaker::Assistant => "ASSISTANT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineConfig {
    /// Silence inserted after every turn, in seconds.
    pub gap_s: f64,
    /// Speaking rate used to size utterances.
    pub words_per_s: f64,
    pub frame_rate: u32,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        Self {
            gap_s: 2.0,
            words_per_s: 2.5,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

impl TimelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_s >= 0.0) {
            return Err(Error::invalid("gap_s must be non-negative"));
        }
        if !(self.words_per_s > 0.0) {
            return Err(Error::invalid("words_per_s must be positive"));
        }
        if self.frame_rate == 0 {
            return Err(Error::invalid("frame rate must be positive"));
        }
        Ok(())
    }
}

/// One speaker turn placed on the timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub speaker: Speaker,
    pub text: String,
}

/// Response frames per participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantResponses {
    n_participants: usize,
    responses: Vec<Vec<usize>>,
}

impl ParticipantResponses {
    /// `responses` may list fewer participants than `n_participants`; the rest
    /// never responded.
    pub fn new(n_participants: usize, responses: Vec<Vec<usize>>) -> Result<Self> {
        if n_participants == 0 {
            return Err(Error::invalid("at least one participant is required"));
        }
        if responses.len() > n_participants {
            return Err(Error::invalid(format!(
                "{} response lists for {n_participants} participants",
                responses.len()
            )));
        }
        Ok(Self {
            n_participants,
            responses,
        })
    }

    pub fn n_participants(&self) -> usize {
        self.n_participants
    }

    pub fn responses(&self) -> &[Vec<usize>] {
        &self.responses
    }
}
