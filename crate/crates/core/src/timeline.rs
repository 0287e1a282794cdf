//! Frame-domain types shared by every stage of the pipeline.
//!
//! Everything runs on a single frame clock (50 Hz by default). Predictor
//! outputs are [`FrameStream`]s, labelled turn-transition points are
//! [`GroundTruth`] events, and evaluation settings live in [`EvalConfig`].

use crate::error::{Error, Result};

/// Frame clock used across a run.
pub const DEFAULT_FRAME_RATE: u32 = 50;

/// Half-width of the evaluation acceptance region, in frames (1.5 s at 50 Hz).
pub const DEFAULT_WINDOW_FRAMES: usize = 75;

/// Fixed-rate sequence of probabilities emitted by one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    frame_rate: u32,
    values: Vec<f64>,
    source_id: String,
}

impl FrameStream {
    pub fn new(frame_rate: u32, values: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if frame_rate == 0 {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "probability {v} at frame {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            frame_rate,
            values,
            source_id: source_id.into(),
        })
    }

    /// A stream filled with a constant value.
    pub fn constant(frame_rate: u32, len: usize, value: f64, source_id: &str) -> Result<Self> {
        Self::new(frame_rate, vec![value; len], source_id)
    }

    pub fn frame_rate(&self) -> u32 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Duration covered by the stream, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate as f64
    }

    /// `p -> 1 - p` for every frame.
    pub fn complement(&self) -> Self {
        Self {
            frame_rate: self.frame_rate,
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            source_id: self.source_id.clone(),
        }
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }
}

/// Labelled transition points for one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    events: Vec<usize>,
    total_frames: usize,
}

impl GroundTruth {
    /// Events must be strictly increasing and lie inside `[0, total_frames)`.
    pub fn new(events: Vec<usize>, total_frames: usize) -> Result<Self> {
        if let Some(w) = events.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "events must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = events.last() {
            if last >= total_frames {
                return Err(Error::invalid(format!(
                    "event at frame {last} is outside a recording of {total_frames} frames"
                )));
            }
        }
        Ok(Self {
            events,
            total_frames,
        })
    }

    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }
}

/// What a threshold sweep maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    BalancedAccuracy,
    F1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub window_frames: usize,
    pub frame_rate: u32,
    pub threshold_grid: Vec<f64>,
    pub allow_flip: bool,
    pub objective: Objective,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_frames: DEFAULT_WINDOW_FRAMES,
            frame_rate: DEFAULT_FRAME_RATE,
            threshold_grid: default_threshold_grid(),
            allow_flip: true,
            objective: Objective::BalancedAccuracy,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_grid.is_empty() {
            return Err(Error::invalid("threshold grid is empty"));
        }
        if self.threshold_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid("threshold grid values must lie in (0, 1)"));
        }
        if self.threshold_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("threshold grid must be strictly increasing"));
        }
        if self.frame_rate == 0 {
            return Err(Error::invalid("frame rate must be positive"));
        }
        Ok(())
    }
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// An utterance-level prediction on the time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
    pub prob: f64,
}

impl Span {
    pub fn new(start_s: f64, end_s: f64, prob: f64) -> Self {
        Self {
            start_s,
            end_s,
            prob,
        }
    }
}

/// First frame whose timestamp `f / rate` is at or after `t`.
pub(crate) fn first_frame_at_or_after(t: f64, rate: u32) -> usize {
    let r = rate as f64;
    let mut f = ((t * r).floor() - 1.0).max(0.0) as usize;
    while (f as f64) / r < t {
        f += 1;
    }
    f
}

/// Spreads utterance-level probabilities onto the frame clock.
///
/// Frame `f` takes the probability of the span with `start <= f / rate < end`;
/// frames covered by no span are 0.0.
pub fn expand_utterance_predictions(
    spans: &[Span],
    total_frames: usize,
    frame_rate: u32,
) -> Result<FrameStream> {
    if frame_rate == 0 {
        return Err(Error::invalid("frame rate must be positive"));
    }
    for s in spans {
        if !(s.start_s < s.end_s) {
            return Err(Error::invalid(format!(
                "span [{}, {}) has non-positive duration",
                s.start_s, s.end_s
            )));
        }
        if !(0.0..=1.0).contains(&s.prob) {
            return Err(Error::invalid(format!(
                "span probability {} is outside [0, 1]",
                s.prob
            )));
        }
    }
    let mut sorted = spans.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    if let Some(w) = sorted.windows(2).find(|w| w[1].start_s < w[0].end_s) {
        return Err(Error::OverlappingSpans {
            a_start: w[0].start_s,
            a_end: w[0].end_s,
            b_start: w[1].start_s,
            b_end: w[1].end_s,
        });
    }

    let mut values = vec![0.0; total_frames];
    for s in &sorted {
        let lo = first_frame_at_or_after(s.start_s, frame_rate).min(total_frames);
        let hi = first_frame_at_or_after(s.end_s, frame_rate).min(total_frames);
        for v in &mut values[lo..hi] {
            *v = s.prob;
        }
    }
    FrameStream::new(frame_rate, values, "expanded")
}

/// Recovers spans from an expanded stream: every maximal run of equal,
/// non-zero values becomes one span.
pub fn spans_from_stream(stream: &FrameStream) -> Vec<Span> {
    let rate = stream.frame_rate() as f64;
    let values = stream.values();
    let mut spans = Vec::new();
    let mut start = 0;
    while start < values.len() {
        let v = values[start];
        let mut end = start + 1;
        while end < values.len() && values[end] == v {
            end += 1;
        }
        if v != 0.0 {
            spans.push(Span::new(start as f64 / rate, end as f64 / rate, v));
        }
        start = end;
    }
    spans
}

/// Inclusive frame ranges `[e - w, e + w]` clipped to the recording,
/// merged where they touch or overlap.
pub fn acceptance_regions(truth: &GroundTruth, window_frames: usize) -> Vec<(usize, usize)> {
    let n = truth.total_frames();
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for &e in truth.events() {
        let lo = e.saturating_sub(window_frames);
        let hi = (e + window_frames).min(n - 1);
        match regions.last_mut() {
            Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
            _ => regions.push((lo, hi)),
        }
    }
    regions
}

/// Per-frame effective labels: frame `f` is positive iff some event lies within
/// `window_frames` of it.
pub fn dilate_events(truth: &GroundTruth, window_frames: usize) -> Vec<bool> {
    let mut labels = vec![false; truth.total_frames()];
    for (lo, hi) in acceptance_regions(truth, window_frames) {
        labels[lo..=hi].fill(true);
    }
    labels
}

/// Trims both streams to the shorter length.
pub fn align_streams(a: &FrameStream, b: &FrameStream) -> Result<(FrameStream, FrameStream)> {
    if a.frame_rate != b.frame_rate {
        return Err(Error::FrameRateMismatch(a.frame_rate, b.frame_rate));
    }
    let n = a.len().min(b.len());
    let trim = |s: &FrameStream| FrameStream {
        frame_rate: s.frame_rate,
        values: s.values[..n].to_vec(),
        source_id: s.source_id.clone(),
    };
    Ok((trim(a), trim(b)))
}

/// Moves every event by `offset_frames`, clamping into the recording and
/// merging events that collide.
pub fn shift_events(truth: &GroundTruth, offset_frames: i64) -> GroundTruth {
    let last = truth.total_frames as i64 - 1;
    let mut events: Vec<usize> = truth
        .events
        .iter()
        .map(|&e| (e as i64 + offset_frames).clamp(0, last.max(0)) as usize)
        .collect();
    events.dedup();
    GroundTruth {
        events,
        total_frames: truth.total_frames,
    }
}
