//! VAP-augmented prompting of an external LLM at utterance ends.

pub mod client;

use log::debug;

pub use client::{ClientError, LlmClient, LlmRequest, LlmResponse, NdjsonClient, ReplayClient};

use crate::error::{Error, Result};
use crate::ingest::TurnSpan;
use crate::timeline::{expand_utterance_predictions, first_frame_at_or_after, FrameStream, Span};

/// Plain turn-completion instruction.
pub const PROMPT_1: &str = include_str!("../../../templates/prompt1.txt");
/// Instruction used by the prompt ensemble.
pub const PROMPT_2: &str = include_str!("../../../templates/prompt2.txt");
/// Few-shot variant.
pub const PROMPT_3: &str = include_str!("../../../templates/prompt3.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub vap_threshold_display: f64,
    /// VAP suggests "yes" when its confidence is at or below this.
    pub vap_yes_cutoff: f64,
    pub max_context_s: f64,
    pub system_text: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            vap_threshold_display: 0.9,
            vap_yes_cutoff: 0.1,
            max_context_s: 10.0,
            system_text: PROMPT_2.to_string(),
            temperature: 0.1,
            top_p: 0.9,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vap_yes_cutoff > 0.0 && self.vap_yes_cutoff < 1.0) {
            return Err(Error::invalid("vap_yes_cutoff must lie in (0, 1)"));
        }
        if !(self.max_context_s > 0.0) {
            return Err(Error::invalid("max_context_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// Both messages as one document, the layout of the golden files.
    pub fn to_document(&self) -> String {
        format!("System: {}\n\nUser: {}\n", self.system, self.user)
    }
}

/// Up to four significant digits, trailing zeros and a bare point dropped.
pub fn format_sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn render_prompt(segment_text: &str, vap_confidence: f64, cfg: &PromptConfig) -> Result<RenderedPrompt> {
    if !(0.0..=1.0).contains(&vap_confidence) {
        return Err(Error::invalid(format!(
            "vap confidence {vap_confidence} is outside [0, 1]"
        )));
    }
    let suggestion = if vap_confidence <= cfg.vap_yes_cutoff { "yes" } else { "no" };
    let user = format!(
        "Speech segment: {segment_text}\nVAP confidence: {} (threshold: {}, prediction: {suggestion})",
        format_sig4(1.0 - vap_confidence),
        format_sig4(cfg.vap_threshold_display),
    );
    Ok(RenderedPrompt {
        system: cfg.system_text.clone(),
        user,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmVerdict {
    pub value: Verdict,
    pub raw_text: String,
}

/// Matches the first word of the reply, ignoring case, whitespace and punctuation.
pub fn parse_response(raw_text: &str) -> LlmVerdict {
    let lead: String = raw_text
        .trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    let value = match lead.as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Unparseable,
    };
    LlmVerdict {
        value,
        raw_text: raw_text.to_string(),
    }
}

/// Words spoken in the half-open window `(now_s - max_context_s, now_s]`,
/// joined by single spaces. Words after `now_s` have not been heard yet.
pub fn truncate_context(words: &[(f64, &str)], now_s: f64, max_context_s: f64) -> String {
    let from = now_s - max_context_s;
    words
        .iter()
        .filter(|(t, _)| *t > from && *t <= now_s)
        .map(|(_, w)| *w)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word end times, spread evenly over each turn.
pub fn word_timeline(spans: &[TurnSpan]) -> Vec<(f64, &str)> {
    let mut out = Vec::new();
    for s in spans {
        let words: Vec<&str> = s.text.split_whitespace().collect();
        let n = words.len() as f64;
        for (k, w) in words.into_iter().enumerate() {
            let t = s.start_s + (k as f64 + 1.0) / n * (s.end_s - s.start_s);
            out.push((t, w));
        }
    }
    out
}

/// One query per turn end. Each turn takes the verdict of its final frame:
/// yes is 1, no is 0, and an unreadable reply falls back to `1 - vap` there.
/// A numeric `prob` in the reply overrides the text.
pub fn prompt_ensemble_predict<C: LlmClient + ?Sized>(
    spans: &[TurnSpan],
    vap: &FrameStream,
    client: &mut C,
    cfg: &PromptConfig,
) -> Result<FrameStream> {
    cfg.validate()?;
    let rate = vap.frame_rate();
    let total = vap.len();
    let words = word_timeline(spans);

    let mut out = Vec::with_capacity(spans.len());
    for (k, s) in spans.iter().enumerate() {
        let end = first_frame_at_or_after(s.end_s, rate).min(total);
        if end == 0 {
            return Err(Error::invalid(format!(
                "turn {k} ends at {} s, before the first frame",
                s.end_s
            )));
        }
        let frame = end - 1;
        let v = vap.values()[frame];
        let text = truncate_context(&words, s.end_s, cfg.max_context_s);
        let prompt = render_prompt(&text, v, cfg)?;
        let request = LlmRequest {
            id: k as u64,
            system: prompt.system,
            user: prompt.user,
            temperature: cfg.temperature,
            top_p: cfg.top_p,
        };
        let transport = |message: String| Error::Transport {
            decision: k,
            frame,
            message,
        };
        let reply = client.exchange(&request).map_err(|e| transport(e.to_string()))?;
        let verdict = parse_response(&reply.text);
        let prob = match reply.prob {
            Some(p) if (0.0..=1.0).contains(&p) => p,
            Some(p) => return Err(transport(format!("reply prob {p} is outside [0, 1]"))),
            None => match verdict.value {
                Verdict::Yes => 1.0,
                Verdict::No => 0.0,
                Verdict::Unparseable => 1.0 - v,
            },
        };
        debug!("decision {k} at frame {frame}: {:?} -> {prob}", verdict.value);
        out.push(Span::new(s.start_s, s.end_s, prob));
    }
    Ok(expand_utterance_predictions(&out, total, rate)?.with_source_id("prompt"))
}
