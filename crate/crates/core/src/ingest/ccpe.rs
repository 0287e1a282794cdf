use serde_json::Value;

use super::{Dialog, Speaker, TimelineConfig, TurnSpan, Utterance};
use crate::error::{Error, Result};
use crate::timeline::GroundTruth;

/// Byte offset of a serde_json error position (1-based line and column).
fn byte_offset(doc: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in doc.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(doc.len());
        }
        offset += l.len() + 1;
    }
    doc.len()
}

fn schema(dialog: &str, field: &str) -> Error {
    Error::Schema {
        dialog: dialog.to_string(),
        field: field.to_string(),
    }
}

/// Parses the public CCPE `data.json` layout: an array of
/// `{conversationId, utterances: [{speaker, text, ...}]}`. Segment annotations
/// are accepted and ignored.
pub fn parse_ccpe(document: &[u8]) -> Result<Vec<Dialog>> {
    let root: Value = serde_json::from_slice(document).map_err(|e| Error::Json {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let conversations = root
        .as_array()
        .ok_or_else(|| schema("<document>", "top-level array"))?;

    conversations
        .iter()
        .enumerate()
        .map(|(n, conv)| {
            let id = conv
                .get("conversationId")
                .and_then(Value::as_str)
                .ok_or_else(|| schema(&format!("#{n}"), "conversationId"))?;
            let utterances = conv
                .get("utterances")
                .and_then(Value::as_array)
                .ok_or_else(|| schema(id, "utterances"))?;
            let utterances = utterances
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    let speaker = u
                        .get("speaker")
                        .and_then(Value::as_str)
                        .and_then(Speaker::parse)
                        .ok_or_else(|| schema(id, &format!("utterances[{k}].speaker")))?;
                    let text = u
                        .get("text")
                        .and_then(Value::as_str)
                        .ok_or_else(|| schema(id, &format!("utterances[{k}].text")))?;
                    Ok(Utterance {
                        speaker,
                        text: text.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dialog {
                id: id.to_string(),
                utterances,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpeTimeline {
    pub truth: GroundTruth,
    pub turns: Vec<TurnSpan>,
}

/// Lays a dialog out on the frame clock.
///
/// Consecutive utterances by one speaker form a turn. Each utterance lasts
/// `words / words_per_s` seconds (at least one frame), turns follow each other
/// separated by `gap_s` of silence, and one transition event sits on the final
/// frame of every turn. The recording ends after the trailing gap.
pub fn build_ccpe_timeline(dialog: &Dialog, cfg: &TimelineConfig) -> Result<CcpeTimeline> {
    cfg.validate()?;
    if dialog.utterances.is_empty() {
        return Err(Error::invalid(format!("dialog {} has no utterances", dialog.id)));
    }
    let rate = cfg.frame_rate as f64;
    let gap_frames = (cfg.gap_s * rate).round() as usize;
    let utterance_frames = |text: &str| {
        let words = text.split_whitespace().count() as f64;
        ((words / cfg.words_per_s * rate).round() as usize).max(1)
    };

    let mut turns: Vec<(Speaker, usize, Vec<&str>)> = Vec::new();
    for u in &dialog.utterances {
        let frames = utterance_frames(&u.text);
        match turns.last_mut() {
            Some((speaker, len, texts)) if *speaker == u.speaker => {
                *len += frames;
                texts.push(&u.text);
            }
            _ => turns.push((u.speaker, frames, vec![&u.text])),
        }
    }

    let mut cursor = 0usize;
    let mut events = Vec::with_capacity(turns.len());
    let mut spans = Vec::with_capacity(turns.len());
    for (speaker, len, texts) in turns {
        let end = cursor + len;
        events.push(end - 1);
        spans.push(TurnSpan {
            start_s: cursor as f64 / rate,
            end_s: end as f64 / rate,
            speaker,
            text: texts.join(" "),
        });
        cursor = end + gap_frames;
    }
    Ok(CcpeTimeline {
        truth: GroundTruth::new(events, cursor)?,
        turns: spans,
    })
}
