//! Data directory layout.
//!
//! One recording `<id>` is a group of files sharing that prefix:
//! `<id>.truth.csv` and `<id>.truth.meta` (required), `<id>.vap.csv`,
//! `<id>.llm.csv`, `<id>.spans.csv` and `<id>.replies.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use trpfuse_core::ingest::{load_ground_truth, load_prediction_stream, load_turn_spans};
use trpfuse_core::{FrameStream, Recording};

pub const TRUTH_SUFFIX: &str = ".truth.csv";

pub fn truth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{TRUTH_SUFFIX}"))
}

pub fn vap_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.vap.csv"))
}

pub fn llm_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.llm.csv"))
}

pub fn spans_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.spans.csv"))
}

pub fn replies_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.replies.csv"))
}

/// Recording ids in byte order of their names.
pub fn recording_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read data directory {}", dir.display()))?;
    let mut ids = Vec::new();
    for entry in entries {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(TRUTH_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no *{TRUTH_SUFFIX} files in {}", dir.display());
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub llm: bool,
    pub spans: bool,
}

/// Loads every recording in `dir`. Without an LLM stream file the recording
/// gets an all-zero LLM stream, which is only allowed when `needs.llm` is false.
pub fn load_recordings(dir: &Path, frame_rate: u32, needs: Needs) -> Result<Vec<Recording>> {
    let ids = recording_ids(dir)?;
    let recs = ids
        .iter()
        .map(|id| load_recording(dir, id, frame_rate, needs))
        .collect::<Result<Vec<_>>>()?;
    info!("loaded {} recordings from {}", recs.len(), dir.display());
    Ok(recs)
}

fn load_recording(dir: &Path, id: &str, frame_rate: u32, needs: Needs) -> Result<Recording> {
    let truth = load_ground_truth(truth_path(dir, id))?;
    let vap = load_prediction_stream(vap_path(dir, id), frame_rate)?;
    let llm_file = llm_path(dir, id);
    let llm = if llm_file.exists() {
        load_prediction_stream(&llm_file, frame_rate)?
    } else if needs.llm {
        bail!("missing LLM stream {}", llm_file.display());
    } else {
        warn!("{id}: no LLM stream, using zeros");
        FrameStream::constant(frame_rate, truth.total_frames(), 0.0, "llm")?
    };
    let mut rec = Recording::new(id, vap, llm, truth).with_context(|| format!("recording {id}"))?;
    let spans_file = spans_path(dir, id);
    if spans_file.exists() {
        rec = rec.with_spans(load_turn_spans(&spans_file)?);
    } else if needs.spans {
        bail!("missing turn spans {}", spans_file.display());
    }
    Ok(rec)
}
