//! Synthetic recordings where the turn-shift label depends on both streams.
//!
//! The timeline is divided into slots. Each slot holds at most one plateau
//! bump: a true transition raises both streams together, a decoy raises only
//! one. Either stream alone therefore fires on its decoys, while any rule that
//! requires both streams to be high separates the classes.

use rand::RngExt;

use crate::ensemble::Recording;
use crate::error::{Error, Result};
use crate::rng::{self, SplitMix64};
use crate::timeline::{FrameStream, GroundTruth, DEFAULT_FRAME_RATE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub slot_frames: usize,
    /// Plateau half-width around the bump centre.
    pub half_width: usize,
    /// Linear ramp length on each side of the plateau.
    pub ramp: usize,
    pub p_event: f64,
    pub p_vap_decoy: f64,
    pub p_llm_decoy: f64,
    pub frame_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 3000,
            slot_frames: 250,
            half_width: 65,
            ramp: 10,
            p_event: 0.4,
            p_vap_decoy: 0.3,
            p_llm_decoy: 0.3,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slot_frames < 2 * (self.half_width + self.ramp) + 20 {
            return Err(Error::invalid("slots are too narrow for the bump shape"));
        }
        if self.n_frames < self.slot_frames {
            return Err(Error::invalid("a recording needs at least one slot"));
        }
        let total = self.p_event + self.p_vap_decoy + self.p_llm_decoy;
        if !(self.p_event > 0.0) || total > 1.0 + 1e-12 {
            return Err(Error::invalid("slot probabilities must be positive for events and sum to at most 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Event,
    VapDecoy,
    LlmDecoy,
    Empty,
}

fn baseline(r: &mut SplitMix64, n: usize) -> Vec<f64> {
    let mut level: f64 = r.random_range(0.1..0.3);
    (0..n)
        .map(|_| {
            level = 0.9 * level + 0.1 * r.random_range(0.05..0.35);
            (level + r.random_range(-0.03..0.03)).clamp(0.0, 1.0)
        })
        .collect()
}

fn add_bump(r: &mut SplitMix64, v: &mut [f64], centre: usize, cfg: &SynthConfig) {
    let top = r.random_range(0.85..0.95);
    let reach = cfg.half_width + cfg.ramp;
    let lo = centre.saturating_sub(reach);
    let hi = (centre + reach).min(v.len() - 1);
    for (f, x) in v.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let d = f.abs_diff(centre);
        let w = if d <= cfg.half_width {
            1.0
        } else {
            1.0 - (d - cfg.half_width) as f64 / (cfg.ramp + 1) as f64
        };
        let bumped = w * (top + r.random_range(-0.03..0.03)) + (1.0 - w) * *x;
        *x = bumped.max(*x).clamp(0.0, 1.0);
    }
}

/// One recording drawn from `r`.
pub fn synth_recording(id: impl Into<String>, cfg: &SynthConfig, r: &mut SplitMix64) -> Result<Recording> {
    cfg.validate()?;
    let n = cfg.n_frames;
    let n_slots = n / cfg.slot_frames;
    let mut slots: Vec<Slot> = (0..n_slots)
        .map(|_| {
            let u: f64 = r.random();
            if u < cfg.p_event {
                Slot::Event
            } else if u < cfg.p_event + cfg.p_vap_decoy {
                Slot::VapDecoy
            } else if u < cfg.p_event + cfg.p_vap_decoy + cfg.p_llm_decoy {
                Slot::LlmDecoy
            } else {
                Slot::Empty
            }
        })
        .collect();
    if !slots.contains(&Slot::Event) {
        slots[0] = Slot::Event;
    }

    let mut vap = baseline(r, n);
    let mut llm = baseline(r, n);
    let mut events = Vec::new();
    let jitter_room = (cfg.slot_frames / 2 - cfg.half_width - cfg.ramp - 5) as i64;
    for (k, slot) in slots.iter().enumerate() {
        let base = (k * cfg.slot_frames + cfg.slot_frames / 2) as i64;
        let centre = (base + r.random_range(-jitter_room..=jitter_room)) as usize;
        let near = |r: &mut SplitMix64| (centre as i64 + r.random_range(-5i64..=5)) as usize;
        match slot {
            Slot::Event => {
                let (a, b) = (near(r), near(r));
                add_bump(r, &mut vap, a, cfg);
                add_bump(r, &mut llm, b, cfg);
                events.push(centre);
            }
            Slot::VapDecoy => {
                let a = near(r);
                add_bump(r, &mut vap, a, cfg);
            }
            Slot::LlmDecoy => {
                let b = near(r);
                add_bump(r, &mut llm, b, cfg);
            }
            Slot::Empty => {}
        }
    }
    Recording::new(
        id,
        FrameStream::new(cfg.frame_rate, vap, "vap")?,
        FrameStream::new(cfg.frame_rate, llm, "llm")?,
        GroundTruth::new(events, n)?,
    )
}

/// `count` recordings named `synth-000`, `synth-001`, ...
pub fn synth_dataset(count: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<Recording>> {
    let mut r = rng::derived(seed, rng::OFFSET_SYNTH);
    (0..count)
        .map(|i| synth_recording(format!("synth-{i:03}"), cfg, &mut r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::threshold_sweep_pooled;
    use crate::timeline::EvalConfig;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_dataset(2, &cfg, 5).unwrap(), synth_dataset(2, &cfg, 5).unwrap());
        assert_ne!(synth_dataset(1, &cfg, 5).unwrap(), synth_dataset(1, &cfg, 6).unwrap());
    }

    #[test]
    fn events_sit_on_joint_bumps() {
        let recs = synth_dataset(3, &SynthConfig::default(), 1).unwrap();
        for r in &recs {
            assert!(!r.truth.events().is_empty());
            for &e in r.truth.events() {
                assert!(r.vap.values()[e] > 0.8 && r.llm.values()[e] > 0.8);
            }
        }
    }

    #[test]
    fn joint_rule_beats_either_stream() {
        let recs = synth_dataset(8, &SynthConfig::default(), 2).unwrap();
        let cfg = EvalConfig::default();
        let joint: Vec<FrameStream> = recs
            .iter()
            .map(|r| {
                let v = r.vap.values().iter().zip(r.llm.values()).map(|(a, b)| a.min(*b)).collect();
                FrameStream::new(50, v, "min").unwrap()
            })
            .collect();
        let best = |streams: Vec<&FrameStream>| {
            let pairs: Vec<_> = streams.into_iter().zip(recs.iter().map(|r| &r.truth)).collect();
            threshold_sweep_pooled(&pairs, &cfg).unwrap().report.balanced_accuracy
        };
        let j = best(joint.iter().collect());
        let v = best(recs.iter().map(|r| &r.vap).collect());
        let l = best(recs.iter().map(|r| &r.llm).collect());
        assert!(j > v + 0.05 && j > l + 0.05, "{j} {v} {l}");
    }
}
