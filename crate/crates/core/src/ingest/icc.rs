use super::ParticipantResponses;
use crate::error::{Error, Result};
use crate::timeline::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IccLabelConfig {
    /// Fraction of participants that must agree on a frame.
    pub agreement: f64,
    /// Each response counts for this many frames on either side (0.75 s at 50 Hz).
    pub smear_frames: usize,
}

impl Default for IccLabelConfig {
    fn default() -> Self {
        Self {
            agreement: 0.30,
            smear_frames: 37,
        }
    }
}

/// Minimum number of agreeing participants, `ceil(agreement * n)`, never below one.
fn required_votes(agreement: f64, n: usize) -> usize {
    // 0.3 * 10 is 3.0000000000000004 in binary floating point
    let raw = agreement * n as f64;
    ((raw - 1e-9).ceil().max(1.0)) as usize
}

/// Consensus transition events from per-participant responses.
///
/// Every response covers `±smear_frames`. A frame is agreed on when at least
/// `ceil(agreement * n)` distinct participants cover it. Each maximal run of
/// frames covered by any response is one candidate region; a region whose
/// agreed frames are non-empty yields one event halfway (rounded down) between
/// its first and last agreed frame. Raising `agreement` therefore never adds
/// events.
pub fn aggregate_icc_labels(
    resp: &ParticipantResponses,
    total_frames: usize,
    cfg: &IccLabelConfig,
) -> Result<GroundTruth> {
    if total_frames == 0 {
        return Err(Error::invalid("total_frames must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.agreement) {
        return Err(Error::invalid("agreement must lie in [0, 1]"));
    }
    let needed = required_votes(cfg.agreement, resp.n_participants());

    let mut coverage = vec![0usize; total_frames];
    let mut covered = vec![false; total_frames];
    for frames in resp.responses() {
        covered.fill(false);
        for &r in frames {
            let lo = r.saturating_sub(cfg.smear_frames);
            if lo >= total_frames {
                continue;
            }
            let hi = (r + cfg.smear_frames).min(total_frames - 1);
            covered[lo..=hi].fill(true);
        }
        for (c, &hit) in coverage.iter_mut().zip(&covered) {
            *c += hit as usize;
        }
    }

    let mut events = Vec::new();
    let mut f = 0;
    while f < total_frames {
        if coverage[f] == 0 {
            f += 1;
            continue;
        }
        let mut agreed: Option<(usize, usize)> = None;
        while f < total_frames && coverage[f] > 0 {
            if coverage[f] >= needed {
                agreed = Some(agreed.map_or((f, f), |(first, _)| (first, f)));
            }
            f += 1;
        }
        if let Some((first, last)) = agreed {
            events.push((first + last) / 2);
        }
    }
    GroundTruth::new(events, total_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn responses(n: usize, frames: &[&[usize]]) -> ParticipantResponses {
        ParticipantResponses::new(n, frames.iter().map(|f| f.to_vec()).collect()).unwrap()
    }

    #[test]
    fn ceiling_is_exact_at_integer_products() {
        assert_eq!(required_votes(0.3, 10), 3);
        assert_eq!(required_votes(0.3, 11), 4);
        assert_eq!(required_votes(0.3, 1), 1);
        assert_eq!(required_votes(1.0, 7), 7);
        assert_eq!(required_votes(0.0, 7), 1);
    }

    #[test]
    fn three_of_ten_agree() {
        let r = responses(10, &[&[500], &[505], &[510]]);
        let t = aggregate_icc_labels(&r, 2000, &IccLabelConfig::default()).unwrap();
        // all three cover 473..=537
        assert_eq!(t.events(), &[505]);
    }

    #[test]
    fn two_of_ten_is_not_enough() {
        let r = responses(10, &[&[500], &[500]]);
        let t = aggregate_icc_labels(&r, 2000, &IccLabelConfig::default()).unwrap();
        assert!(t.events().is_empty());
    }

    #[test]
    fn single_participant_at_frame_zero() {
        let r = responses(1, &[&[0]]);
        let t = aggregate_icc_labels(&r, 100, &IccLabelConfig::default()).unwrap();
        // run 0..=37, midpoint 18
        let cfg = IccLabelConfig {
            smear_frames: 0,
            ..Default::default()
        };
        assert_eq!(t.events(), &[18]);
        let t = aggregate_icc_labels(&r, 100, &cfg).unwrap();
        assert_eq!(t.events(), &[0]);
    }

    #[test]
    fn repeated_presses_by_one_participant_count_once() {
        let r = responses(10, &[&[500, 501, 502], &[500]]);
        let t = aggregate_icc_labels(&r, 2000, &IccLabelConfig::default()).unwrap();
        assert!(t.events().is_empty());
    }

    #[test]
    fn zero_frames_rejected() {
        let r = responses(1, &[&[0]]);
        assert!(aggregate_icc_labels(&r, 0, &IccLabelConfig::default()).is_err());
    }

    #[test]
    fn responses_past_the_end_are_clipped() {
        let r = responses(2, &[&[120], &[]]);
        let t = aggregate_icc_labels(&r, 100, &IccLabelConfig::default()).unwrap();
        // 83..=99 covered
        assert_eq!(t.events(), &[91]);
    }

    fn brute_force(resp: &ParticipantResponses, total: usize, cfg: &IccLabelConfig) -> Vec<usize> {
        let needed = required_votes(cfg.agreement, resp.n_participants());
        let agreed: Vec<bool> = (0..total)
            .map(|f| {
                resp.responses()
                    .iter()
                    .filter(|p| p.iter().any(|&r| f.abs_diff(r) <= cfg.smear_frames))
                    .count()
                    >= needed
            })
            .collect();
        let touched: Vec<bool> = (0..total)
            .map(|f| resp.responses().iter().flatten().any(|&r| f.abs_diff(r) <= cfg.smear_frames))
            .collect();
        let mut events = Vec::new();
        let mut f = 0;
        while f < total {
            if !touched[f] {
                f += 1;
                continue;
            }
            let start = f;
            while f < total && touched[f] {
                f += 1;
            }
            let hits: Vec<usize> = (start..f).filter(|&g| agreed[g]).collect();
            if let (Some(a), Some(b)) = (hits.first(), hits.last()) {
                events.push((a + b) / 2);
            }
        }
        events
    }

    fn resp_strategy() -> impl Strategy<Value = ParticipantResponses> {
        (1usize..8).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(0usize..400, 0..4), 0..=n)
                .prop_map(move |r| ParticipantResponses::new(n, r).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(resp in resp_strategy(), agreement in 0.0f64..=1.0, smear in 0usize..40) {
            let cfg = IccLabelConfig { agreement, smear_frames: smear };
            let t = aggregate_icc_labels(&resp, 300, &cfg).unwrap();
            prop_assert_eq!(t.events().to_vec(), brute_force(&resp, 300, &cfg));
        }

        #[test]
        fn dip_in_agreement_still_yields_one_event(gap in 1usize..20) {
            // two agreed runs separated by a dip inside one covered region
            let resp = ParticipantResponses::new(
                3,
                vec![vec![100], vec![100 + 20 + gap], vec![60, 100 + 60 + 2 * gap]],
            ).unwrap();
            let cfg = IccLabelConfig { agreement: 0.6, smear_frames: 30 };
            let t = aggregate_icc_labels(&resp, 400, &cfg).unwrap();
            prop_assert_eq!(t.events().to_vec(), brute_force(&resp, 400, &cfg));
            prop_assert_eq!(t.events().len(), 1);
        }

        #[test]
        fn raising_agreement_never_adds_events(resp in resp_strategy(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let at = |agreement| aggregate_icc_labels(
                &resp, 300, &IccLabelConfig { agreement, smear_frames: 10 },
            ).unwrap().events().len();
            prop_assert!(at(hi) <= at(lo));
        }

        #[test]
        fn unanimous_single_participant_is_their_runs(frames in proptest::collection::vec(0usize..300, 0..5)) {
            let resp = ParticipantResponses::new(1, vec![frames.clone()]).unwrap();
            let cfg = IccLabelConfig { agreement: 1.0, smear_frames: 5 };
            let t = aggregate_icc_labels(&resp, 300, &cfg).unwrap();
            let mut covered = vec![false; 300];
            for &r in &frames {
                for f in r.saturating_sub(5)..=(r + 5).min(299) {
                    covered[f] = true;
                }
            }
            let runs = covered.windows(2).filter(|w| !w[0] && w[1]).count() + covered[0] as usize;
            prop_assert_eq!(t.events().len(), runs);
        }
    }
}
