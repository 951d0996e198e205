//! Per-hop reward shaping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub queue: f64,
    pub progress: f64,
    pub revisit: f64,
    pub resilience: f64,
    /// Constant charged per hop. Without it the positive resilience term
    /// pays a packet for every extra hop it takes.
    pub hop: f64,
    pub delivery_bonus: f64,
    pub drop_penalty: f64,
    /// Queueing delay that counts as one unit of penalty.
    pub queue_ref_s: f64,
    /// Distance that counts as one unit of progress (one intra-plane chord).
    pub progress_ref_km: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            queue: -1.0,
            progress: 1.0,
            revisit: -1.0,
            resilience: 0.5,
            hop: -1.0,
            delivery_bonus: 2.0,
            drop_penalty: -5.0,
            queue_ref_s: 0.01,
            progress_ref_km: 5_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Delivered,
    Dropped,
}

/// What happened after one forwarding decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub queueing_delay_s: f64,
    pub distance_before_km: f64,
    pub distance_after_km: f64,
    pub revisit: bool,
    pub link_resilience: f64,
    pub terminal: Option<Terminal>,
}

pub fn reward(w: &RewardWeights, o: &StepOutcome) -> f64 {
    let mut r = w.queue * (o.queueing_delay_s / w.queue_ref_s)
        + w.progress * (o.distance_before_km - o.distance_after_km) / w.progress_ref_km
        + w.resilience * o.link_resilience
        + w.hop;
    if o.revisit {
        r += w.revisit;
    }
    match o.terminal {
        Some(Terminal::Delivered) => r += w.delivery_bonus,
        Some(Terminal::Dropped) => r += w.drop_penalty,
        None => {}
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(d0: f64, d1: f64, tq: f64, revisit: bool, res: f64, terminal: Option<Terminal>) -> StepOutcome {
        StepOutcome {
            queueing_delay_s: tq,
            distance_before_km: d0,
            distance_after_km: d1,
            revisit,
            link_resilience: res,
            terminal,
        }
    }

    #[test]
    fn all_favourable_step() {
        let w = RewardWeights { hop: 0.0, ..RewardWeights::default() };
        let r = reward(&w, &step(5_000.0, 0.0, 0.0, false, 1.0, Some(Terminal::Delivered)));
        assert_eq!(r, w.progress * 1.0 + w.resilience + w.delivery_bonus);
    }

    #[test]
    fn revisit_is_strictly_worse() {
        let w = RewardWeights::default();
        let a = reward(&w, &step(100.0, 100.0, 0.002, true, 0.8, None));
        let b = reward(&w, &step(100.0, 100.0, 0.002, false, 0.8, None));
        assert!(a < b);
        assert_eq!(a, w.revisit + w.resilience * 0.8 + w.queue * 0.2 + w.hop);
    }

    #[test]
    fn scripted_episode_ledger() {
        let w = RewardWeights::default();
        let steps = [
            step(12_000.0, 8_000.0, 0.0, false, 1.0, None),
            step(8_000.0, 9_000.0, 0.005, false, 0.6, None),
            step(9_000.0, 1_000.0, 0.001, false, 0.9, Some(Terminal::Delivered)),
        ];
        // Hand-evaluated: progress/5000 - tq/0.01 + 0.5·res - 1 (+2 on delivery).
        let ledger = [0.8 + 0.5 - 1.0, -0.2 - 0.5 + 0.3 - 1.0, 1.6 - 0.1 + 0.45 - 1.0 + 2.0];
        let mut total = 0.0;
        for (s, want) in steps.iter().zip(ledger) {
            let r = reward(&w, s);
            assert!((r - want).abs() < 1e-12, "{r} vs {want}");
            total += r;
        }
        assert!((total - ledger.iter().sum::<f64>()).abs() < 1e-9);
    }
}
