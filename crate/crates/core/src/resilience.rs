//! Outage probabilities, the queue-aware resilience score, and failure
//! injection.
//!
//! Naming: the product `∏(1 − P)` over selected links is the path
//! *survival*; *outage* always means its complement.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, FadingModel, LinkBudget};
use crate::math;
use crate::orbital::{Constellation, SatelliteId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResilienceError {
    #[error("selected links do not form a connected walk (break after link {0})")]
    Disconnected(usize),
    #[error("resilience weights must be non-negative and sum to 1, got ({0}, {1})")]
    InvalidWeights(f64, f64),
    #[error("failure duration must be positive")]
    InvalidDuration,
    #[error(transparent)]
    Orbital(#[from] crate::orbital::OrbitalError),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
}

/// Regularized lower incomplete gamma `P(a, x) = γ(a, x)/Γ(a)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = -x + a * math::ln(x) - math::ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum * math::exp(log_prefactor)).clamp(0.0, 1.0)
    } else {
        // Modified Lentz evaluation of the continued fraction for Q(a, x).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - math::exp(log_prefactor) * h).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutageParams {
    /// Minimum tolerable SNR, linear.
    pub snr_threshold: f64,
    /// `None` models a deterministic (non-fading) link.
    pub fading: Option<FadingModel>,
    /// Bound on the end-to-end outage of any used path.
    pub outage_threshold: f64,
}

impl Default for OutageParams {
    fn default() -> Self {
        Self { snr_threshold: math::db_to_linear(71.0), fading: Some(FadingModel::default()), outage_threshold: 0.1 }
    }
}

/// `Pr{SNR ≤ μ_th}` for a link whose mean SNR is `mean_snr`.
pub fn hop_outage_from_mean(mean_snr: f64, params: &OutageParams) -> f64 {
    if !(mean_snr > 0.0) {
        return 1.0;
    }
    match params.fading {
        None => {
            if mean_snr <= params.snr_threshold {
                1.0
            } else {
                0.0
            }
        }
        Some(f) => {
            let m = f.nakagami_m;
            regularized_lower_gamma(m, m * params.snr_threshold / mean_snr)
        }
    }
}

/// Outage of one ISL at `distance_km` under the fading model in `params`.
pub fn hop_outage(budget: &LinkBudget, distance_km: f64, params: &OutageParams) -> Result<f64, ResilienceError> {
    let mean = channel::isl_snr(budget, distance_km, 1.0)?;
    Ok(hop_outage_from_mean(mean, params))
}

/// Directed link between two flat satellite indices.
pub type Link = (usize, usize);

/// Links with `S(i,j) = 1`: an ordered walk from the uplink satellite to the
/// downlink satellite. The indicator semantics count each distinct link once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSelection {
    walk: Vec<Link>,
}

impl PathSelection {
    /// From a satellite visiting order; consecutive repeats are self-loops.
    pub fn from_trace(trace: &[usize]) -> Self {
        Self { walk: trace.windows(2).map(|w| (w[0], w[1])).collect() }
    }

    pub fn from_links(links: Vec<Link>) -> Result<Self, ResilienceError> {
        for (k, w) in links.windows(2).enumerate() {
            if w[0].1 != w[1].0 {
                return Err(ResilienceError::Disconnected(k));
            }
        }
        Ok(Self { walk: links })
    }

    pub fn walk(&self) -> &[Link] {
        &self.walk
    }

    /// Distinct selected links.
    pub fn links(&self) -> BTreeSet<Link> {
        self.walk.iter().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.walk.is_empty()
    }
}

/// `1 − (1 − P_u)(1 − P_d)·∏(1 − P_ij)` over the selected links.
pub fn path_outage(
    path: &PathSelection,
    per_link_outage: impl Fn(Link) -> f64,
    uplink_outage: f64,
    downlink_outage: f64,
) -> f64 {
    let survival: f64 = path.links().into_iter().map(|l| 1.0 - per_link_outage(l)).product();
    (1.0 - (1.0 - uplink_outage) * (1.0 - downlink_outage) * survival).clamp(0.0, 1.0)
}

/// `(1 − P_u)(1 − P_d)` folded into a single ground-segment outage.
pub fn ground_outage(uplink_outage: f64, downlink_outage: f64) -> f64 {
    1.0 - (1.0 - uplink_outage) * (1.0 - downlink_outage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResilienceWeights {
    pub outage: f64,
    pub queue: f64,
}

impl Default for ResilienceWeights {
    fn default() -> Self {
        Self { outage: 0.5, queue: 0.5 }
    }
}

impl ResilienceWeights {
    pub fn validate(&self) -> Result<(), ResilienceError> {
        let ok = self.outage >= 0.0 && self.queue >= 0.0 && ((self.outage + self.queue) - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(ResilienceError::InvalidWeights(self.outage, self.queue))
        }
    }
}

/// How the per-link queue terms combine over a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueAggregation {
    /// `max` over links of `max(1 − q_i, 1 − q_j)`.
    #[default]
    Max,
    /// `min` over links of `min(1 − q_i, 1 − q_j)`.
    Bottleneck,
}

impl QueueAggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueAggregation::Max => "max",
            QueueAggregation::Bottleneck => "bottleneck",
        }
    }
}

/// Queue-freeness aggregate over the selected links; 0 for an empty path.
pub fn queue_term(path: &PathSelection, occupancy: impl Fn(usize) -> f64, aggregation: QueueAggregation) -> f64 {
    let per_link = path.links().into_iter().map(|(i, j)| {
        let (fi, fj) = (1.0 - occupancy(i), 1.0 - occupancy(j));
        match aggregation {
            QueueAggregation::Max => fi.max(fj),
            QueueAggregation::Bottleneck => fi.min(fj),
        }
    });
    let agg = match aggregation {
        QueueAggregation::Max => per_link.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
        QueueAggregation::Bottleneck => per_link.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))),
    };
    agg.unwrap_or(0.0).clamp(0.0, 1.0)
}

/// `ω1(1 − P_out^all) + ω2·queue_term`.
pub fn resilience_score(
    path: &PathSelection,
    path_outage_all: f64,
    occupancy: impl Fn(usize) -> f64,
    weights: ResilienceWeights,
    aggregation: QueueAggregation,
) -> Result<f64, ResilienceError> {
    weights.validate()?;
    let q = queue_term(path, occupancy, aggregation);
    Ok((weights.outage * (1.0 - path_outage_all) + weights.queue * q).clamp(0.0, 1.0))
}

/// Per-link reliability in `[0, 1]`: 0 while failed, otherwise
/// `ω1(1 − P_hop) + ω2·max(1 − q_i, 1 − q_j)`.
pub fn link_resilience_feature(
    hop_outage: f64,
    failed: bool,
    occupancy_from: f64,
    occupancy_to: f64,
    weights: ResilienceWeights,
) -> f64 {
    if failed {
        return 0.0;
    }
    // Same per-link queue term as the path score: max(1 - q_i, 1 - q_j).
    let q = occupancy_from.min(occupancy_to).clamp(0.0, 1.0);
    (weights.outage * (1.0 - hop_outage) + weights.queue * (1.0 - q)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Jamming,
    Hardware,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Jamming => "jamming",
            FailureKind::Hardware => "hardware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureTarget {
    Satellite(SatelliteId),
    /// Directed link `from → to`.
    Link(SatelliteId, SatelliteId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub target: FailureTarget,
    pub start: f64,
    pub duration: f64,
    pub kind: FailureKind,
}

impl FailureEvent {
    pub fn validate(&self) -> Result<(), ResilienceError> {
        if self.duration > 0.0 && self.duration.is_finite() && self.start.is_finite() {
            Ok(())
        } else {
            Err(ResilienceError::InvalidDuration)
        }
    }

    pub fn is_active(&self, now: f64) -> bool {
        self.start <= now && now < self.start + self.duration
    }
}

/// Adjacency after removing failed nodes and links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveTopology {
    pub isl: Vec<[Option<usize>; 4]>,
    pub satellite_up: Vec<bool>,
}

impl EffectiveTopology {
    pub fn unimpaired(adjacency: &[[Option<usize>; 4]]) -> Self {
        Self { isl: adjacency.to_vec(), satellite_up: alloc::vec![true; adjacency.len()] }
    }

    pub fn has_link(&self, from: usize, to: usize) -> bool {
        self.isl[from].contains(&Some(to))
    }
}

/// Remove everything inside an active failure window at `now`.
pub fn apply_failures(
    constellation: &Constellation,
    adjacency: &[[Option<usize>; 4]],
    schedule: &[FailureEvent],
    now: f64,
) -> Result<EffectiveTopology, ResilienceError> {
    let mut topo = EffectiveTopology::unimpaired(adjacency);
    for ev in schedule.iter().filter(|e| e.is_active(now)) {
        match ev.target {
            FailureTarget::Satellite(id) => {
                let i = constellation.index_of(id)?;
                topo.satellite_up[i] = false;
            }
            FailureTarget::Link(from, to) => {
                let (f, t) = (constellation.index_of(from)?, constellation.index_of(to)?);
                for slot in topo.isl[f].iter_mut() {
                    if *slot == Some(t) {
                        *slot = None;
                    }
                }
            }
        }
    }
    let up = topo.satellite_up.clone();
    for (i, nbrs) in topo.isl.iter_mut().enumerate() {
        for slot in nbrs.iter_mut() {
            if let Some(j) = *slot {
                if !up[i] || !up[j] {
                    *slot = None;
                }
            }
        }
    }
    Ok(topo)
}

/// Random failures: `count` events uniform over `[0, horizon)`, durations
/// uniform in `[0.5, 1.5]·mean_duration`, half on satellites, half on links.
pub fn random_schedule<R: Rng + ?Sized>(
    constellation: &Constellation,
    rng: &mut R,
    count: usize,
    horizon: f64,
    mean_duration: f64,
    kind: FailureKind,
) -> Vec<FailureEvent> {
    let adjacency = constellation.isl_adjacency();
    (0..count)
        .map(|_| {
            let sat = rng.random_range(0..constellation.len());
            let target = if rng.random_bool(0.5) {
                FailureTarget::Satellite(constellation.id_of(sat))
            } else {
                let nbrs: Vec<usize> = adjacency[sat].iter().flatten().copied().collect();
                let j = nbrs[rng.random_range(0..nbrs.len())];
                FailureTarget::Link(constellation.id_of(sat), constellation.id_of(j))
            };
            FailureEvent {
                target,
                start: rng.random_range(0.0..horizon),
                duration: mean_duration * rng.random_range(0.5..1.5),
                kind,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbital::ConstellationParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn integer_closed_form(m: u32, x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..m {
            if k > 0 {
                term *= x / k as f64;
            }
            sum += term;
        }
        1.0 - (-x).exp() * sum
    }

    #[test]
    fn incomplete_gamma_matches_integer_closed_form() {
        for m in 1..6u32 {
            for &x in &[1e-4, 0.01, 0.3, 1.0, 2.5, 5.9, 7.0, 15.0, 40.0] {
                let got = regularized_lower_gamma(m as f64, x);
                let want = integer_closed_form(m, x);
                assert!((got - want).abs() < 1e-13, "m={m} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn nakagami_outage_at_mean_threshold() {
        let p = OutageParams { snr_threshold: 5.0, ..Default::default() };
        let got = hop_outage_from_mean(5.0, &p);
        let want = 1.0 - 3.0 * (-2.0f64).exp();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.5940).abs() < 1e-4);
    }

    #[test]
    fn nakagami_outage_matches_monte_carlo() {
        let fading = FadingModel::default();
        let p = OutageParams { snr_threshold: 1.0, fading: Some(fading), outage_threshold: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| fading.sample_power(&mut rng) <= 1.0).count();
        let mc = hits as f64 / n as f64;
        assert!((mc - hop_outage_from_mean(1.0, &p)).abs() < 1e-2);
    }

    #[test]
    fn outage_limits() {
        let p = OutageParams { snr_threshold: 1e-300, ..Default::default() };
        assert!(hop_outage_from_mean(1.0, &p) < 1e-200);
        let det = OutageParams { fading: None, snr_threshold: 2.0, outage_threshold: 0.1 };
        assert_eq!(hop_outage_from_mean(3.0, &det), 0.0);
        assert_eq!(hop_outage_from_mean(1.0, &det), 1.0);
        assert_eq!(hop_outage_from_mean(0.0, &OutageParams::default()), 1.0);
    }

    #[test]
    fn outage_monotone_in_threshold_and_mean() {
        let base = OutageParams::default();
        let mut prev = 0.0;
        for k in 0..40 {
            let p = OutageParams { snr_threshold: 10f64.powf(k as f64 / 4.0), ..base.clone() };
            let v = hop_outage_from_mean(1e5, &p);
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 1.0;
        for k in 0..40 {
            let v = hop_outage_from_mean(10f64.powf(k as f64 / 4.0), &base);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn path_outage_examples() {
        let path = PathSelection::from_trace(&[0, 1, 2, 3, 4, 5]);
        assert_eq!(path_outage(&path, |_| 0.0, 0.0, 0.0), 0.0);
        let one = PathSelection::from_trace(&[0, 1]);
        assert!((path_outage(&one, |_| 0.1, 0.0, 0.0) - 0.1).abs() < 1e-15);
        let got = path_outage(&path, |_| 0.01, 0.005, 0.005);
        let want = 1.0 - 0.995f64.powi(2) * 0.99f64.powi(5);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.0585).abs() < 1e-4);
    }

    #[test]
    fn path_outage_grows_with_links() {
        let mut trace = alloc::vec![0usize];
        let mut prev = 0.0;
        for k in 1..20 {
            trace.push(k);
            let v = path_outage(&PathSelection::from_trace(&trace), |(i, _)| 0.001 * (i + 1) as f64, 0.01, 0.02);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn disconnected_selection_rejected() {
        assert!(PathSelection::from_links(alloc::vec![(0, 1), (1, 2)]).is_ok());
        assert_eq!(
            PathSelection::from_links(alloc::vec![(0, 1), (2, 3)]).unwrap_err(),
            ResilienceError::Disconnected(0)
        );
    }

    #[test]
    fn resilience_examples() {
        let w = ResilienceWeights::default();
        let path = PathSelection::from_trace(&[0, 1, 2]);
        let r = resilience_score(&path, 0.0, |_| 0.0, w, QueueAggregation::Max).unwrap();
        assert_eq!(r, 1.0);
        let w1 = ResilienceWeights { outage: 1.0, queue: 0.0 };
        let r = resilience_score(&path, 0.3, |_| 0.5, w1, QueueAggregation::Max).unwrap();
        assert!((r - 0.7).abs() < 1e-15);

        // Links (0,1) with q = (0.4, 0.9) and (2,3) with q = (0.7, 0.7).
        let occ = |n: usize| [0.4, 0.9, 0.7, 0.7][n];
        let path = PathSelection { walk: alloc::vec![(0, 1), (2, 3)] };
        assert!((queue_term(&path, occ, QueueAggregation::Max) - 0.6).abs() < 1e-15);
        let r = resilience_score(&path, 0.2, occ, w, QueueAggregation::Max).unwrap();
        assert!((r - 0.7).abs() < 1e-15);
        assert!((queue_term(&path, occ, QueueAggregation::Bottleneck) - 0.1).abs() < 1e-15);

        let empty = PathSelection::default();
        let r = resilience_score(&empty, 0.2, occ, w, QueueAggregation::Max).unwrap();
        assert!((r - 0.4).abs() < 1e-15);
        assert!(resilience_score(&empty, 0.2, occ, ResilienceWeights { outage: 0.7, queue: 0.7 }, QueueAggregation::Max).is_err());
    }

    #[test]
    fn link_feature_examples() {
        let w = ResilienceWeights::default();
        assert_eq!(link_resilience_feature(0.0, true, 0.0, 0.0, w), 0.0);
        assert_eq!(link_resilience_feature(0.0, false, 0.0, 0.0, w), 1.0);
        assert!((link_resilience_feature(0.2, false, 0.5, 0.3, w) - 0.75).abs() < 1e-15);
    }

    fn small() -> Constellation {
        Constellation::new(ConstellationParams { plane_count: 4, sats_per_plane: 4, ..ConstellationParams::starlink_shell1() })
            .unwrap()
    }

    #[test]
    fn empty_schedule_changes_nothing() {
        let c = small();
        let adj = c.isl_adjacency();
        let topo = apply_failures(&c, &adj, &[], 10.0).unwrap();
        assert_eq!(topo.isl, adj);
    }

    #[test]
    fn node_failure_removes_incident_links() {
        let c = small();
        let adj = c.isl_adjacency();
        let ev = FailureEvent {
            target: FailureTarget::Satellite(SatelliteId::new(1, 1)),
            start: 5.0,
            duration: 2.0,
            kind: FailureKind::Jamming,
        };
        let failed = c.index_of(SatelliteId::new(1, 1)).unwrap();
        let topo = apply_failures(&c, &adj, core::slice::from_ref(&ev), 6.0).unwrap();
        assert!(!topo.satellite_up[failed]);
        assert!(topo.isl[failed].iter().all(Option::is_none));
        assert!(topo.isl.iter().all(|n| !n.contains(&Some(failed))));
        let removed = adj.iter().map(|n| n.iter().flatten().count()).sum::<usize>()
            - topo.isl.iter().map(|n| n.iter().flatten().count()).sum::<usize>();
        assert_eq!(removed, 8);
        // Restored once the window closes.
        assert_eq!(apply_failures(&c, &adj, &[ev], 7.0).unwrap().isl, adj);
    }

    #[test]
    fn directed_link_failure() {
        let c = small();
        let adj = c.isl_adjacency();
        let ev = FailureEvent {
            target: FailureTarget::Link(SatelliteId::new(0, 0), SatelliteId::new(0, 1)),
            start: 0.0,
            duration: 1.0,
            kind: FailureKind::Hardware,
        };
        let topo = apply_failures(&c, &adj, &[ev], 0.5).unwrap();
        assert!(!topo.has_link(0, 1));
        assert!(topo.has_link(1, 0));
    }

    #[test]
    fn random_schedule_replays_identically() {
        let c = small();
        let adj = c.isl_adjacency();
        let timeline = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let sched = random_schedule(&c, &mut rng, 12, 100.0, 10.0, FailureKind::Jamming);
            (0..200).map(|k| apply_failures(&c, &adj, &sched, k as f64 * 0.5).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(timeline(), timeline());
    }
}
