//! Packets and gateway-to-gateway traffic generation.

use alloc::vec::Vec;
use core::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{HopLatency, DEFAULT_PACKET_BITS};
use crate::orbital::Gateway;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("traffic generation needs at least two gateways, got {0}")]
    TooFewGateways(usize),
    #[error("invalid traffic rate {0}")]
    InvalidRate(f64),
    #[error("population weights must have a positive sum for every source")]
    InvalidWeights,
    #[error("time step must be positive")]
    InvalidStep,
    #[error("packet {0} already finished")]
    AlreadyFinished(u64),
    #[error("packet {id} delivered at {delivered} before creation at {created}")]
    DeliveredBeforeCreated { id: u64, created: f64, delivered: f64 },
}

/// A routed endpoint: a gateway, or a satellite for satellite-addressed
/// probe and training packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Gateway(usize),
    Satellite(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Gateway(g) => write!(f, "g{g}"),
            Endpoint::Satellite(s) => write!(f, "s{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DropReason {
    QueueOverflow,
    NoValidAction,
    HopLimit,
    NoCoverage,
    LinkFailure,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueOverflow => "queue_overflow",
            DropReason::NoValidAction => "no_valid_action",
            DropReason::HopLimit => "hop_limit",
            DropReason::NoCoverage => "no_coverage",
            DropReason::LinkFailure => "link_failure",
        }
    }
}

/// One traversed link and the latency spent on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub from: Endpoint,
    pub to: Endpoint,
    pub latency: HopLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub size_bits: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub created_at: f64,
    /// Flat satellite indices in visiting order.
    pub hop_trace: Vec<usize>,
    pub hops: Vec<HopRecord>,
    pub delivered_at: Option<f64>,
    pub drop_reason: Option<DropReason>,
    /// Foreground measurement traffic.
    pub tagged: bool,
}

impl Packet {
    pub fn new(id: u64, size_bits: u64, src: Endpoint, dst: Endpoint, created_at: f64) -> Self {
        Self {
            id,
            size_bits,
            src,
            dst,
            created_at,
            hop_trace: Vec::new(),
            hops: Vec::new(),
            delivered_at: None,
            drop_reason: None,
            tagged: false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.delivered_at.is_some() || self.drop_reason.is_some()
    }

    /// Whether `sat` already appears in the trace.
    pub fn has_visited(&self, sat: usize) -> bool {
        self.hop_trace.contains(&sat)
    }

    /// Satellite-to-satellite hops traversed so far.
    pub fn isl_hops(&self) -> usize {
        self.hop_trace.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub packet: u64,
    pub latency_s: f64,
}

/// Close out a packet's journey.
pub fn mark_delivered(pkt: &mut Packet, t: f64) -> Result<LatencyRecord, TrafficError> {
    if pkt.is_finished() {
        return Err(TrafficError::AlreadyFinished(pkt.id));
    }
    if t < pkt.created_at {
        return Err(TrafficError::DeliveredBeforeCreated { id: pkt.id, created: pkt.created_at, delivered: t });
    }
    pkt.delivered_at = Some(t);
    Ok(LatencyRecord { packet: pkt.id, latency_s: t - pkt.created_at })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    /// Every gateway emits `rate_bps`; destinations uniform.
    Uniform,
    /// `rate_bps` is the network total, split by population weight; destinations
    /// drawn by population weight.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficPattern {
    pub kind: TrafficKind,
    pub rate_bps: f64,
    /// Draw candidates at this rate and thin down to `rate_bps`. Runs sharing
    /// a seed and envelope then see nested packet sets as the rate grows.
    pub envelope_rate_bps: Option<f64>,
    pub packet_bits: u64,
    pub seed: u64,
}

impl Default for TrafficPattern {
    fn default() -> Self {
        Self {
            kind: TrafficKind::Uniform,
            rate_bps: 0.0,
            envelope_rate_bps: None,
            packet_bits: DEFAULT_PACKET_BITS,
            seed: 0,
        }
    }
}

/// Poisson packet source over a fixed gateway set.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    pattern: TrafficPattern,
    rng: ChaCha8Rng,
    /// Envelope rate per source, bits/s.
    source_rates: Vec<f64>,
    destinations: Vec<Option<WeightedIndex<f64>>>,
    gateway_count: usize,
    keep_probability: f64,
}

impl TrafficGenerator {
    pub fn new(pattern: TrafficPattern, gateways: &[Gateway]) -> Result<Self, TrafficError> {
        let n = gateways.len();
        if n < 2 {
            return Err(TrafficError::TooFewGateways(n));
        }
        if !(pattern.rate_bps >= 0.0 && pattern.rate_bps.is_finite()) {
            return Err(TrafficError::InvalidRate(pattern.rate_bps));
        }
        let envelope = pattern.envelope_rate_bps.unwrap_or(pattern.rate_bps);
        if !(envelope >= pattern.rate_bps && envelope.is_finite()) {
            return Err(TrafficError::InvalidRate(envelope));
        }
        let keep_probability = if envelope > 0.0 { pattern.rate_bps / envelope } else { 0.0 };
        let (source_rates, destinations) = match pattern.kind {
            TrafficKind::Uniform => (alloc::vec![envelope; n], alloc::vec![None; n]),
            TrafficKind::Population => {
                let total: f64 = gateways.iter().map(|g| g.population_weight).sum();
                if !(total > 0.0) {
                    return Err(TrafficError::InvalidWeights);
                }
                let rates = gateways.iter().map(|g| envelope * g.population_weight / total).collect();
                let mut dests = Vec::with_capacity(n);
                for src in 0..n {
                    let w: Vec<f64> = gateways
                        .iter()
                        .enumerate()
                        .map(|(i, g)| if i == src { 0.0 } else { g.population_weight })
                        .collect();
                    if gateways[src].population_weight > 0.0 {
                        dests.push(Some(WeightedIndex::new(w).map_err(|_| TrafficError::InvalidWeights)?));
                    } else {
                        dests.push(WeightedIndex::new(w).ok());
                    }
                }
                (rates, dests)
            }
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(pattern.seed),
            pattern,
            source_rates,
            destinations,
            gateway_count: n,
            keep_probability,
        })
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }

    fn destination(&mut self, src: usize) -> usize {
        match &self.destinations[src] {
            Some(w) => w.sample(&mut self.rng),
            None => {
                let k = self.rng.random_range(0..self.gateway_count - 1);
                if k >= src {
                    k + 1
                } else {
                    k
                }
            }
        }
    }

    /// Packets created in `[now, now + dt)`, ordered by creation time.
    /// Ids are assigned from `next_id` onward.
    pub fn generate(&mut self, now: f64, dt: f64, next_id: &mut u64) -> Result<Vec<Packet>, TrafficError> {
        if !(dt > 0.0) {
            return Err(TrafficError::InvalidStep);
        }
        let mut out = Vec::new();
        let bits = self.pattern.packet_bits as f64;
        for src in 0..self.gateway_count {
            let mean = self.source_rates[src] * dt / bits;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as u64;
            for _ in 0..count {
                let offset: f64 = self.rng.random();
                let dst = self.destination(src);
                let mark: f64 = self.rng.random();
                if mark < self.keep_probability {
                    let created = now + offset * dt;
                    out.push(Packet::new(0, self.pattern.packet_bits, Endpoint::Gateway(src), Endpoint::Gateway(dst), created));
                }
            }
        }
        out.sort_by(|a, b| a.created_at.total_cmp(&b.created_at));
        for p in &mut out {
            p.id = *next_id;
            *next_id += 1;
        }
        Ok(out)
    }
}
