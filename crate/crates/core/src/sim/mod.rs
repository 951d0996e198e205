//! Fixed-step discrete-event engine, routing policies and run metrics.
//!
//! Each [`Engine::step`] advances `dt` in a fixed order:
//!
//! 1. refresh the constellation snapshot when due (positions, link rates,
//!    per-link outage);
//! 2. apply the failure schedule, flushing queues on links that went down;
//! 3. let the policy run its per-step hook (e.g. table recomputation);
//! 4. generate traffic for `[now, now + dt)` into gateway uplink queues;
//! 5. process arrivals in time order: deliver, drop, or ask the policy for
//!    a next hop and enqueue;
//! 6. serve every queue for `dt` with exact intra-step timestamps and
//!    schedule the resulting arrivals;
//! 7. check packet conservation.

pub mod engine;
pub mod ledger;
pub mod policy;
pub mod scenario;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::channel::{GroundBudget, LinkBudget, DEFAULT_PACKET_BITS};
use crate::learning::{RoutingState, ACTIONS};
use crate::learning::StepOutcome;
use crate::orbital::{Constellation, ConstellationSnapshot, Direction};
use crate::resilience::{EffectiveTopology, OutageParams, QueueAggregation, ResilienceWeights};
use crate::traffic::Endpoint;

pub use engine::Engine;
pub use ledger::{summarize_resilience, MetricsLedger, PacketRecord, ResiliencePoint, RunSummary};
pub use policy::{CostModel, DijkstraConfig, DijkstraPolicy, LearnedPolicy, LoopbackAdversary, PolicyReport};
pub use train::{greedy_path, train_global, train_sarsa, CurvePoint, TrainError, TrainedModel, TrainingEnv};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setting `{field}`: {reason}")]
    Config { field: &'static str, reason: &'static str },
    #[error("packet conservation broken at t={time}: generated {generated} != delivered {delivered} + dropped {dropped} + in flight {in_flight}")]
    Conservation { time: f64, generated: u64, delivered: u64, dropped: u64, in_flight: u64 },
    #[error("packet {packet} left on link {from}->{to}, absent from the effective topology at t={time}")]
    PhantomLink { packet: u64, from: usize, to: usize, time: f64 },
    #[error("horizon reached")]
    HorizonReached,
    #[error(transparent)]
    Orbital(#[from] crate::orbital::OrbitalError),
    #[error(transparent)]
    Traffic(#[from] crate::traffic::TrafficError),
    #[error(transparent)]
    Resilience(#[from] crate::resilience::ResilienceError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_s: f64,
    /// Simulated span after `start_time_s`.
    pub horizon_s: f64,
    /// Orbital epoch offset of the first step.
    pub start_time_s: f64,
    pub snapshot_interval_s: f64,
    pub min_elevation_deg: f64,
    pub queue_capacity_bits: u64,
    pub packet_bits: u64,
    /// ISL hops before a packet is dropped; `None` means `4·(planes + slots)`.
    pub hop_limit: Option<u32>,
    pub link: LinkBudget,
    pub ground: GroundBudget,
    pub outage: OutageParams,
    pub resilience: ResilienceWeights,
    pub aggregation: QueueAggregation,
    pub check_conservation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_s: 1e-3,
            horizon_s: 10.0,
            start_time_s: 0.0,
            snapshot_interval_s: 1.0,
            min_elevation_deg: 10.0,
            queue_capacity_bits: 1_000_000_000,
            packet_bits: DEFAULT_PACKET_BITS,
            hop_limit: None,
            link: LinkBudget::default(),
            ground: GroundBudget::default(),
            outage: OutageParams::default(),
            resilience: ResilienceWeights::default(),
            aggregation: QueueAggregation::Max,
            check_conservation: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, reason| Err(SimError::Config { field, reason });
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return bad("dt_s", "must be positive");
        }
        if !(self.horizon_s >= 0.0 && self.horizon_s.is_finite()) {
            return bad("horizon_s", "must be non-negative");
        }
        if !(self.snapshot_interval_s >= self.dt_s) {
            return bad("snapshot_interval_s", "must be at least dt_s");
        }
        if !(-90.0..=90.0).contains(&self.min_elevation_deg) {
            return bad("min_elevation_deg", "must lie in [-90, 90]");
        }
        if self.queue_capacity_bits == 0 {
            return bad("queue_capacity_bits", "must be positive");
        }
        if self.packet_bits == 0 {
            return bad("packet_bits", "must be positive");
        }
        if self.packet_bits > self.queue_capacity_bits {
            return bad("packet_bits", "must fit in one queue");
        }
        self.link.validate()?;
        self.ground.validate()?;
        self.resilience.validate()?;
        Ok(())
    }
}

/// What a learned policy sees at a satellite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub state: RoutingState,
    pub mask: [bool; ACTIONS],
}

/// Read-only engine state offered to policies.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a> {
    pub now: f64,
    pub constellation: &'a Constellation,
    pub snapshot: &'a ConstellationSnapshot,
    pub topology: &'a EffectiveTopology,
    /// Current gateway attachments, honouring satellite failures.
    pub attachment: &'a [Option<usize>],
    /// ISL rates by satellite and direction, bits/s (0 where no link).
    pub isl_rate: &'a [[f64; ACTIONS]],
    pub packet_bits: u64,
}

impl NetworkView<'_> {
    /// Propagation plus transmission time of ISL `u → v`.
    pub fn isl_latency(&self, u: usize, v: usize) -> f64 {
        let d = self.snapshot.link_distance_km(u, v);
        let rate = self.topology.isl[u]
            .iter()
            .position(|&x| x == Some(v))
            .map_or(0.0, |k| self.isl_rate[u][k]);
        let tx = if rate > 0.0 { self.packet_bits as f64 / rate } else { f64::INFINITY };
        d * 1e3 / crate::channel::SPEED_OF_LIGHT_M_S + tx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecisionQuery<'a> {
    pub packet: u64,
    pub sat: usize,
    pub dst: Endpoint,
    /// Satellite the packet must reach (the destination's attachment).
    pub target: usize,
    /// Directions with a live link.
    pub mask: [bool; ACTIONS],
    pub observation: Option<&'a Observation>,
    pub isl_hops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Forward(Direction),
    /// Hand the packet back to the same satellite. Only adversarial test
    /// policies do this; it shows up as an `i → i` hop.
    Loopback,
    Drop,
}

/// Closes one forwarding decision.
#[derive(Debug, Clone, Copy)]
pub struct HopFeedback<'a> {
    pub packet: u64,
    /// Satellite that made the decision.
    pub agent: usize,
    pub outcome: StepOutcome,
    /// Observation at the next satellite, `None` when terminal.
    pub next: Option<&'a Observation>,
}

pub trait RoutingPolicy {
    fn name(&self) -> &str;

    fn on_step(&mut self, _view: &NetworkView<'_>) {}

    /// Whether decisions need the encoded local state.
    fn needs_observation(&self) -> bool {
        false
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, view: &NetworkView<'_>) -> Decision;

    fn feedback(&mut self, _fb: &HopFeedback<'_>) {}

    /// Stop the run early (training budgets).
    fn finished(&self) -> bool {
        false
    }

    fn report(&self) -> PolicyReport;
}
