use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ledger::{MetricsLedger, PacketRecord};
use super::{Decision, DecisionQuery, HopFeedback, NetworkView, Observation, RoutingPolicy, SimConfig, SimError};
use crate::channel::{
    ground_snr, isl_snr, rate_from_snr, GroundDirection, HopLatency, SPEED_OF_LIGHT_M_S,
};
use crate::learning::{encode_state, LocalView, StepOutcome, Terminal, ACTIONS};
use crate::math::Vec3;
use crate::orbital::{attach, Constellation, ConstellationSnapshot, Direction, Gateway};
use crate::queueing::{Departure, EnqueueOutcome, LinkQueue, QueueEntry};
use crate::resilience::{
    apply_failures, hop_outage, hop_outage_from_mean, link_resilience_feature, EffectiveTopology, FailureEvent,
    FailureTarget,
    QueueAggregation, ResilienceWeights,
};
use crate::traffic::{DropReason, Endpoint, HopRecord, Packet, TrafficGenerator};

/// Satellite-to-satellite packets between uniformly drawn distinct
/// satellites, used for training and probing without ground legs.
#[derive(Debug, Clone)]
pub struct SatelliteTraffic {
    pub packets_per_s: f64,
    rng: ChaCha8Rng,
}

impl SatelliteTraffic {
    pub fn new(packets_per_s: f64, seed: u64) -> Self {
        Self { packets_per_s, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// One event in a step, in processing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Generated { packet: u64, time: f64 },
    Forwarded { packet: u64, from: usize, to: Direction, time: f64 },
    Delivered { packet: u64, time: f64 },
    Dropped { packet: u64, reason: DropReason, time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Place {
    Satellite(usize),
    /// A looped-back packet re-entering the same satellite.
    Loop(usize),
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    time: f64,
    seq: u64,
    packet: u64,
    place: Place,
}

impl PartialEq for Arrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Arrival {}
impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingHop {
    from: usize,
    distance_before_km: f64,
    link_resilience: f64,
    queueing_delay_s: f64,
}

#[derive(Debug, Clone)]
struct Transit {
    packet: Packet,
    pending: Option<PendingHop>,
    links: BTreeSet<(usize, usize)>,
    survive: f64,
    queue_term: Option<f64>,
    link_feature_sum: f64,
    link_count: usize,
}

/// Queue a departure came from.
#[derive(Debug, Clone, Copy)]
enum QueueRef {
    Isl(usize, usize),
    Down(usize),
    Up(usize),
}

pub struct Engine {
    cfg: SimConfig,
    constellation: Constellation,
    gateways: Vec<Gateway>,
    failures: Vec<FailureEvent>,
    background: Option<TrafficGenerator>,
    probes: Option<TrafficGenerator>,
    satellite_traffic: Option<SatelliteTraffic>,
    start: f64,
    now: f64,
    steps: u64,
    next_snapshot_at: f64,
    snapshot: ConstellationSnapshot,
    topology: EffectiveTopology,
    active_failures: Vec<bool>,
    attachment: Vec<Option<usize>>,
    isl: Vec<[Option<LinkQueue>; ACTIONS]>,
    isl_rate: Vec<[f64; ACTIONS]>,
    isl_outage: Vec<[f64; ACTIONS]>,
    downlink: Vec<LinkQueue>,
    uplink: Vec<LinkQueue>,
    ground_outage: (f64, f64),
    transits: BTreeMap<u64, Transit>,
    arrivals: BinaryHeap<Reverse<Arrival>>,
    seq: u64,
    next_id: u64,
    hop_limit: usize,
    keep_events: bool,
    events: Vec<Event>,
    ledger: MetricsLedger,
}

impl Engine {
    pub fn new(cfg: SimConfig, constellation: Constellation, gateways: Vec<Gateway>) -> Result<Self, SimError> {
        cfg.validate()?;
        for g in &gateways {
            g.validate()?;
        }
        let n = constellation.len();
        let p = constellation.params();
        let hop_limit = cfg.hop_limit.map_or(4 * (p.plane_count + p.sats_per_plane) as usize, |h| h as usize);
        let min_el = cfg.min_elevation_deg.to_radians();
        let snapshot = constellation.snapshot(&gateways, cfg.start_time_s, min_el);
        let topology = EffectiveTopology::unimpaired(&snapshot.isl_adjacency);
        let cap = cfg.queue_capacity_bits;
        let up_rate = rate_from_snr(ground_snr(&cfg.ground, GroundDirection::Uplink, 1.0)?, cfg.ground.bandwidth_hz);
        let down_rate = rate_from_snr(ground_snr(&cfg.ground, GroundDirection::Downlink, 1.0)?, cfg.ground.bandwidth_hz);
        let mk = |rate: f64| LinkQueue::new(cap, rate).expect("capacity checked");
        let isl = snapshot
            .isl_adjacency
            .iter()
            .map(|nbrs| core::array::from_fn(|k| nbrs[k].map(|_| mk(0.0))))
            .collect();
        let ground_outage = (
            hop_outage_from_mean(ground_snr(&cfg.ground, GroundDirection::Uplink, 1.0)?, &cfg.outage),
            hop_outage_from_mean(ground_snr(&cfg.ground, GroundDirection::Downlink, 1.0)?, &cfg.outage),
        );
        let mut engine = Self {
            constellation,
            failures: Vec::new(),
            background: None,
            probes: None,
            satellite_traffic: None,
            start: cfg.start_time_s,
            now: cfg.start_time_s,
            steps: 0,
            next_snapshot_at: cfg.start_time_s,
            attachment: snapshot.gateway_attachment.clone(),
            topology,
            active_failures: Vec::new(),
            isl,
            isl_rate: alloc::vec![[0.0; ACTIONS]; n],
            isl_outage: alloc::vec![[1.0; ACTIONS]; n],
            downlink: (0..n).map(|_| mk(down_rate)).collect(),
            uplink: gateways.iter().map(|_| mk(up_rate)).collect(),
            ground_outage,
            snapshot,
            gateways,
            transits: BTreeMap::new(),
            arrivals: BinaryHeap::new(),
            seq: 0,
            next_id: 0,
            hop_limit,
            keep_events: false,
            events: Vec::new(),
            ledger: MetricsLedger::default(),
            cfg,
        };
        engine.refresh_snapshot()?;
        Ok(engine)
    }

    pub fn with_background(mut self, generator: TrafficGenerator) -> Self {
        self.background = Some(generator);
        self
    }

    /// Foreground traffic whose packets are tagged for measurement.
    pub fn with_probes(mut self, generator: TrafficGenerator) -> Self {
        self.probes = Some(generator);
        self
    }

    pub fn with_satellite_traffic(mut self, traffic: SatelliteTraffic) -> Self {
        self.satellite_traffic = Some(traffic);
        self
    }

    pub fn with_failures(mut self, schedule: Vec<FailureEvent>) -> Result<Self, SimError> {
        for ev in &schedule {
            ev.validate()?;
            match ev.target {
                FailureTarget::Satellite(id) => {
                    self.constellation.index_of(id)?;
                }
                FailureTarget::Link(a, b) => {
                    self.constellation.index_of(a)?;
                    self.constellation.index_of(b)?;
                }
            }
        }
        self.active_failures = alloc::vec![false; schedule.len()];
        self.failures = schedule;
        Ok(self)
    }

    /// Record per-step [`Event`]s (off by default).
    pub fn record_events(mut self, on: bool) -> Self {
        self.keep_events = on;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn end_time(&self) -> f64 {
        self.start + self.cfg.horizon_s
    }

    pub fn snapshot(&self) -> &ConstellationSnapshot {
        &self.snapshot
    }

    pub fn topology(&self) -> &EffectiveTopology {
        &self.topology
    }

    pub fn ledger(&self) -> &MetricsLedger {
        &self.ledger
    }

    pub fn in_flight(&self) -> usize {
        self.transits.len()
    }

    pub fn hop_limit(&self) -> usize {
        self.hop_limit
    }

    /// The encoded local state a learned policy would see at `sat`.
    pub fn observation(&self, sat: usize, dst: Endpoint) -> Observation {
        self.observe(sat, dst)
    }

    /// ISL rate of `u → v` under the current snapshot.
    pub fn isl_rate(&self, u: usize, v: usize) -> Option<f64> {
        let k = self.snapshot.isl_adjacency[u].iter().position(|&x| x == Some(v))?;
        Some(self.isl_rate[u][k])
    }

    /// Add a packet created at `packet.created_at` (not before now). Its id
    /// is reassigned; the new id is returned.
    pub fn inject(&mut self, mut packet: Packet) -> Result<u64, SimError> {
        if packet.created_at < self.now {
            return Err(SimError::Config { field: "packet.created_at", reason: "must not precede the clock" });
        }
        packet.id = self.next_id;
        self.next_id += 1;
        let id = packet.id;
        self.admit(packet);
        Ok(id)
    }

    /// Run until the horizon or until the policy reports it is finished.
    pub fn run(&mut self, policy: &mut dyn RoutingPolicy) -> Result<(), SimError> {
        while self.now < self.end_time() - 0.5 * self.cfg.dt_s && !policy.finished() {
            self.step(policy)?;
        }
        Ok(())
    }

    /// Close the run and hand over the ledger.
    pub fn finish(mut self, policy: &dyn RoutingPolicy) -> MetricsLedger {
        self.ledger.policy = Some(policy.report());
        self.ledger
    }

    pub fn step(&mut self, policy: &mut dyn RoutingPolicy) -> Result<Vec<Event>, SimError> {
        if self.now >= self.end_time() - 0.5 * self.cfg.dt_s {
            return Err(SimError::HorizonReached);
        }
        let dt = self.cfg.dt_s;
        let now = self.now;
        let end = now + dt;

        if now >= self.next_snapshot_at - 1e-9 {
            self.refresh_snapshot()?;
        }
        self.apply_failure_schedule(now, policy)?;

        policy.on_step(&self.view(now));

        self.generate(now, dt)?;

        while let Some(Reverse(a)) = self.arrivals.peek().copied() {
            if a.time >= end {
                break;
            }
            self.arrivals.pop();
            match a.place {
                Place::Satellite(v) => self.arrive(a.packet, v, a.time, policy)?,
                Place::Loop(v) => self.arrive(a.packet, v, a.time, policy)?,
            }
        }

        self.serve(now, dt, policy)?;

        self.steps += 1;
        self.now = self.start + self.steps as f64 * dt;
        self.ledger.steps = self.steps;
        if self.cfg.check_conservation {
            self.check_conservation()?;
        }
        // Includes events from packets injected since the last step.
        Ok(core::mem::take(&mut self.events))
    }

    fn view(&self, now: f64) -> NetworkView<'_> {
        NetworkView {
            now,
            constellation: &self.constellation,
            snapshot: &self.snapshot,
            topology: &self.topology,
            attachment: &self.attachment,
            isl_rate: &self.isl_rate,
            packet_bits: self.cfg.packet_bits,
        }
    }

    fn refresh_snapshot(&mut self) -> Result<(), SimError> {
        let t = self.now;
        self.snapshot = self.constellation.snapshot(&self.gateways, t, self.cfg.min_elevation_deg.to_radians());
        for u in 0..self.constellation.len() {
            for k in 0..ACTIONS {
                let (rate, outage) = match self.snapshot.isl_adjacency[u][k] {
                    Some(v) => {
                        let d = self.snapshot.link_distance_km(u, v);
                        let snr = isl_snr(&self.cfg.link, d, 1.0)?;
                        (rate_from_snr(snr, self.cfg.link.bandwidth_hz), hop_outage(&self.cfg.link, d, &self.cfg.outage)?)
                    }
                    None => (0.0, 1.0),
                };
                self.isl_rate[u][k] = rate;
                self.isl_outage[u][k] = outage;
                if let Some(q) = self.isl[u][k].as_mut() {
                    q.set_served_rate(rate);
                }
            }
        }
        self.update_attachments();
        self.next_snapshot_at = self.snapshot.time + self.cfg.snapshot_interval_s;
        Ok(())
    }

    fn update_attachments(&mut self) {
        let up = &self.topology.satellite_up;
        let min_el = self.snapshot.min_elevation_rad;
        self.attachment = self
            .snapshot
            .gateway_positions
            .iter()
            .map(|&g| attach(&self.snapshot.positions, g, min_el, |i| up[i]))
            .collect();
    }

    fn apply_failure_schedule(&mut self, now: f64, policy: &mut dyn RoutingPolicy) -> Result<(), SimError> {
        if self.failures.is_empty() {
            return Ok(());
        }
        let active: Vec<bool> = self.failures.iter().map(|e| e.is_active(now)).collect();
        if active == self.active_failures {
            return Ok(());
        }
        self.active_failures = active;
        self.topology = apply_failures(&self.constellation, &self.snapshot.isl_adjacency, &self.failures, now)?;
        self.update_attachments();
        // Everything queued on a link that is now gone is lost.
        for u in 0..self.isl.len() {
            for k in 0..ACTIONS {
                let gone = self.topology.isl[u][k].is_none();
                if let Some(q) = self.isl[u][k].as_mut().filter(|q| gone && !q.is_empty()) {
                    let lost = q.flush();
                    self.ledger.link_failure_flushes += 1;
                    for e in lost {
                        self.drop_packet(e.packet, DropReason::LinkFailure, now, policy);
                    }
                }
            }
            if !self.topology.satellite_up[u] && !self.downlink[u].is_empty() {
                for e in self.downlink[u].flush() {
                    self.drop_packet(e.packet, DropReason::LinkFailure, now, policy);
                }
            }
        }
        Ok(())
    }

    fn generate(&mut self, now: f64, dt: f64) -> Result<(), SimError> {
        let mut fresh = Vec::new();
        if let Some(g) = self.background.as_mut() {
            fresh.extend(g.generate(now, dt, &mut self.next_id)?);
        }
        if let Some(g) = self.probes.as_mut() {
            let mut tagged = g.generate(now, dt, &mut self.next_id)?;
            for p in &mut tagged {
                p.tagged = true;
            }
            fresh.extend(tagged);
        }
        if let Some(st) = self.satellite_traffic.as_mut() {
            let n = self.constellation.len();
            let mean = st.packets_per_s * dt;
            if mean > 0.0 && n > 1 {
                let count = rand_distr::Distribution::sample(
                    &rand_distr::Poisson::new(mean).expect("positive mean"),
                    &mut st.rng,
                ) as u64;
                for _ in 0..count {
                    let src = st.rng.random_range(0..n);
                    let mut dst = st.rng.random_range(0..n - 1);
                    if dst >= src {
                        dst += 1;
                    }
                    let t = now + st.rng.random::<f64>() * dt;
                    let mut p = Packet::new(self.next_id, self.cfg.packet_bits, Endpoint::Satellite(src), Endpoint::Satellite(dst), t);
                    p.tagged = true;
                    self.next_id += 1;
                    fresh.push(p);
                }
            }
        }
        fresh.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.id.cmp(&b.id)));
        for p in fresh {
            self.admit(p);
        }
        Ok(())
    }

    fn admit(&mut self, packet: Packet) {
        let id = packet.id;
        let t = packet.created_at;
        self.ledger.generated += 1;
        self.push_event(Event::Generated { packet: id, time: t });
        let src = packet.src;
        self.transits.insert(
            id,
            Transit {
                packet,
                pending: None,
                links: BTreeSet::new(),
                survive: 1.0,
                queue_term: None,
                link_feature_sum: 0.0,
                link_count: 0,
            },
        );
        match src {
            Endpoint::Gateway(g) => {
                if self.attachment.get(g).copied().flatten().is_none() {
                    self.finish_drop(id, DropReason::NoCoverage, t);
                    return;
                }
                let size = self.transits[&id].packet.size_bits;
                match self.uplink[g].enqueue(QueueEntry { packet: id, size_bits: size, enqueued_at: t }) {
                    Ok(EnqueueOutcome::Accepted) => {}
                    _ => self.finish_drop(id, DropReason::QueueOverflow, t),
                }
            }
            Endpoint::Satellite(s) => self.schedule(t, id, Place::Satellite(s)),
        }
    }

    fn schedule(&mut self, time: f64, packet: u64, place: Place) {
        self.seq += 1;
        self.arrivals.push(Reverse(Arrival { time, seq: self.seq, packet, place }));
    }

    fn push_event(&mut self, e: Event) {
        if self.keep_events {
            self.events.push(e);
        }
    }

    fn destination_point(&self, dst: Endpoint) -> Vec3 {
        match dst {
            Endpoint::Gateway(g) => self.snapshot.gateway_positions[g],
            Endpoint::Satellite(s) => self.snapshot.positions[s],
        }
    }

    fn distance_to_km(&self, sat: usize, point: Vec3) -> f64 {
        self.snapshot.positions[sat].central_angle(point) * self.constellation.radius_km()
    }

    fn node_occupancy(&self, sat: usize) -> f64 {
        let mut q = self.downlink[sat].occupancy().0;
        for lq in self.isl[sat].iter().flatten() {
            q = q.max(lq.occupancy().0);
        }
        q
    }

    fn link_feature(&self, u: usize, k: usize) -> f64 {
        match self.topology.isl[u][k] {
            Some(v) => link_resilience_feature(
                self.isl_outage[u][k],
                false,
                self.node_occupancy(u),
                self.node_occupancy(v),
                self.cfg.resilience,
            ),
            None => 0.0,
        }
    }

    fn mask(&self, sat: usize) -> [bool; ACTIONS] {
        core::array::from_fn(|k| self.topology.isl[sat][k].is_some())
    }

    fn observe(&self, sat: usize, dst: Endpoint) -> Observation {
        let mask = self.mask(sat);
        let view = LocalView {
            position: self.snapshot.positions[sat],
            neighbors: core::array::from_fn(|k| self.topology.isl[sat][k].map(|v| self.snapshot.positions[v])),
            occupancy: core::array::from_fn(|k| self.isl[sat][k].as_ref().map_or(1.0, |q| q.occupancy().0)),
            resilience: core::array::from_fn(|k| self.link_feature(sat, k)),
            destination: self.destination_point(dst),
            scale_km: self.constellation.radius_km(),
        };
        Observation { state: encode_state(&view), mask }
    }

    /// Close the packet's outstanding decision, if any.
    fn close_pending(
        &mut self,
        id: u64,
        at: Option<usize>,
        terminal: Option<Terminal>,
        next: Option<&Observation>,
        policy: &mut dyn RoutingPolicy,
    ) {
        let Some(tr) = self.transits.get_mut(&id) else { return };
        let Some(p) = tr.pending.take() else { return };
        let dst = tr.packet.dst;
        let revisit = at.is_some_and(|v| tr.packet.hop_trace[..tr.packet.hop_trace.len().saturating_sub(1)].contains(&v));
        let point = self.destination_point(dst);
        let after = at.map_or(p.distance_before_km, |v| self.distance_to_km(v, point));
        let outcome = StepOutcome {
            queueing_delay_s: p.queueing_delay_s,
            distance_before_km: p.distance_before_km,
            distance_after_km: after,
            revisit,
            link_resilience: p.link_resilience,
            terminal,
        };
        policy.feedback(&HopFeedback { packet: id, agent: p.from, outcome, next });
    }

    fn drop_packet(&mut self, id: u64, reason: DropReason, t: f64, policy: &mut dyn RoutingPolicy) {
        self.close_pending(id, None, Some(Terminal::Dropped), None, policy);
        self.finish_drop(id, reason, t);
    }

    fn finish_drop(&mut self, id: u64, reason: DropReason, t: f64) {
        let Some(mut tr) = self.transits.remove(&id) else { return };
        tr.packet.drop_reason = Some(reason);
        self.ledger.dropped += 1;
        *self.ledger.drops.entry(reason).or_default() += 1;
        self.push_event(Event::Dropped { packet: id, reason, time: t });
        self.ledger.packets.push(PacketRecord { packet: tr.packet, path_outage: None, resilience_path: None, resilience_link: None });
    }

    fn finish_delivery(&mut self, id: u64, t: f64) {
        let Some(mut tr) = self.transits.remove(&id) else { return };
        tr.packet.delivered_at = Some(t);
        let ground = match (tr.packet.src, tr.packet.dst) {
            (Endpoint::Gateway(_), Endpoint::Gateway(_)) => (1.0 - self.ground_outage.0) * (1.0 - self.ground_outage.1),
            (Endpoint::Gateway(_), _) => 1.0 - self.ground_outage.0,
            (_, Endpoint::Gateway(_)) => 1.0 - self.ground_outage.1,
            _ => 1.0,
        };
        let outage = 1.0 - ground * tr.survive;
        let w: ResilienceWeights = self.cfg.resilience;
        let resilience_path = w.outage * (1.0 - outage) + w.queue * tr.queue_term.unwrap_or(0.0);
        let resilience_link = (tr.link_count > 0).then(|| tr.link_feature_sum / tr.link_count as f64);
        self.ledger.delivered += 1;
        self.push_event(Event::Delivered { packet: id, time: t });
        self.ledger.packets.push(PacketRecord {
            packet: tr.packet,
            path_outage: Some(outage),
            resilience_path: Some(resilience_path.clamp(0.0, 1.0)),
            resilience_link,
        });
    }

    fn arrive(&mut self, id: u64, v: usize, t: f64, policy: &mut dyn RoutingPolicy) -> Result<(), SimError> {
        let Some(tr) = self.transits.get_mut(&id) else { return Ok(()) };
        tr.packet.hop_trace.push(v);
        let dst = tr.packet.dst;
        let isl_hops = tr.packet.isl_hops();

        if !self.topology.satellite_up[v] {
            self.drop_packet(id, DropReason::LinkFailure, t, policy);
            return Ok(());
        }
        let target = match dst {
            Endpoint::Gateway(g) => match self.attachment[g] {
                Some(a) => a,
                None => {
                    self.close_pending(id, Some(v), Some(Terminal::Dropped), None, policy);
                    self.finish_drop(id, DropReason::NoCoverage, t);
                    return Ok(());
                }
            },
            Endpoint::Satellite(s) => s,
        };
        if v == target {
            self.close_pending(id, Some(v), Some(Terminal::Delivered), None, policy);
            match dst {
                Endpoint::Satellite(_) => self.finish_delivery(id, t),
                Endpoint::Gateway(_) => {
                    let size = self.transits[&id].packet.size_bits;
                    match self.downlink[v].enqueue(QueueEntry { packet: id, size_bits: size, enqueued_at: t }) {
                        Ok(EnqueueOutcome::Accepted) => {}
                        _ => self.finish_drop(id, DropReason::QueueOverflow, t),
                    }
                }
            }
            return Ok(());
        }
        if isl_hops >= self.hop_limit {
            self.close_pending(id, Some(v), Some(Terminal::Dropped), None, policy);
            self.finish_drop(id, DropReason::HopLimit, t);
            return Ok(());
        }
        let mask = self.mask(v);
        if !mask.iter().any(|&m| m) {
            self.close_pending(id, Some(v), Some(Terminal::Dropped), None, policy);
            self.finish_drop(id, DropReason::NoValidAction, t);
            return Ok(());
        }
        let obs = policy.needs_observation().then(|| self.observe(v, dst));
        self.close_pending(id, Some(v), None, obs.as_ref(), policy);

        let query = DecisionQuery { packet: id, sat: v, dst, target, mask, observation: obs.as_ref(), isl_hops };
        let decision = policy.decide(&query, &self.view(t));
        match decision {
            Decision::Forward(d) if mask[d.index()] => {
                let k = d.index();
                let point = self.destination_point(dst);
                let pending = PendingHop {
                    from: v,
                    distance_before_km: self.distance_to_km(v, point),
                    link_resilience: self.link_feature(v, k),
                    queueing_delay_s: 0.0,
                };
                let tr = self.transits.get_mut(&id).expect("in flight");
                tr.pending = Some(pending);
                let size = tr.packet.size_bits;
                let q = self.isl[v][k].as_mut().expect("live link has a queue");
                match q.enqueue(QueueEntry { packet: id, size_bits: size, enqueued_at: t }) {
                    Ok(EnqueueOutcome::Accepted) => self.push_event(Event::Forwarded { packet: id, from: v, to: d, time: t }),
                    _ => self.drop_packet(id, DropReason::QueueOverflow, t, policy),
                }
            }
            Decision::Loopback => {
                let tr = self.transits.get_mut(&id).expect("in flight");
                tr.packet.hops.push(HopRecord {
                    from: Endpoint::Satellite(v),
                    to: Endpoint::Satellite(v),
                    latency: HopLatency::new(0.0, 0.0, 0.0),
                });
                self.schedule(t, id, Place::Loop(v));
            }
            _ => self.finish_drop(id, DropReason::NoValidAction, t),
        }
        Ok(())
    }

    fn serve(&mut self, now: f64, dt: f64, policy: &mut dyn RoutingPolicy) -> Result<(), SimError> {
        let mut departures: Vec<(QueueRef, Departure)> = Vec::new();
        for g in 0..self.uplink.len() {
            departures.extend(self.uplink[g].service(now, dt).into_iter().map(|d| (QueueRef::Up(g), d)));
        }
        for u in 0..self.isl.len() {
            for k in 0..ACTIONS {
                if let Some(q) = self.isl[u][k].as_mut() {
                    departures.extend(q.service(now, dt).into_iter().map(|d| (QueueRef::Isl(u, k), d)));
                }
            }
            departures.extend(self.downlink[u].service(now, dt).into_iter().map(|d| (QueueRef::Down(u), d)));
        }
        for (from, dep) in departures {
            self.depart(from, dep, policy)?;
        }
        Ok(())
    }

    fn depart(&mut self, from: QueueRef, dep: Departure, policy: &mut dyn RoutingPolicy) -> Result<(), SimError> {
        let id = dep.entry.packet;
        let queueing = dep.started_at - dep.entry.enqueued_at;
        let transmission = dep.departed_at - dep.started_at;
        let c_km = SPEED_OF_LIGHT_M_S / 1e3;
        match from {
            QueueRef::Up(g) => {
                let Some(a) = self.attachment[g] else {
                    self.drop_packet(id, DropReason::NoCoverage, dep.departed_at, policy);
                    return Ok(());
                };
                let prop = self.snapshot.slant_range_km(g, a) / c_km;
                let tr = self.transits.get_mut(&id).expect("queued packet in flight");
                tr.packet.hops.push(HopRecord {
                    from: Endpoint::Gateway(g),
                    to: Endpoint::Satellite(a),
                    latency: HopLatency::new(prop, transmission, queueing),
                });
                self.schedule(dep.departed_at + prop, id, Place::Satellite(a));
            }
            QueueRef::Isl(u, k) => {
                let Some(v) = self.topology.isl[u][k] else {
                    return Err(SimError::PhantomLink { packet: id, from: u, to: usize::MAX, time: dep.departed_at });
                };
                let prop = self.snapshot.link_distance_km(u, v) / c_km;
                let feature = self.link_feature(u, k);
                let q_pair = (1.0 - self.node_occupancy(u), 1.0 - self.node_occupancy(v));
                let p_hop = self.isl_outage[u][k];
                let agg = self.cfg.aggregation;
                let tr = self.transits.get_mut(&id).expect("queued packet in flight");
                if let Some(p) = tr.pending.as_mut() {
                    p.queueing_delay_s = queueing;
                }
                if tr.links.insert((u, v)) {
                    tr.survive *= 1.0 - p_hop;
                }
                let term = match agg {
                    QueueAggregation::Max => q_pair.0.max(q_pair.1),
                    QueueAggregation::Bottleneck => q_pair.0.min(q_pair.1),
                };
                tr.queue_term = Some(match (tr.queue_term, agg) {
                    (None, _) => term,
                    (Some(x), QueueAggregation::Max) => x.max(term),
                    (Some(x), QueueAggregation::Bottleneck) => x.min(term),
                });
                tr.link_feature_sum += feature;
                tr.link_count += 1;
                tr.packet.hops.push(HopRecord {
                    from: Endpoint::Satellite(u),
                    to: Endpoint::Satellite(v),
                    latency: HopLatency::new(prop, transmission, queueing),
                });
                self.schedule(dep.departed_at + prop, id, Place::Satellite(v));
            }
            QueueRef::Down(v) => {
                let tr = self.transits.get_mut(&id).expect("queued packet in flight");
                let Endpoint::Gateway(g) = tr.packet.dst else {
                    unreachable!("only gateway-bound packets use the downlink")
                };
                let prop = self.snapshot.slant_range_km(g, v) / c_km;
                tr.packet.hops.push(HopRecord {
                    from: Endpoint::Satellite(v),
                    to: Endpoint::Gateway(g),
                    latency: HopLatency::new(prop, transmission, queueing),
                });
                self.finish_delivery(id, dep.departed_at + prop);
            }
        }
        Ok(())
    }

    fn check_conservation(&mut self) -> Result<(), SimError> {
        self.ledger.conservation_checks += 1;
        let l = &self.ledger;
        let in_flight = self.transits.len() as u64;
        if l.generated != l.delivered + l.dropped + in_flight {
            return Err(SimError::Conservation {
                time: self.now,
                generated: l.generated,
                delivered: l.delivered,
                dropped: l.dropped,
                in_flight,
            });
        }
        Ok(())
    }
}

/// Greedy geometric fallback: the live neighbour closest to `point`.
pub fn closest_neighbor(view: &NetworkView<'_>, sat: usize, point: Vec3) -> Option<Direction> {
    let mut best: Option<(Direction, f64)> = None;
    for d in Direction::ALL {
        if let Some(v) = view.topology.isl[sat][d.index()] {
            let a = view.snapshot.positions[v].central_angle(point);
            if best.map_or(true, |(_, b)| a < b) {
                best = Some((d, a));
            }
        }
    }
    best.map(|(d, _)| d)
}
