use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::engine::closest_neighbor;
use super::{Decision, DecisionQuery, HopFeedback, NetworkView, RoutingPolicy};
use crate::channel::SPEED_OF_LIGHT_M_S;
use crate::learning::nn::masked_argmax;
use crate::learning::{reward, AgentPool, RewardWeights, RoutingState, Transition, ACTIONS};
use crate::orbital::Direction;
use crate::routing::{
    dijkstra_tables, isl_graph, next_hops_to, path_change_fraction, shortest_distances, OpCount, RoutingTable,
};
use crate::traffic::Endpoint;

/// Converts counted work into modeled seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// One Dijkstra basic operation (heap push/pop or relaxation).
    pub seconds_per_op: f64,
    /// One floating-point operation of network inference.
    pub seconds_per_flop: f64,
    /// Rate of the control channel that uploads routing tables.
    pub control_rate_bps: f64,
    /// Size of one disseminated table entry.
    pub entry_bits: u64,
    /// Gateway that computes and uploads tables.
    pub control_gateway: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            seconds_per_op: 1e-8,
            seconds_per_flop: 1e-9,
            control_rate_bps: 1e8,
            entry_bits: 64,
            control_gateway: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathChange {
    pub time: f64,
    pub percent: f64,
}

/// What a policy did during a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyReport {
    pub name: String,
    pub decisions: u64,
    pub recomputations: u64,
    pub ops: u64,
    pub flops: u64,
    pub table_bits: u64,
    /// Modeled table upload time summed over recomputations.
    pub dissemination_s: f64,
    /// Modeled aggregate decision-making time.
    pub modeled_cost_s: f64,
    pub path_changes: Vec<PathChange>,
    /// Decisions where the table entry no longer matched the topology.
    pub stale_routes: u64,
    pub online_updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DijkstraConfig {
    pub recalc_interval_s: f64,
    pub cost: CostModel,
}

impl Default for DijkstraConfig {
    fn default() -> Self {
        Self { recalc_interval_s: 1.0, cost: CostModel::default() }
    }
}

/// Centrally computed minimum-latency tables, refreshed every
/// `recalc_interval_s` and followed as-is in between.
#[derive(Debug, Clone)]
pub struct DijkstraPolicy {
    pub config: DijkstraConfig,
    table: Option<RoutingTable>,
    next_recalc: f64,
    /// Per-satellite-target next hops for satellite-addressed packets.
    graph: Option<crate::routing::Graph>,
    sat_hops: BTreeMap<usize, Vec<Option<usize>>>,
    report: PolicyReport,
}

impl DijkstraPolicy {
    pub fn new(config: DijkstraConfig) -> Self {
        Self {
            config,
            table: None,
            next_recalc: f64::NEG_INFINITY,
            graph: None,
            sat_hops: BTreeMap::new(),
            report: PolicyReport { name: String::from("dijkstra"), ..PolicyReport::default() },
        }
    }

    pub fn table(&self) -> Option<&RoutingTable> {
        self.table.as_ref()
    }

    fn charge_ops(&mut self, ops: u64) {
        self.report.ops += ops;
        self.report.modeled_cost_s += ops as f64 * self.config.cost.seconds_per_op;
    }

    fn recompute(&mut self, view: &NetworkView<'_>) {
        let mut ops = OpCount::default();
        let table = dijkstra_tables(
            view.topology,
            view.attachment,
            |u, v| view.isl_latency(u, v),
            view.now,
            self.config.cost.entry_bits,
            &mut ops,
        );
        self.charge_ops(ops.0);

        let upload = self.dissemination_s(view, &table);
        self.report.dissemination_s += upload;
        self.report.modeled_cost_s += upload;
        self.report.table_bits += table.size_bits();

        if let Some(prev) = &self.table {
            self.report.path_changes.push(PathChange { time: view.now, percent: path_change_fraction(&table, prev) });
        }
        self.report.recomputations += 1;
        self.table = Some(table);
        self.graph = None;
        self.sat_hops.clear();
    }

    /// Every satellite's rows cross the control uplink and then the ISL
    /// mesh from the control gateway's attachment; each satellite's upload
    /// and propagation time is charged in full.
    fn dissemination_s(&self, view: &NetworkView<'_>, table: &RoutingTable) -> f64 {
        let cost = self.config.cost;
        let uplink = core::iter::once(cost.control_gateway)
            .chain(0..view.attachment.len())
            .find_map(|g| view.attachment.get(g).copied().flatten().map(|s| (g, s)));
        let reach = uplink.map(|(g, attach)| {
            let ground = view.snapshot.slant_range_km(g, attach) * 1e3 / SPEED_OF_LIGHT_M_S;
            let graph = isl_graph(view.topology, |u, v| view.snapshot.link_distance_km(u, v) * 1e3 / SPEED_OF_LIGHT_M_S);
            let mut ops = OpCount::default();
            let d = shortest_distances(&graph, attach, &mut ops);
            (ground, d)
        });
        let mut total = 0.0;
        for s in 0..table.satellites() {
            let rows = table.entries_for(s);
            if rows == 0 {
                continue;
            }
            total += (rows as u64 * cost.entry_bits) as f64 / cost.control_rate_bps;
            if let Some((ground, d)) = &reach {
                if d[s].is_finite() {
                    total += ground + d[s];
                }
            }
        }
        total
    }

    fn satellite_next_hop(&mut self, view: &NetworkView<'_>, sat: usize, target: usize) -> Option<usize> {
        if !self.sat_hops.contains_key(&target) {
            let graph = self.graph.get_or_insert_with(|| isl_graph(view.topology, |u, v| view.isl_latency(u, v)));
            let mut ops = OpCount::default();
            let dist = shortest_distances(&graph.reversed(), target, &mut ops);
            let hops = next_hops_to(graph, target, &dist);
            self.sat_hops.insert(target, hops);
            self.charge_ops(ops.0);
        }
        self.sat_hops[&target][sat]
    }

    fn fallback(&mut self, query: &DecisionQuery<'_>, view: &NetworkView<'_>) -> Decision {
        self.report.stale_routes += 1;
        let point = match query.dst {
            Endpoint::Gateway(g) => view.snapshot.gateway_positions[g],
            Endpoint::Satellite(s) => view.snapshot.positions[s],
        };
        closest_neighbor(view, query.sat, point).map_or(Decision::Drop, Decision::Forward)
    }
}

impl RoutingPolicy for DijkstraPolicy {
    fn name(&self) -> &str {
        &self.report.name
    }

    fn on_step(&mut self, view: &NetworkView<'_>) {
        if view.now >= self.next_recalc - 1e-9 {
            self.recompute(view);
            self.next_recalc = if self.next_recalc.is_finite() {
                self.next_recalc + self.config.recalc_interval_s
            } else {
                view.now + self.config.recalc_interval_s
            };
        }
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, view: &NetworkView<'_>) -> Decision {
        self.report.decisions += 1;
        // A table lookup is one operation.
        self.charge_ops(1);
        let dir = match query.dst {
            Endpoint::Gateway(g) => match self.table.as_ref().and_then(|t| t.get(query.sat, g)) {
                Some(a) => a.direction(),
                None => None,
            },
            Endpoint::Satellite(s) => self.satellite_next_hop(view, query.sat, s).and_then(|v| {
                let k = view.topology.isl[query.sat].iter().position(|&x| x == Some(v))?;
                Direction::from_index(k)
            }),
        };
        match dir {
            Some(d) if query.mask[d.index()] => Decision::Forward(d),
            // A missing, dead-link or premature deliver entry: the table is stale.
            _ => self.fallback(query, view),
        }
    }

    fn report(&self) -> PolicyReport {
        self.report.clone()
    }
}

/// A trained Q-network deployed on every satellite and acting greedily.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pool: AgentPool,
    cost: CostModel,
    reward: RewardWeights,
    flops_per_inference: u64,
    pending: BTreeMap<u64, (RoutingState, usize)>,
    report: PolicyReport,
}

impl LearnedPolicy {
    pub fn new(name: &str, pool: AgentPool, reward: RewardWeights, cost: CostModel) -> Self {
        let flops_per_inference = pool.global().inference_flops();
        Self {
            pool,
            cost,
            reward,
            flops_per_inference,
            pending: BTreeMap::new(),
            report: PolicyReport { name: String::from(name), ..PolicyReport::default() },
        }
    }

    pub fn pool(&self) -> &AgentPool {
        &self.pool
    }

    pub fn into_pool(self) -> AgentPool {
        self.pool
    }
}

impl RoutingPolicy for LearnedPolicy {
    fn name(&self) -> &str {
        &self.report.name
    }

    fn needs_observation(&self) -> bool {
        true
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, _view: &NetworkView<'_>) -> Decision {
        let Some(obs) = query.observation else { return Decision::Drop };
        self.report.decisions += 1;
        self.report.flops += self.flops_per_inference;
        self.report.modeled_cost_s += self.flops_per_inference as f64 * self.cost.seconds_per_flop;
        let q = self.pool.network(query.sat).forward(obs.state.as_slice());
        let Some(a) = masked_argmax(&q, &obs.mask) else { return Decision::Drop };
        if self.pool.config.enabled {
            self.pending.insert(query.packet, (obs.state, a));
        }
        Direction::from_index(a).map_or(Decision::Drop, Decision::Forward)
    }

    fn feedback(&mut self, fb: &HopFeedback<'_>) {
        let Some((state, action)) = self.pending.remove(&fb.packet) else { return };
        let t = Transition {
            state,
            action,
            reward: reward(&self.reward, &fb.outcome),
            next_state: fb.next.map_or(RoutingState::ZERO, |o| o.state),
            next_mask: fb.next.map_or([false; ACTIONS], |o| o.mask),
            terminal: fb.outcome.terminal.is_some(),
        };
        if self.pool.observe(fb.agent, t).is_some() {
            self.report.online_updates += 1;
        }
    }

    fn report(&self) -> PolicyReport {
        self.report.clone()
    }
}

/// Wraps a policy and loops one chosen packet back onto its current
/// satellite once. Exists to exercise the self-loop constraint check.
#[derive(Debug, Clone)]
pub struct LoopbackAdversary<P> {
    pub inner: P,
    pub victim: u64,
    fired: bool,
}

impl<P> LoopbackAdversary<P> {
    pub fn new(inner: P, victim: u64) -> Self {
        Self { inner, victim, fired: false }
    }

    pub fn fired(&self) -> bool {
        self.fired
    }
}

impl<P: RoutingPolicy> RoutingPolicy for LoopbackAdversary<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn on_step(&mut self, view: &NetworkView<'_>) {
        self.inner.on_step(view);
    }

    fn needs_observation(&self) -> bool {
        self.inner.needs_observation()
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, view: &NetworkView<'_>) -> Decision {
        if !self.fired && query.packet == self.victim {
            self.fired = true;
            return Decision::Loopback;
        }
        self.inner.decide(query, view)
    }

    fn feedback(&mut self, fb: &HopFeedback<'_>) {
        self.inner.feedback(fb);
    }

    fn report(&self) -> PolicyReport {
        self.inner.report()
    }
}
