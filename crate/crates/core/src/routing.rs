//! Dijkstra routing tables, path-churn measurement and the flow-constraint
//! validator.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::orbital::Direction;
use crate::resilience::EffectiveTopology;
use crate::traffic::{Endpoint, Packet};

/// Next-hop decision at a satellite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NextHopAction {
    Up,
    Down,
    Left,
    Right,
    GroundDeliver,
}

impl NextHopAction {
    pub fn direction(self) -> Option<Direction> {
        match self {
            NextHopAction::Up => Some(Direction::Up),
            NextHopAction::Down => Some(Direction::Down),
            NextHopAction::Left => Some(Direction::Left),
            NextHopAction::Right => Some(Direction::Right),
            NextHopAction::GroundDeliver => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self.direction() {
            Some(d) => d.as_str(),
            None => "deliver",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "up" => NextHopAction::Up,
            "down" => NextHopAction::Down,
            "left" => NextHopAction::Left,
            "right" => NextHopAction::Right,
            "deliver" => NextHopAction::GroundDeliver,
            _ => return None,
        })
    }
}

impl From<Direction> for NextHopAction {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Up => NextHopAction::Up,
            Direction::Down => NextHopAction::Down,
            Direction::Left => NextHopAction::Left,
            Direction::Right => NextHopAction::Right,
        }
    }
}

/// Directed weighted graph as out-adjacency lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub out: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    pub fn new(nodes: usize) -> Self {
        Self { out: alloc::vec![Vec::new(); nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, weight: f64) {
        self.out[from].push((to, weight));
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn reversed(&self) -> Graph {
        let mut g = Graph::new(self.len());
        for (u, edges) in self.out.iter().enumerate() {
            for &(v, w) in edges {
                g.out[v].push((u, w));
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Basic-operation counter (heap pushes, pops and edge relaxations).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount(pub u64);

/// Single-source shortest distances from `source`; unreachable nodes are `∞`.
pub fn shortest_distances(graph: &Graph, source: usize, ops: &mut OpCount) -> Vec<f64> {
    let mut dist = alloc::vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem { cost: 0.0, node: source });
    ops.0 += 1;
    while let Some(HeapItem { cost, node }) = heap.pop() {
        ops.0 += 1;
        if cost > dist[node] {
            continue;
        }
        for &(next, w) in &graph.out[node] {
            ops.0 += 1;
            let c = cost + w;
            if c < dist[next] {
                dist[next] = c;
                heap.push(HeapItem { cost: c, node: next });
                ops.0 += 1;
            }
        }
    }
    dist
}

/// Distances from every node to `target`.
pub fn distances_to(graph: &Graph, target: usize, ops: &mut OpCount) -> Vec<f64> {
    shortest_distances(&graph.reversed(), target, ops)
}

/// Next hop toward `target` for every node: the out-neighbour minimizing
/// `w(u, v) + dist(v)`, ties to the lowest neighbour index.
pub fn next_hops_to(graph: &Graph, target: usize, dist_to_target: &[f64]) -> Vec<Option<usize>> {
    (0..graph.len())
        .map(|u| {
            if u == target || !dist_to_target[u].is_finite() {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            let mut edges = graph.out[u].clone();
            edges.sort_by_key(|&(v, _)| v);
            for (v, w) in edges {
                let c = w + dist_to_target[v];
                if c.is_finite() && best.map_or(true, |(_, bc)| c < bc) {
                    best = Some((v, c));
                }
            }
            best.map(|(v, _)| v)
        })
        .collect()
}

/// Weighted ISL graph over the effective topology.
pub fn isl_graph(topology: &EffectiveTopology, weight: impl Fn(usize, usize) -> f64) -> Graph {
    let mut g = Graph::new(topology.isl.len());
    for (u, nbrs) in topology.isl.iter().enumerate() {
        for &v in nbrs.iter().flatten() {
            g.add_edge(u, v, weight(u, v));
        }
    }
    g
}

/// Next-hop table keyed by (satellite, destination gateway).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    pub epoch: f64,
    satellites: usize,
    gateways: usize,
    entries: Vec<Option<NextHopAction>>,
    /// Bits one entry occupies when disseminated.
    pub entry_bits: u64,
}

impl RoutingTable {
    pub fn empty(epoch: f64, satellites: usize, gateways: usize, entry_bits: u64) -> Self {
        Self { epoch, satellites, gateways, entries: alloc::vec![None; satellites * gateways], entry_bits }
    }

    pub fn satellites(&self) -> usize {
        self.satellites
    }

    pub fn gateways(&self) -> usize {
        self.gateways
    }

    pub fn get(&self, sat: usize, gateway: usize) -> Option<NextHopAction> {
        self.entries[sat * self.gateways + gateway]
    }

    pub fn set(&mut self, sat: usize, gateway: usize, action: Option<NextHopAction>) {
        self.entries[sat * self.gateways + gateway] = action;
    }

    pub fn len(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries held by one satellite.
    pub fn entries_for(&self, sat: usize) -> usize {
        self.entries[sat * self.gateways..(sat + 1) * self.gateways].iter().flatten().count()
    }

    pub fn size_bits(&self) -> u64 {
        self.len() as u64 * self.entry_bits
    }

    /// `(sat, gateway, action)` for every present entry, in key order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, NextHopAction)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(move |(k, a)| a.map(|a| (k / self.gateways, k % self.gateways, a)))
    }
}

/// Minimum-latency tables toward every gateway's attachment satellite.
///
/// `weight(u, v)` is the latency of ISL `u → v`. Gateways without an
/// attachment, and satellites that cannot reach one, get no entry.
pub fn dijkstra_tables(
    topology: &EffectiveTopology,
    attachments: &[Option<usize>],
    weight: impl Fn(usize, usize) -> f64,
    epoch: f64,
    entry_bits: u64,
    ops: &mut OpCount,
) -> RoutingTable {
    let n = topology.isl.len();
    let graph = isl_graph(topology, weight);
    let reversed = graph.reversed();
    let mut table = RoutingTable::empty(epoch, n, attachments.len(), entry_bits);
    // Gateways sharing an attachment share one search.
    let mut cache: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    for (g, attach) in attachments.iter().enumerate() {
        let Some(target) = *attach else { continue };
        if !topology.satellite_up[target] {
            continue;
        }
        let hops = cache.entry(target).or_insert_with(|| {
            let dist = shortest_distances(&reversed, target, ops);
            next_hops_to(&graph, target, &dist)
        });
        for u in 0..n {
            let action = if u == target {
                Some(NextHopAction::GroundDeliver)
            } else {
                hops[u].and_then(|v| {
                    let dir = topology.isl[u].iter().position(|&x| x == Some(v))?;
                    Direction::from_index(dir).map(NextHopAction::from)
                })
            };
            table.set(u, g, action);
        }
    }
    table
}

/// Percentage of (satellite, destination) entries whose next hop differs;
/// keys present in only one table count as changed.
pub fn path_change_fraction(current: &RoutingTable, previous: &RoutingTable) -> f64 {
    let mut union = 0usize;
    let mut changed = 0usize;
    let sats = current.satellites.max(previous.satellites);
    let gws = current.gateways.max(previous.gateways);
    let lookup = |t: &RoutingTable, s: usize, g: usize| {
        if s < t.satellites && g < t.gateways {
            t.get(s, g)
        } else {
            None
        }
    };
    for s in 0..sats {
        for g in 0..gws {
            let (a, b) = (lookup(current, s, g), lookup(previous, s, g));
            if a.is_none() && b.is_none() {
                continue;
            }
            union += 1;
            if a != b {
                changed += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        100.0 * changed as f64 / union as f64
    }
}

/// Measured traffic per directed link, bits/s over a window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowAssignment {
    pub window_s: f64,
    pub flows: BTreeMap<(Endpoint, Endpoint), f64>,
}

impl FlowAssignment {
    /// Flows implied by the hop traces of delivered gateway-to-gateway packets.
    pub fn from_packets<'a>(packets: impl IntoIterator<Item = &'a Packet>, window_s: f64) -> Self {
        let mut bits: BTreeMap<(Endpoint, Endpoint), f64> = BTreeMap::new();
        for p in packets {
            if p.delivered_at.is_none() || !matches!(p.src, Endpoint::Gateway(_)) || p.hop_trace.is_empty() {
                continue;
            }
            let size = p.size_bits as f64;
            let first = Endpoint::Satellite(p.hop_trace[0]);
            *bits.entry((p.src, first)).or_default() += size;
            for w in p.hop_trace.windows(2) {
                *bits.entry((Endpoint::Satellite(w[0]), Endpoint::Satellite(w[1]))).or_default() += size;
            }
            if let Endpoint::Gateway(_) = p.dst {
                let last = Endpoint::Satellite(*p.hop_trace.last().expect("non-empty"));
                *bits.entry((last, p.dst)).or_default() += size;
            }
        }
        let flows = bits.into_iter().map(|(k, b)| (k, b / window_s)).collect();
        Self { window_s, flows }
    }

    pub fn add(&mut self, from: Endpoint, to: Endpoint, bps: f64) {
        *self.flows.entry((from, to)).or_default() += bps;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Link flow within link rate.
    C1,
    /// Transit flow conservation at each satellite.
    C2,
    /// No self-loops.
    C3,
    /// Path outage within bound.
    C5,
}

impl Constraint {
    pub fn as_str(self) -> &'static str {
        match self {
            Constraint::C1 => "C1",
            Constraint::C2 => "C2",
            Constraint::C3 => "C3",
            Constraint::C5 => "C5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Subject {
    Link(Endpoint, Endpoint),
    Satellite(usize),
    Packet(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub subject: Subject,
    /// Negative: how far past the bound.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub passed: bool,
    /// Smallest margin seen; `∞` when nothing was checked.
    pub worst_margin: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn passed(&self, c: Constraint) -> bool {
        self.checks.iter().find(|k| k.constraint == c).map_or(true, |k| k.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations_of(&self, c: Constraint) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.constraint == c)
    }
}

/// Outage of one measured packet path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPath {
    pub packet: u64,
    pub outage: f64,
}

/// Check C1, C2, C3 and C5 against measured flows and paths.
///
/// `isl_rate(i, j)` returns the rate of ISL `i → j`, or `None` when no such
/// link exists (flow on a missing link violates C1).
pub fn validate_constraints(
    flows: &FlowAssignment,
    isl_rate: impl Fn(usize, usize) -> Option<f64>,
    paths: &[MeasuredPath],
    outage_threshold: f64,
) -> ConstraintReport {
    let mut report = ConstraintReport::default();
    let record = |report: &mut ConstraintReport, c: Constraint, items: Vec<(Subject, f64)>| {
        let mut check = ConstraintCheck { constraint: c, passed: true, worst_margin: f64::INFINITY, checked: items.len() };
        for (subject, margin) in items {
            check.worst_margin = check.worst_margin.min(margin);
            if margin < 0.0 {
                check.passed = false;
                report.violations.push(Violation { constraint: c, subject, margin });
            }
        }
        report.checks.push(check);
    };

    let mut c1 = Vec::new();
    let mut c3 = Vec::new();
    let mut balance: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (&(from, to), &f) in &flows.flows {
        if let Endpoint::Satellite(j) = to {
            balance.entry(j).or_default().0 += f;
        }
        if let Endpoint::Satellite(i) = from {
            balance.entry(i).or_default().1 += f;
        }
        if let (Endpoint::Satellite(i), Endpoint::Satellite(j)) = (from, to) {
            if i == j {
                c3.push((Subject::Link(from, to), -f));
            } else {
                let margin = isl_rate(i, j).map_or(-f, |r| r - f);
                c1.push((Subject::Link(from, to), margin));
            }
        }
    }
    let c2 = balance
        .into_iter()
        .map(|(s, (inflow, outflow))| {
            let tol = 1e-9 * inflow.max(outflow).max(1.0);
            let gap = (inflow - outflow).abs();
            (Subject::Satellite(s), if gap <= tol { 0.0 } else { -gap })
        })
        .collect();
    let c5 = paths.iter().map(|p| (Subject::Packet(p.packet), outage_threshold - p.outage)).collect();

    record(&mut report, Constraint::C1, c1);
    record(&mut report, Constraint::C2, c2);
    record(&mut report, Constraint::C3, c3);
    record(&mut report, Constraint::C5, c5);
    report
}
