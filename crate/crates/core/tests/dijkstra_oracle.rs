//! Dijkstra against exhaustive search on random graphs and the 4×4 torus.

use leoroute_core::orbital::{Constellation, ConstellationParams};
use leoroute_core::resilience::EffectiveTopology;
use leoroute_core::routing::{
    dijkstra_tables, distances_to, isl_graph, next_hops_to, shortest_distances, Graph, NextHopAction, OpCount,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng) -> (Graph, Vec<Vec<(usize, u64)>>) {
    let n = rng.random_range(2..=50);
    let p = (3.0 / n as f64).min(1.0);
    let mut g = Graph::new(n);
    let mut int = vec![Vec::new(); n];
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                let w = rng.random_range(1..=20u64);
                g.add_edge(u, v, w as f64);
                int[u].push((v, w));
            }
        }
    }
    (g, int)
}

/// Exhaustive simple-path search. A branch is cut once it is no better
/// than the best complete path or than an earlier arrival at the same node;
/// with positive weights neither cut can discard the optimum.
fn brute_force(adj: &[Vec<(usize, u64)>], s: usize, t: usize) -> Option<u64> {
    fn dfs(
        adj: &[Vec<(usize, u64)>],
        u: usize,
        t: usize,
        cost: u64,
        seen: &mut [bool],
        arrived: &mut [u64],
        best: &mut Option<u64>,
    ) {
        if best.is_some_and(|b| cost >= b) || cost > arrived[u] {
            return;
        }
        arrived[u] = cost;
        if u == t {
            *best = Some(cost);
            return;
        }
        for &(v, w) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                dfs(adj, v, t, cost + w, seen, arrived, best);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut arrived = vec![u64::MAX; adj.len()];
    let mut best = None;
    dfs(adj, s, t, 0, &mut seen, &mut arrived, &mut best);
    best
}

/// Full enumeration of every simple path, no pruning.
fn enumerate_all(adj: &[Vec<(usize, u64)>], s: usize, t: usize) -> Option<u64> {
    fn walk(adj: &[Vec<(usize, u64)>], u: usize, t: usize, cost: u64, seen: &mut [bool], out: &mut Vec<u64>) {
        if u == t {
            out.push(cost);
            return;
        }
        for &(v, w) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                walk(adj, v, t, cost + w, seen, out);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut all = Vec::new();
    walk(adj, s, t, 0, &mut seen, &mut all);
    all.into_iter().min()
}

fn walk_cost(g: &Graph, hops: &[Option<usize>], mut u: usize, t: usize) -> f64 {
    let mut cost = 0.0;
    let mut steps = 0;
    while u != t {
        let v = hops[u].expect("reachable node has a next hop");
        cost += g.out[u].iter().filter(|e| e.0 == v).map(|e| e.1).fold(f64::INFINITY, f64::min);
        u = v;
        steps += 1;
        assert!(steps <= g.len(), "next-hop walk loops");
    }
    cost
}

#[test]
fn random_graphs_match_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..100 {
        let (g, int) = random_graph(&mut rng);
        let n = g.len();
        let pairs: Vec<(usize, usize)> = if n <= 10 {
            (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).collect()
        } else {
            (0..8).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect()
        };
        for (s, t) in pairs {
            let mut ops = OpCount::default();
            let d = shortest_distances(&g, s, &mut ops)[t];
            let want = if n <= 10 { enumerate_all(&int, s, t) } else { brute_force(&int, s, t) };
            match want {
                Some(w) => assert_eq!(d, w as f64, "graph n={n} {s}->{t}"),
                None => assert!(d.is_infinite()),
            }
            let to_t = distances_to(&g, t, &mut ops);
            assert_eq!(to_t[s], d);
            if d.is_finite() {
                let hops = next_hops_to(&g, t, &to_t);
                assert_eq!(walk_cost(&g, &hops, s, t), d);
            }
        }
    }
}

#[test]
fn torus_tables_follow_manhattan_optimum() {
    let c = Constellation::new(ConstellationParams { plane_count: 4, sats_per_plane: 4, ..ConstellationParams::starlink_shell1() })
        .unwrap();
    let topo = EffectiveTopology::unimpaired(&c.isl_adjacency());
    let n = c.len();
    let attachments: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut ops = OpCount::default();
    let table = dijkstra_tables(&topo, &attachments, |_, _| 1.0, 0.0, 64, &mut ops);
    let g = isl_graph(&topo, |_, _| 1.0);
    let ring = |a: u32, b: u32| {
        let d = a.abs_diff(b);
        d.min(4 - d) as usize
    };
    for s in 0..n {
        for t in 0..n {
            let (a, b) = (c.id_of(s), c.id_of(t));
            let manhattan = ring(a.plane, b.plane) + ring(a.slot, b.slot);
            assert_eq!(shortest_distances(&g, s, &mut ops)[t], manhattan as f64);
            let mut u = s;
            let mut hops = 0;
            loop {
                let action = table.get(u, t).unwrap();
                if action == NextHopAction::GroundDeliver {
                    break;
                }
                u = topo.isl[u][action.direction().unwrap().index()].unwrap();
                hops += 1;
            }
            assert_eq!((u, hops), (t, manhattan));
        }
    }
}
