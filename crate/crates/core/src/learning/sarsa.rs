//! On-policy SARSA with a pluggable action-value function.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::nn::{sgd_step, Gradients, Mlp};
use super::state::{RoutingState, ACTIONS, STATE_DIM};
use super::EpsilonSchedule;

pub trait ActionValue<S: ?Sized> {
    fn value(&self, state: &S, action: usize) -> f64;
    /// Move `Q(state, action)` toward `target` with step size `lr`.
    fn nudge(&mut self, state: &S, action: usize, target: f64, lr: f64);
}

/// `Q(s,a) ← Q(s,a) + lr·(r + γ·Q(s′,a′) − Q(s,a))`; `next = None` is terminal.
pub fn sarsa_step<S: ?Sized, V: ActionValue<S>>(
    q: &mut V,
    s: &S,
    a: usize,
    r: f64,
    next: Option<(&S, usize)>,
    lr: f64,
    gamma: f64,
) {
    let target = r + next.map_or(0.0, |(s2, a2)| gamma * q.value(s2, a2));
    q.nudge(s, a, target, lr);
}

/// Lookup-table values, zero for unseen pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularQ<K: Ord> {
    pub table: BTreeMap<(K, usize), f64>,
}

impl<K: Ord + Clone> ActionValue<K> for TabularQ<K> {
    fn value(&self, state: &K, action: usize) -> f64 {
        self.table.get(&(state.clone(), action)).copied().unwrap_or(0.0)
    }

    fn nudge(&mut self, state: &K, action: usize, target: f64, lr: f64) {
        let q = self.table.entry((state.clone(), action)).or_insert(0.0);
        *q += lr * (target - *q);
    }
}

/// Network head: one SGD step on `½(Q(s,a) − target)²`, which is the
/// semi-gradient form of the same update.
impl ActionValue<RoutingState> for Mlp {
    fn value(&self, state: &RoutingState, action: usize) -> f64 {
        self.forward(state.as_slice())[action]
    }

    fn nudge(&mut self, state: &RoutingState, action: usize, target: f64, lr: f64) {
        let cache = self.forward_cached(state.as_slice(), 1);
        let mut grad = [0.0; ACTIONS];
        grad[action] = cache.output()[action] - target;
        let mut g = Gradients::zeros_like(self);
        self.backward(&cache, &grad, &mut g);
        sgd_step(self, &g, lr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SarsaHead {
    Linear,
    /// One ReLU hidden layer of the given width.
    Hidden(usize),
}

impl SarsaHead {
    pub fn layers(self) -> Vec<usize> {
        match self {
            SarsaHead::Linear => alloc::vec![STATE_DIM, ACTIONS],
            SarsaHead::Hidden(w) => alloc::vec![STATE_DIM, w, ACTIONS],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarsaConfig {
    pub head: SarsaHead,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for SarsaConfig {
    fn default() -> Self {
        Self { head: SarsaHead::Hidden(32), gamma: 0.99, learning_rate: 1e-3, epsilon: EpsilonSchedule::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_point_leaves_value_unchanged() {
        let mut q = TabularQ::default();
        q.table.insert((7u32, 1), 0.4);
        sarsa_step(&mut q, &7, 1, 0.0, Some((&7, 1)), 0.3, 1.0);
        assert_eq!(q.value(&7, 1), 0.4);
    }

    #[test]
    fn single_update_arithmetic() {
        let mut q = TabularQ::default();
        sarsa_step(&mut q, &0u32, 2, 1.0, Some((&1, 0)), 0.5, 0.0);
        assert_eq!(q.value(&0, 2), 0.5);
    }

    #[test]
    fn two_state_chain_reaches_bellman_solution() {
        // A --(r=0)--> B --(r=1)--> end, one action each.
        // Q(B) = 1, Q(A) = γ·Q(B).
        let gamma = 0.9;
        let mut q = TabularQ::default();
        for _ in 0..2000 {
            sarsa_step(&mut q, &'A', 0, 0.0, Some((&'B', 0)), 0.1, gamma);
            sarsa_step(&mut q, &'B', 0, 1.0, None, 0.1, gamma);
        }
        assert!((q.value(&'B', 0) - 1.0).abs() < 1e-3);
        assert!((q.value(&'A', 0) - gamma).abs() < 1e-3);
    }

    #[test]
    fn network_head_moves_toward_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(&SarsaHead::Hidden(16).layers(), &mut rng);
        let s = RoutingState([0.3; STATE_DIM]);
        let before = (net.value(&s, 1) - 2.0).abs();
        for _ in 0..200 {
            sarsa_step(&mut net, &s, 1, 2.0, None, 0.01, 0.99);
        }
        assert!((net.value(&s, 1) - 2.0).abs() < 0.01 * before);
    }
}
