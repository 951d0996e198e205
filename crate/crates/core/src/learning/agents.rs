//! Per-satellite copies of a trained network with local online updates.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ddqn::{ddqn_loss, ddqn_targets};
use super::nn::{sgd_step, Mlp};
use super::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub enabled: bool,
    pub learning_rate: f64,
    /// Local transitions collected between two updates.
    pub cadence: usize,
    pub gamma: f64,
    pub huber_delta: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { enabled: true, learning_rate: 1e-4, cadence: 16, gamma: 0.99, huber_delta: 1.0 }
    }
}

impl OnlineConfig {
    pub fn frozen() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    fn active(&self) -> bool {
        self.enabled && self.learning_rate != 0.0
    }
}

/// Agents share the global network until their first local update, then
/// own a private copy. The global network doubles as every agent's target.
#[derive(Debug, Clone)]
pub struct AgentPool {
    global: Mlp,
    local: Vec<Option<Mlp>>,
    pending: Vec<Vec<Transition>>,
    pub config: OnlineConfig,
    updates: u64,
}

impl AgentPool {
    pub fn deploy(global: Mlp, agents: usize, config: OnlineConfig) -> Self {
        Self { global, local: alloc::vec![None; agents], pending: alloc::vec![Vec::new(); agents], config, updates: 0 }
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn global(&self) -> &Mlp {
        &self.global
    }

    pub fn network(&self, agent: usize) -> &Mlp {
        self.local[agent].as_ref().unwrap_or(&self.global)
    }

    /// Owned copy of one agent's parameters.
    pub fn snapshot(&self, agent: usize) -> Mlp {
        self.network(agent).clone()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Agents that hold a private copy.
    pub fn diverged(&self) -> usize {
        self.local.iter().flatten().count()
    }

    /// Feed one locally observed transition; returns the loss when it
    /// triggered an update.
    pub fn observe(&mut self, agent: usize, t: Transition) -> Option<f64> {
        if !self.config.active() {
            return None;
        }
        self.pending[agent].push(t);
        if self.pending[agent].len() < self.config.cadence.max(1) {
            return None;
        }
        let batch = core::mem::take(&mut self.pending[agent]);
        let refs: Vec<&Transition> = batch.iter().collect();
        let net = self.local[agent].get_or_insert_with(|| self.global.clone());
        let y = ddqn_targets(net, &self.global, &refs, self.config.gamma);
        let (loss, grads) = ddqn_loss(net, &refs, &y, self.config.huber_delta);
        if !loss.is_finite() || !grads.is_finite() {
            // A local blow-up resets the agent to the deployed model.
            self.local[agent] = None;
            return None;
        }
        sgd_step(net, &grads, self.config.learning_rate);
        self.updates += 1;
        Some(loss)
    }
}
