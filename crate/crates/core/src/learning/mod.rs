//! MDP encoding and the learned next-hop policies: a double deep Q-network
//! trained centrally then copied to every satellite, and a SARSA baseline.

pub mod agents;
pub mod ddqn;
pub mod nn;
pub mod replay;
pub mod reward;
pub mod sarsa;
pub mod state;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use agents::{AgentPool, OnlineConfig};
pub use ddqn::{DdqnAgent, DdqnConfig};
pub use nn::{Adam, Mlp};
pub use replay::{ReplayMemory, Transition};
pub use reward::{reward, RewardWeights, StepOutcome, Terminal};
pub use sarsa::{ActionValue, SarsaConfig, SarsaHead, TabularQ};
pub use state::{encode_state, LocalView, RoutingState, ACTIONS, STATE_DIM};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearningError {
    #[error("no valid action")]
    NoValidAction,
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("network shape {got:?} does not fit (expected input {input}, output {output})")]
    Shape { got: alloc::vec::Vec<usize>, input: usize, output: usize },
}

/// `ε(t) = end + (start − end)·exp(−t / decay)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 0.99, end: 0.1, decay_steps: 1000.0 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        self.end + (self.start - self.end) * libm::exp(-(step as f64) / self.decay_steps)
    }
}

/// ε-greedy over precomputed action values.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    values: &[f64],
    epsilon: f64,
    mask: &[bool; ACTIONS],
    rng: &mut R,
) -> Result<usize, LearningError> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(LearningError::NoValidAction);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let pick = rng.random_range(0..valid);
        return Ok(mask.iter().enumerate().filter(|(_, &m)| m).nth(pick).map(|(i, _)| i).expect("pick < valid"));
    }
    Ok(nn::masked_argmax(values, mask).expect("valid > 0"))
}

pub fn act_epsilon_greedy<R: Rng + ?Sized>(
    net: &Mlp,
    state: &RoutingState,
    epsilon: f64,
    mask: &[bool; ACTIONS],
    rng: &mut R,
) -> Result<usize, LearningError> {
    if !mask.iter().any(|&m| m) {
        return Err(LearningError::NoValidAction);
    }
    let q = net.forward(state.as_slice());
    epsilon_greedy(&q, epsilon, mask, rng)
}
