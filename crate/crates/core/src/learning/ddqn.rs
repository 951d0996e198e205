//! Double DQN: the online net picks the next action, the target net values it.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{huber, huber_grad, masked_argmax, Adam, Gradients, Mlp};
use super::replay::{ReplayMemory, Transition};
use super::state::{ACTIONS, STATE_DIM};
use super::{EpsilonSchedule, LearningError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdqnConfig {
    pub layers: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_steps: u64,
    pub huber_delta: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for DdqnConfig {
    fn default() -> Self {
        Self {
            layers: alloc::vec![STATE_DIM, 128, 128, ACTIONS],
            gamma: 0.99,
            learning_rate: 1e-4,
            batch_size: 128,
            replay_capacity: 2000,
            target_sync_steps: 500,
            huber_delta: 1.0,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl DdqnConfig {
    pub fn check_shape(&self) -> Result<(), LearningError> {
        let ok = self.layers.len() >= 2 && self.layers[0] == STATE_DIM && self.layers[self.layers.len() - 1] == ACTIONS;
        if ok {
            Ok(())
        } else {
            Err(LearningError::Shape { got: self.layers.clone(), input: STATE_DIM, output: ACTIONS })
        }
    }
}

/// `y = r` for terminal transitions, else `r + γ·Q_target(s′, argmax_a Q_online(s′, a))`.
pub fn ddqn_targets(online: &Mlp, target: &Mlp, batch: &[&Transition], gamma: f64) -> Vec<f64> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    let mut next = Vec::with_capacity(live.len() * STATE_DIM);
    for &i in &live {
        next.extend_from_slice(batch[i].next_state.as_slice());
    }
    let q_online = online.forward_batch(&next, live.len());
    let q_target = target.forward_batch(&next, live.len());
    let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    for (k, &i) in live.iter().enumerate() {
        let row = &q_online[k * ACTIONS..(k + 1) * ACTIONS];
        let a = masked_argmax(row, &batch[i].next_mask).or_else(|| masked_argmax(row, &[true; ACTIONS])).unwrap_or(0);
        y[i] += gamma * q_target[k * ACTIONS + a];
    }
    y
}

/// Mean Huber loss of `Q(s, a)` against fixed `targets`, with its gradient.
pub fn ddqn_loss(net: &Mlp, batch: &[&Transition], targets: &[f64], delta: f64) -> (f64, Gradients) {
    let n = batch.len();
    let mut x = Vec::with_capacity(n * STATE_DIM);
    for t in batch {
        x.extend_from_slice(t.state.as_slice());
    }
    let cache = net.forward_cached(&x, n);
    let q = cache.output();
    let mut grad_out = alloc::vec![0.0; n * ACTIONS];
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let err = q[i * ACTIONS + t.action] - targets[i];
        loss += huber(err, delta);
        grad_out[i * ACTIONS + t.action] = huber_grad(err, delta) / n as f64;
    }
    let mut grads = Gradients::zeros_like(net);
    net.backward(&cache, &grad_out, &mut grads);
    (loss / n as f64, grads)
}

#[derive(Debug, Clone)]
pub struct DdqnAgent {
    pub config: DdqnConfig,
    pub online: Mlp,
    pub target: Mlp,
    pub memory: ReplayMemory,
    adam: Adam,
    train_steps: u64,
    rng: ChaCha8Rng,
}

impl DdqnAgent {
    pub fn new(config: DdqnConfig, seed: u64) -> Result<Self, LearningError> {
        config.check_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(&config.layers, &mut rng);
        Ok(Self::from_network(config, online, rng))
    }

    pub fn from_network(config: DdqnConfig, online: Mlp, rng: ChaCha8Rng) -> Self {
        let adam = Adam::new(&online, config.learning_rate);
        Self {
            memory: ReplayMemory::new(config.replay_capacity),
            target: online.clone(),
            online,
            adam,
            train_steps: 0,
            rng,
            config,
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn remember(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// One optimizer step on a replay batch; `None` until the memory holds a
    /// full batch.
    pub fn train_step(&mut self) -> Result<Option<f64>, LearningError> {
        if self.memory.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = self.memory.sample(self.config.batch_size, &mut self.rng);
        let y = ddqn_targets(&self.online, &self.target, &batch, self.config.gamma);
        let (loss, grads) = ddqn_loss(&self.online, &batch, &y, self.config.huber_delta);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(LearningError::Divergence { step: self.train_steps, loss });
        }
        self.adam.step(&mut self.online, &grads);
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync_steps == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }
}

#[cfg(test)]
mod tests {
    use super::super::nn::Dense;
    use super::super::state::RoutingState;
    use super::*;

    fn state(v: f64) -> RoutingState {
        let mut s = [0.0; STATE_DIM];
        s[0] = v;
        RoutingState(s)
    }

    fn tr(s: f64, a: usize, r: f64, s2: f64, terminal: bool) -> Transition {
        Transition { state: state(s), action: a, reward: r, next_state: state(s2), next_mask: [true; 4], terminal }
    }

    /// Linear head reading only feature 0: Q(s, a) = w_a·s₀ + b_a.
    fn linear(w: [f64; 4], b: [f64; 4]) -> Mlp {
        let mut l = Dense::zeros(STATE_DIM, ACTIONS);
        for a in 0..4 {
            l.weights[a * STATE_DIM] = w[a];
        }
        l.bias.copy_from_slice(&b);
        Mlp::from_layers(alloc::vec![l])
    }

    #[test]
    fn terminal_targets_equal_rewards() {
        let online = linear([1.0, 2.0, 3.0, 4.0], [0.5; 4]);
        let batch = [tr(0.1, 0, 1.5, 0.3, true), tr(0.2, 3, -2.0, 0.9, true)];
        let refs: Vec<&Transition> = batch.iter().collect();
        assert_eq!(ddqn_targets(&online, &online, &refs, 0.99), alloc::vec![1.5, -2.0]);
    }

    #[test]
    fn target_follows_online_argmax() {
        // Online prefers action 0 at s′ = 1; target prefers action 3.
        let online = linear([5.0, 1.0, 1.0, 1.0], [0.0; 4]);
        let target = linear([0.2, 0.0, 0.0, 9.0], [0.1; 4]);
        let t = tr(0.0, 1, 0.25, 1.0, false);
        let y = ddqn_targets(&online, &target, &[&t], 0.9);
        assert!((y[0] - (0.25 + 0.9 * 0.3)).abs() < 1e-12);
        // A masked online favourite hands the choice to the next-best action.
        let mut m = t.clone();
        m.next_mask = [false, true, true, true];
        let y = ddqn_targets(&online, &target, &[&m], 0.9);
        assert!((y[0] - (0.25 + 0.9 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn hand_forward_pass_oracle() {
        // Two-layer net on features 0 and 1: hidden h = relu(W1 x + b1), Q = W2 h + b2.
        let mut l1 = Dense::zeros(STATE_DIM, 2);
        l1.weights[0] = 0.5;
        l1.weights[1] = -1.0;
        l1.weights[STATE_DIM] = 1.0;
        l1.weights[STATE_DIM + 1] = 2.0;
        l1.bias.copy_from_slice(&[0.1, -0.2]);
        let mut l2 = Dense::zeros(2, ACTIONS);
        l2.weights.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5]);
        l2.bias.copy_from_slice(&[0.0, 0.1, 0.2, 0.3]);
        let online = Mlp::from_layers(alloc::vec![l1, l2]);
        let target = online.clone();

        let mut s = [0.0; STATE_DIM];
        s[0] = 0.4;
        s[1] = -0.3;
        let mut s2 = [0.0; STATE_DIM];
        s2[0] = 0.2;
        s2[1] = 0.6;
        let t = Transition {
            state: RoutingState(s),
            action: 2,
            reward: 0.7,
            next_state: RoutingState(s2),
            next_mask: [true; 4],
            terminal: false,
        };
        // s′: h = relu(0.1 - 0.6 + 0.1, 0.2 + 1.2 - 0.2) = (0, 1.2)
        //     Q = (0, 1.3, 1.4, 0.9) → argmax 2, y = 0.7 + 0.9·1.4 = 1.96
        // s:  h = relu(0.2 + 0.3 + 0.1, 0.4 - 0.6 - 0.2) = (0.6, 0)
        //     Q(s, 2) = 0.6 + 0.2 = 0.8; err = -1.16; Huber = 1.16 - 0.5 = 0.66
        let y = ddqn_targets(&online, &target, &[&t], 0.9);
        assert!((y[0] - 1.96).abs() < 1e-6);
        let (loss, _) = ddqn_loss(&online, &[&t], &y, 1.0);
        assert!((loss - 0.66).abs() < 1e-6);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut agent = DdqnAgent::new(DdqnConfig { layers: alloc::vec![STATE_DIM, 12, 10, ACTIONS], ..DdqnConfig::default() }, 9)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        use rand::Rng;
        let mut batch = Vec::new();
        for k in 0..16 {
            let s = RoutingState(core::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let s2 = RoutingState(core::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            batch.push(Transition {
                state: s,
                action: k % 4,
                reward: rng.random_range(-3.0..3.0),
                next_state: s2,
                next_mask: [true; 4],
                terminal: k % 5 == 0,
            });
        }
        agent.target = Mlp::new(&[STATE_DIM, 12, 10, ACTIONS], &mut rng);
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = ddqn_targets(&agent.online, &agent.target, &refs, 0.99);
        let (_, grads) = ddqn_loss(&agent.online, &refs, &y, 1.0);
        let analytic = grads.flat();
        let base = agent.online.params_flat();
        let h = 1e-6;
        let mut probe = agent.online.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_params_flat(&p);
            let plus = ddqn_loss(&probe, &refs, &y, 1.0).0;
            p[i] -= 2.0 * h;
            probe.set_params_flat(&p);
            let minus = ddqn_loss(&probe, &refs, &y, 1.0).0;
            let fd = (plus - minus) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs());
            if scale > 1e-7 {
                assert!((fd - analytic[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn sync_makes_target_identical() {
        let mut agent = DdqnAgent::new(
            DdqnConfig { layers: alloc::vec![STATE_DIM, 8, ACTIONS], batch_size: 4, target_sync_steps: 3, ..DdqnConfig::default() },
            1,
        )
        .unwrap();
        for k in 0..8 {
            agent.remember(tr(k as f64 / 8.0, k % 4, 1.0, 0.5, k % 2 == 0));
        }
        agent.train_step().unwrap();
        assert_ne!(agent.online, agent.target);
        agent.train_step().unwrap();
        agent.train_step().unwrap();
        assert_eq!(agent.online, agent.target);
    }

    #[test]
    fn waits_for_a_full_batch() {
        let mut agent = DdqnAgent::new(DdqnConfig::default(), 2).unwrap();
        agent.remember(tr(0.0, 0, 0.0, 0.0, true));
        assert_eq!(agent.train_step().unwrap(), None);
    }

    #[test]
    fn rejects_wrong_shape() {
        assert!(DdqnAgent::new(DdqnConfig { layers: alloc::vec![10, 4], ..DdqnConfig::default() }, 0).is_err());
    }
}
