//! Centralized training: the simulator drives packets, a single learner
//! consumes every transition, and the result is one global network.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::SatelliteTraffic;
use super::{Decision, DecisionQuery, Engine, HopFeedback, NetworkView, PolicyReport, RoutingPolicy, SimConfig, SimError};
use crate::learning::nn::masked_argmax;
use crate::learning::sarsa::sarsa_step;
use crate::learning::{
    epsilon_greedy, reward, ActionValue, DdqnAgent, DdqnConfig, LearningError, Mlp, RewardWeights, RoutingState,
    SarsaConfig, Transition, ACTIONS,
};
use crate::orbital::{Constellation, ConstellationParams, Direction, Gateway};
use crate::traffic::{Endpoint, TrafficGenerator, TrafficPattern};

/// Where training episodes happen.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEnv {
    /// `horizon_s` is the length of one simulator run; runs are chained
    /// (orbit time advancing) until the iteration budget is spent.
    pub sim: SimConfig,
    pub constellation: ConstellationParams,
    pub gateways: Vec<Gateway>,
    /// Gateway-to-gateway traffic; every packet is a training episode.
    pub traffic: Option<TrafficPattern>,
    /// Additional satellite-to-satellite episodes per second.
    pub satellite_packets_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Transition count at this point (1-based).
    pub step: u64,
    /// Loss of the update made on this transition, if any.
    pub loss: Option<f64>,
    /// Return of the episode this transition closed, if it was terminal.
    pub episode_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub algorithm: String,
    pub network: Mlp,
    pub curve: Vec<CurvePoint>,
    pub transitions: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    /// Training hit non-finite values; `checkpoint` is the last good network.
    #[error("training diverged: {error}")]
    Diverged { error: LearningError, checkpoint: alloc::boxed::Box<TrainedModel> },
}

/// Shared per-run bookkeeping for both learners.
#[derive(Debug, Clone)]
struct Tally {
    budget: u64,
    transitions: u64,
    curve: Vec<CurvePoint>,
    returns: BTreeMap<u64, f64>,
    error: Option<LearningError>,
    report: PolicyReport,
}

impl Tally {
    fn new(name: &str, budget: u64) -> Self {
        Self {
            budget,
            transitions: 0,
            curve: Vec::new(),
            returns: BTreeMap::new(),
            error: None,
            report: PolicyReport { name: String::from(name), ..PolicyReport::default() },
        }
    }

    fn done(&self) -> bool {
        self.transitions >= self.budget || self.error.is_some()
    }

    fn record(&mut self, packet: u64, r: f64, terminal: bool, loss: Option<f64>) {
        self.transitions += 1;
        *self.returns.entry(packet).or_insert(0.0) += r;
        let episode_return = if terminal { self.returns.remove(&packet) } else { None };
        self.curve.push(CurvePoint { step: self.transitions, loss, episode_return });
    }

    /// Episodes cut by the end of a simulator run never finish.
    fn new_run(&mut self) {
        self.returns.clear();
    }
}

/// ε-greedy DDQN learner acting in the simulator.
pub struct DdqnTrainer {
    agent: DdqnAgent,
    reward: RewardWeights,
    rng: ChaCha8Rng,
    pending: BTreeMap<u64, (RoutingState, usize)>,
    checkpoint: Mlp,
    tally: Tally,
}

impl DdqnTrainer {
    pub fn new(config: DdqnConfig, reward: RewardWeights, budget: u64, seed: u64) -> Result<Self, LearningError> {
        let agent = DdqnAgent::new(config, seed)?;
        Ok(Self {
            checkpoint: agent.online.clone(),
            agent,
            reward,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac70),
            pending: BTreeMap::new(),
            tally: Tally::new("madrl", budget),
        })
    }

    pub fn agent(&self) -> &DdqnAgent {
        &self.agent
    }
}

impl RoutingPolicy for DdqnTrainer {
    fn name(&self) -> &str {
        &self.tally.report.name
    }

    fn needs_observation(&self) -> bool {
        true
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, _view: &NetworkView<'_>) -> Decision {
        let Some(obs) = query.observation else { return Decision::Drop };
        if self.tally.done() {
            return Decision::Drop;
        }
        self.tally.report.decisions += 1;
        let eps = self.agent.config.epsilon.value(self.tally.transitions);
        let q = self.agent.online.forward(obs.state.as_slice());
        let Ok(a) = epsilon_greedy(&q, eps, &obs.mask, &mut self.rng) else { return Decision::Drop };
        self.pending.insert(query.packet, (obs.state, a));
        Direction::from_index(a).map_or(Decision::Drop, Decision::Forward)
    }

    fn feedback(&mut self, fb: &HopFeedback<'_>) {
        let Some((state, action)) = self.pending.remove(&fb.packet) else { return };
        if self.tally.done() {
            return;
        }
        let r = reward(&self.reward, &fb.outcome);
        let terminal = fb.outcome.terminal.is_some();
        self.agent.remember(Transition {
            state,
            action,
            reward: r,
            next_state: fb.next.map_or(RoutingState::ZERO, |o| o.state),
            next_mask: fb.next.map_or([false; ACTIONS], |o| o.mask),
            terminal,
        });
        let loss = match self.agent.train_step() {
            Ok(l) => l,
            Err(e) => {
                self.tally.error = Some(e);
                None
            }
        };
        // Every target sync doubles as a checkpoint.
        if loss.is_some() && self.agent.train_steps() % self.agent.config.target_sync_steps == 0 {
            self.checkpoint.clone_from(&self.agent.online);
        }
        self.tally.record(fb.packet, r, terminal, loss);
    }

    fn finished(&self) -> bool {
        self.tally.done()
    }

    fn report(&self) -> PolicyReport {
        self.tally.report.clone()
    }
}

/// On-policy SARSA learner. The update for a hop waits until the next
/// action has been chosen at the following satellite.
pub struct SarsaTrainer {
    net: Mlp,
    config: SarsaConfig,
    reward: RewardWeights,
    rng: ChaCha8Rng,
    /// Decision awaiting its outcome.
    pending: BTreeMap<u64, (RoutingState, usize)>,
    /// Outcome known, waiting for `a′`.
    awaiting: BTreeMap<u64, (RoutingState, usize, f64)>,
    checkpoint: Mlp,
    tally: Tally,
}

const SARSA_CHECKPOINT_STEPS: u64 = 500;

impl SarsaTrainer {
    pub fn new(config: SarsaConfig, reward: RewardWeights, budget: u64, seed: u64) -> Self {
        let net = Mlp::new(&config.head.layers(), &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            checkpoint: net.clone(),
            net,
            config,
            reward,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac70),
            pending: BTreeMap::new(),
            awaiting: BTreeMap::new(),
            tally: Tally::new("sarsa", budget),
        }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Squared TD error before the update, used as the loss series.
    fn update(&mut self, s: &RoutingState, a: usize, r: f64, next: Option<(&RoutingState, usize)>) -> f64 {
        let target = r + next.map_or(0.0, |(s2, a2)| self.config.gamma * self.net.value(s2, a2));
        let err = self.net.value(s, a) - target;
        sarsa_step(&mut self.net, s, a, r, next, self.config.learning_rate, self.config.gamma);
        if !self.net.is_finite() || !err.is_finite() {
            self.tally.error = Some(LearningError::Divergence { step: self.tally.transitions, loss: err * err });
        } else if (self.tally.transitions + 1) % SARSA_CHECKPOINT_STEPS == 0 {
            self.checkpoint.clone_from(&self.net);
        }
        err * err
    }
}

impl RoutingPolicy for SarsaTrainer {
    fn name(&self) -> &str {
        &self.tally.report.name
    }

    fn needs_observation(&self) -> bool {
        true
    }

    fn decide(&mut self, query: &DecisionQuery<'_>, _view: &NetworkView<'_>) -> Decision {
        let Some(obs) = query.observation else { return Decision::Drop };
        if self.tally.done() {
            return Decision::Drop;
        }
        self.tally.report.decisions += 1;
        let eps = self.config.epsilon.value(self.tally.transitions);
        let q = self.net.forward(obs.state.as_slice());
        let Ok(a) = epsilon_greedy(&q, eps, &obs.mask, &mut self.rng) else { return Decision::Drop };
        if let Some((s, prev, r)) = self.awaiting.remove(&query.packet) {
            let loss = self.update(&s, prev, r, Some((&obs.state, a)));
            self.tally.record(query.packet, r, false, Some(loss));
        }
        self.pending.insert(query.packet, (obs.state, a));
        Direction::from_index(a).map_or(Decision::Drop, Decision::Forward)
    }

    fn feedback(&mut self, fb: &HopFeedback<'_>) {
        let Some((s, a)) = self.pending.remove(&fb.packet) else { return };
        if self.tally.done() {
            return;
        }
        let r = reward(&self.reward, &fb.outcome);
        if fb.outcome.terminal.is_some() {
            let loss = self.update(&s, a, r, None);
            self.tally.record(fb.packet, r, true, Some(loss));
        } else {
            self.awaiting.insert(fb.packet, (s, a, r));
        }
    }

    fn finished(&self) -> bool {
        self.tally.done()
    }

    fn report(&self) -> PolicyReport {
        self.tally.report.clone()
    }
}

trait Learner: RoutingPolicy {
    fn tally(&mut self) -> &mut Tally;
    fn clear_episodes(&mut self);
}

impl Learner for DdqnTrainer {
    fn tally(&mut self) -> &mut Tally {
        &mut self.tally
    }
    fn clear_episodes(&mut self) {
        self.pending.clear();
    }
}

impl Learner for SarsaTrainer {
    fn tally(&mut self) -> &mut Tally {
        &mut self.tally
    }
    fn clear_episodes(&mut self) {
        self.pending.clear();
        self.awaiting.clear();
    }
}

fn run_seed(seed: u64, run: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ run.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ salt
}

/// Chain simulator runs until the learner has consumed its budget.
fn drive(env: &TrainingEnv, learner: &mut dyn Learner, seed: u64) -> Result<(), TrainError> {
    if learner.tally().budget == 0 {
        return Ok(());
    }
    let constellation = Constellation::new(env.constellation.clone()).map_err(SimError::from)?;
    let has_traffic = env.traffic.as_ref().is_some_and(|t| t.rate_bps > 0.0) || env.satellite_packets_per_s > 0.0;
    if !has_traffic || env.sim.horizon_s <= 0.0 {
        return Err(SimError::Config { field: "training traffic", reason: "training needs packets and a positive horizon" }.into());
    }
    let mut run = 0u64;
    let mut last_transitions = 0u64;
    let mut idle_runs = 0u32;
    while !learner.finished() {
        let mut sim = env.sim.clone();
        sim.start_time_s = env.sim.start_time_s + run as f64 * env.sim.horizon_s;
        let mut engine = Engine::new(sim, constellation.clone(), env.gateways.clone())?;
        if let Some(pattern) = env.traffic.as_ref().filter(|t| t.rate_bps > 0.0) {
            let pattern = TrafficPattern { seed: run_seed(seed, run, 1), ..pattern.clone() };
            let generator = TrafficGenerator::new(pattern, &env.gateways).map_err(SimError::from)?;
            engine = engine.with_background(generator);
        }
        if env.satellite_packets_per_s > 0.0 {
            engine = engine.with_satellite_traffic(SatelliteTraffic::new(env.satellite_packets_per_s, run_seed(seed, run, 2)));
        }
        learner.tally().new_run();
        learner.clear_episodes();
        engine.run(learner)?;
        run += 1;
        let t = learner.tally().transitions;
        if t == last_transitions {
            idle_runs += 1;
            if idle_runs >= 3 {
                return Err(SimError::Config { field: "training traffic", reason: "runs produce no transitions" }.into());
            }
        } else {
            idle_runs = 0;
        }
        last_transitions = t;
    }
    Ok(())
}

fn finish(
    algorithm: &str,
    network: Mlp,
    checkpoint: Mlp,
    tally: Tally,
    seed: u64,
) -> Result<TrainedModel, TrainError> {
    let model =
        |net| TrainedModel { algorithm: String::from(algorithm), network: net, curve: tally.curve.clone(), transitions: tally.transitions, seed };
    match tally.error.clone() {
        Some(error) => Err(TrainError::Diverged { error, checkpoint: alloc::boxed::Box::new(model(checkpoint)) }),
        None => Ok(model(network)),
    }
}

/// Train the global DDQN for `iterations` transitions (one optimizer step
/// each once the replay memory holds a batch).
pub fn train_global(
    env: &TrainingEnv,
    config: &DdqnConfig,
    reward: RewardWeights,
    iterations: u64,
    seed: u64,
) -> Result<TrainedModel, TrainError> {
    let mut trainer = DdqnTrainer::new(config.clone(), reward, iterations, seed)?;
    drive(env, &mut trainer, seed)?;
    let DdqnTrainer { agent, checkpoint, tally, .. } = trainer;
    finish("madrl", agent.online, checkpoint, tally, seed)
}

/// Train the SARSA baseline for `iterations` transitions.
pub fn train_sarsa(
    env: &TrainingEnv,
    config: &SarsaConfig,
    reward: RewardWeights,
    iterations: u64,
    seed: u64,
) -> Result<TrainedModel, TrainError> {
    let mut trainer = SarsaTrainer::new(config.clone(), reward, iterations, seed);
    drive(env, &mut trainer, seed)?;
    let SarsaTrainer { net, checkpoint, tally, .. } = trainer;
    finish("sarsa", net, checkpoint, tally, seed)
}

/// Satellites visited by greedily following `net` from `src` on the
/// engine's current snapshot, queues as they are. `None` if the walk
/// dead-ends or exceeds the hop limit.
pub fn greedy_path(engine: &Engine, net: &Mlp, src: usize, dst: Endpoint) -> Option<Vec<usize>> {
    let target = match dst {
        Endpoint::Satellite(s) => s,
        Endpoint::Gateway(g) => engine.snapshot().gateway_attachment.get(g).copied().flatten()?,
    };
    let mut path = alloc::vec![src];
    let mut sat = src;
    while sat != target {
        if path.len() > engine.hop_limit() {
            return None;
        }
        let obs = engine.observation(sat, dst);
        let a = masked_argmax(&net.forward(obs.state.as_slice()), &obs.mask)?;
        sat = engine.topology().isl[sat][a]?;
        path.push(sat);
    }
    Some(path)
}
