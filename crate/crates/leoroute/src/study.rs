//! Planning and executing the runs behind the four figures.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use leoroute_core::learning::{AgentPool, Mlp};
use leoroute_core::orbital::{Constellation, Gateway};
use leoroute_core::resilience::{random_schedule, FailureEvent};
use leoroute_core::sim::{
    train_global, train_sarsa, DijkstraConfig, DijkstraPolicy, Engine, LearnedPolicy, MetricsLedger, RoutingPolicy,
    SimConfig, SimError, TrainError, TrainedModel, TrainingEnv,
};
use leoroute_core::traffic::{TrafficGenerator, TrafficPattern};

use crate::config::{Config, ConfigError, IntervalStudy, LatencyStudy};
use crate::formats::{self, ModelFile};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("model {path}: {reason}")]
    Model { path: String, reason: String },
    #[error("policy `{0}` needs a model")]
    MissingModel(String),
}

/// Constellation, gateways and the fixed failure schedule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub constellation: Constellation,
    pub gateway_names: Vec<String>,
    pub gateways: Vec<Gateway>,
    pub failures: Vec<FailureEvent>,
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self, StudyError> {
        let constellation = Constellation::new(cfg.constellation.params()).map_err(SimError::from)?;
        let (gateway_names, gateways) = match &cfg.gateways.file {
            Some(p) => formats::read_gateways(open(p)?)?,
            None => formats::builtin_gateways(),
        };
        let failures = match &cfg.failures.file {
            Some(p) => formats::read_failures(open(p)?)?,
            None => Vec::new(),
        };
        Ok(Self { constellation, gateway_names, gateways, failures })
    }
}

fn open(p: &std::path::Path) -> Result<std::fs::File, StudyError> {
    std::fs::File::open(p).map_err(|e| StudyError::Format(formats::FormatError::Io(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Latency,
    Cost,
    PathChange,
    Resilience,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Latency => "latency",
            StudyKind::Cost => "cost",
            StudyKind::PathChange => "path_change",
            StudyKind::Resilience => "resilience",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One simulation. `param` is the recalculation interval (cost, path
/// change) or the background level (resilience); 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: String,
    pub study: StudyKind,
    pub policy: String,
    pub seed: u64,
    pub param: f64,
}

fn spec(study: StudyKind, policy: &str, seed: u64, param: f64) -> RunSpec {
    let id = match study {
        StudyKind::Latency => format!("{study}-{policy}-s{seed}"),
        _ => format!("{study}-{policy}-s{seed}-p{param}"),
    };
    RunSpec { id, study, policy: policy.to_owned(), seed, param }
}

/// Every run the configured studies need, in a fixed order.
pub fn plan(cfg: &Config) -> Vec<RunSpec> {
    let mut out = Vec::new();
    let default_latency = LatencyStudy { seeds: vec![cfg.seed], ..LatencyStudy::default() };
    let latency = match (&cfg.study.latency, cfg.study.is_empty()) {
        (Some(l), _) => Some(l),
        (None, true) => Some(&default_latency),
        (None, false) => None,
    };
    if let Some(l) = latency {
        for p in &cfg.policies {
            for &s in &l.seeds {
                out.push(spec(StudyKind::Latency, p, s, 0.0));
            }
        }
    }
    if let Some(c) = &cfg.study.cost {
        for p in &cfg.policies {
            for &s in &c.seeds {
                if p == "dijkstra" {
                    for &i in &c.intervals_s {
                        out.push(spec(StudyKind::Cost, p, s, i));
                    }
                } else {
                    // Learned decision cost does not depend on the interval.
                    out.push(spec(StudyKind::Cost, p, s, 0.0));
                }
            }
        }
    }
    if let Some(c) = &cfg.study.path_change {
        if cfg.policies.iter().any(|p| p == "dijkstra") {
            for &s in &c.seeds {
                for &i in &c.intervals_s {
                    out.push(spec(StudyKind::PathChange, "dijkstra", s, i));
                }
            }
        }
    }
    if let Some(r) = &cfg.study.resilience {
        for p in &cfg.policies {
            for &s in &r.seeds {
                for &level in &r.levels_bps {
                    out.push(spec(StudyKind::Resilience, p, s, level));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Models {
    pub madrl: Option<ModelFile>,
    pub sarsa: Option<ModelFile>,
}

impl Models {
    pub fn load(cfg: &Config) -> Result<Self, StudyError> {
        let load = |p: &Option<std::path::PathBuf>, algo: &str| -> Result<Option<ModelFile>, StudyError> {
            let Some(p) = p else { return Ok(None) };
            let text = std::fs::read_to_string(p).map_err(|e| StudyError::Model { path: p.display().to_string(), reason: e.to_string() })?;
            let m = formats::read_model(&text).map_err(|e| StudyError::Model { path: p.display().to_string(), reason: e.to_string() })?;
            if m.algorithm != algo {
                return Err(StudyError::Model { path: p.display().to_string(), reason: format!("holds a `{}` model", m.algorithm) });
            }
            Ok(Some(m))
        };
        Ok(Self { madrl: load(&cfg.models.madrl, "madrl")?, sarsa: load(&cfg.models.sarsa, "sarsa")? })
    }

    fn network(&self, policy: &str) -> Result<&Mlp, StudyError> {
        let m = match policy {
            "madrl" => &self.madrl,
            _ => &self.sarsa,
        };
        m.as_ref().map(|m| &m.network).ok_or_else(|| StudyError::MissingModel(policy.to_owned()))
    }
}

pub fn training_env(cfg: &Config, scenario: &Scenario) -> TrainingEnv {
    let t = &cfg.training;
    TrainingEnv {
        sim: SimConfig { horizon_s: t.horizon_s, ..cfg.sim.clone() },
        constellation: cfg.constellation.params(),
        gateways: scenario.gateways.clone(),
        traffic: (t.rate_bps > 0.0).then(|| TrafficPattern {
            kind: cfg.traffic.kind,
            rate_bps: t.rate_bps,
            envelope_rate_bps: None,
            packet_bits: cfg.traffic.packet_bits,
            seed: cfg.seed,
        }),
        satellite_packets_per_s: t.satellite_packets_per_s,
    }
}

pub fn train(cfg: &Config, scenario: &Scenario, algorithm: &str) -> Result<TrainedModel, TrainError> {
    let env = training_env(cfg, scenario);
    match algorithm {
        "madrl" => train_global(&env, &cfg.ddqn, cfg.reward, cfg.training.madrl_iterations, cfg.seed),
        _ => train_sarsa(&env, &cfg.sarsa, cfg.reward, cfg.training.sarsa_iterations, cfg.seed),
    }
}

pub fn model_file(m: &TrainedModel, config_hash: &str) -> ModelFile {
    ModelFile {
        algorithm: m.algorithm.clone(),
        seed: m.seed,
        step: m.transitions,
        config_hash: config_hash.to_owned(),
        network: m.network.clone(),
    }
}

fn stream(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

/// Simulator settings, traffic and failures for one run.
pub fn build_engine(cfg: &Config, scenario: &Scenario, run: &RunSpec) -> Result<Engine, StudyError> {
    let mut sim = cfg.sim.clone();
    let pattern = |rate: f64, envelope: Option<f64>, seed: u64| TrafficPattern {
        kind: cfg.traffic.kind,
        rate_bps: rate,
        envelope_rate_bps: envelope,
        packet_bits: cfg.traffic.packet_bits,
        seed,
    };
    let background;
    let mut probes = None;
    match run.study {
        StudyKind::Latency => {
            let l = cfg.study.latency.clone().unwrap_or_default();
            sim.horizon_s = l.horizon_s;
            background = Some(pattern(l.rate_bps, None, stream(run.seed, 1)));
        }
        StudyKind::Cost | StudyKind::PathChange => {
            let c = match run.study {
                StudyKind::Cost => IntervalStudy::from(&cfg.study.cost.clone().unwrap_or_default()),
                _ => cfg.study.path_change.clone().unwrap_or_default(),
            };
            sim.horizon_s = c.horizon_s;
            sim.start_time_s += run.seed as f64 * c.epoch_spacing_s;
            background = Some(pattern(c.rate_bps, None, stream(run.seed, 1)));
        }
        StudyKind::Resilience => {
            let r = cfg.study.resilience.clone().unwrap_or_default();
            sim.horizon_s = r.horizon_s;
            let top = r.levels_bps.iter().copied().fold(0.0, f64::max);
            // Nested background sets across levels; the probes never change.
            background = Some(pattern(run.param, Some(top), stream(run.seed, 1)));
            probes = Some(pattern(r.probe_bps, None, stream(run.seed, 2)));
        }
    }
    let horizon = sim.horizon_s;
    let start = sim.start_time_s;
    let mut engine = Engine::new(sim, scenario.constellation.clone(), scenario.gateways.clone())?;
    if let Some(p) = background.filter(|p| p.rate_bps > 0.0) {
        engine = engine.with_background(TrafficGenerator::new(p, &scenario.gateways).map_err(SimError::from)?);
    }
    if let Some(p) = probes {
        engine = engine.with_probes(TrafficGenerator::new(p, &scenario.gateways).map_err(SimError::from)?);
    }
    let mut failures = scenario.failures.clone();
    if let Some(rf) = cfg.failures.random.as_ref().filter(|r| r.count > 0) {
        let mut rng = ChaCha8Rng::seed_from_u64(stream(run.seed, 3));
        let mut evs = random_schedule(&scenario.constellation, &mut rng, rf.count, horizon, rf.mean_duration_s, rf.kind);
        for e in &mut evs {
            e.start += start;
        }
        failures.extend(evs);
    }
    if !failures.is_empty() {
        engine = engine.with_failures(failures)?;
    }
    Ok(engine)
}

pub fn build_policy(cfg: &Config, scenario: &Scenario, models: &Models, run: &RunSpec) -> Result<Box<dyn RoutingPolicy + Send>, StudyError> {
    Ok(match run.policy.as_str() {
        "dijkstra" => {
            let interval = match run.study {
                StudyKind::Cost | StudyKind::PathChange => run.param,
                _ => cfg.recalc_interval_s,
            };
            Box::new(DijkstraPolicy::new(DijkstraConfig { recalc_interval_s: interval, cost: cfg.cost }))
        }
        name => {
            let pool = AgentPool::deploy(models.network(name)?.clone(), scenario.constellation.len(), cfg.online);
            Box::new(LearnedPolicy::new(name, pool, cfg.reward, cfg.cost))
        }
    })
}

pub fn execute(cfg: &Config, scenario: &Scenario, models: &Models, run: &RunSpec) -> Result<MetricsLedger, StudyError> {
    let mut engine = build_engine(cfg, scenario, run)?;
    let mut policy = build_policy(cfg, scenario, models, run)?;
    engine.run(policy.as_mut())?;
    Ok(engine.finish(policy.as_ref()))
}
