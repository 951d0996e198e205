//! Experiment configuration: one TOML file, every field defaulted, unknown
//! keys rejected. The resolved echo written next to the outputs is the
//! normative record of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use leoroute_core::learning::{DdqnConfig, OnlineConfig, RewardWeights, SarsaConfig};
use leoroute_core::orbital::{ConstellationParams, EARTH_RADIUS_KM};
use leoroute_core::resilience::FailureKind;
use leoroute_core::sim::{CostModel, SimConfig};
use leoroute_core::traffic::TrafficKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: at `{field}`: {message}")]
    Parse { path: PathBuf, field: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_owned(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// Walker phasing factor F.
    pub phasing: u32,
    pub polar_seam: bool,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self { planes: 8, sats_per_plane: 8, altitude_km: 1200.0, inclination_deg: 53.0, phasing: 1, polar_seam: false }
    }
}

impl ConstellationConfig {
    pub fn params(&self) -> ConstellationParams {
        ConstellationParams {
            plane_count: self.planes,
            sats_per_plane: self.sats_per_plane,
            altitude_km: self.altitude_km,
            inclination_rad: self.inclination_deg.to_radians(),
            eccentricity: 1e-5,
            phasing_offset_rad: 0.0,
            earth_radius_km: EARTH_RADIUS_KM,
            polar_seam: self.polar_seam,
        }
        .with_walker_phasing(self.phasing)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Gateway CSV; the built-in 20-city set when absent.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub kind: TrafficKind,
    pub packet_bits: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { kind: TrafficKind::Population, packet_bits: 64_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomFailures {
    pub count: usize,
    pub mean_duration_s: f64,
    pub kind: FailureKind,
}

impl Default for RandomFailures {
    fn default() -> Self {
        Self { count: 0, mean_duration_s: 5.0, kind: FailureKind::Hardware }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureConfig {
    /// Failure schedule CSV applied to every run.
    pub file: Option<PathBuf>,
    /// Extra seeded random failures per run, drawn over the horizon.
    pub random: Option<RandomFailures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub madrl_iterations: u64,
    pub sarsa_iterations: u64,
    /// Length of one chained simulator run.
    pub horizon_s: f64,
    /// Gateway traffic during training.
    pub rate_bps: f64,
    /// Satellite-to-satellite training episodes per second.
    pub satellite_packets_per_s: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            madrl_iterations: 20_000,
            sarsa_iterations: 20_000,
            horizon_s: 5.0,
            rate_bps: 2e7,
            satellite_packets_per_s: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub madrl: Option<PathBuf>,
    pub sarsa: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyStudy {
    pub seeds: Vec<u64>,
    pub horizon_s: f64,
    pub rate_bps: f64,
}

impl Default for LatencyStudy {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], horizon_s: 5.0, rate_bps: 2e8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalStudy {
    pub seeds: Vec<u64>,
    pub intervals_s: Vec<f64>,
    pub horizon_s: f64,
    pub rate_bps: f64,
    /// Orbit epoch spacing between seeds, so seeds see different geometry.
    pub epoch_spacing_s: f64,
}

impl Default for IntervalStudy {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], intervals_s: vec![1.0, 5.0, 10.0, 20.0], horizon_s: 60.0, rate_bps: 0.0, epoch_spacing_s: 600.0 }
    }
}

/// Same shape as [`IntervalStudy`] but loaded: learned decision cost is
/// per packet, so an idle network would cost nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostStudy {
    pub seeds: Vec<u64>,
    pub intervals_s: Vec<f64>,
    pub horizon_s: f64,
    pub rate_bps: f64,
    pub epoch_spacing_s: f64,
}

impl Default for CostStudy {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], intervals_s: vec![1.0, 5.0, 10.0, 20.0], horizon_s: 60.0, rate_bps: 2e7, epoch_spacing_s: 600.0 }
    }
}

impl From<&CostStudy> for IntervalStudy {
    fn from(c: &CostStudy) -> Self {
        Self {
            seeds: c.seeds.clone(),
            intervals_s: c.intervals_s.clone(),
            horizon_s: c.horizon_s,
            rate_bps: c.rate_bps,
            epoch_spacing_s: c.epoch_spacing_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResilienceStudy {
    pub seeds: Vec<u64>,
    /// Background traffic levels.
    pub levels_bps: Vec<f64>,
    /// Tagged measurement traffic, identical at every level.
    pub probe_bps: f64,
    pub horizon_s: f64,
}

impl Default for ResilienceStudy {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], levels_bps: vec![1e8, 5e8, 1e9], probe_bps: 2e7, horizon_s: 3.0 }
    }
}

/// Studies to run. When none is given, `run` does a latency study.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Studies {
    pub latency: Option<LatencyStudy>,
    pub cost: Option<CostStudy>,
    pub path_change: Option<IntervalStudy>,
    pub resilience: Option<ResilienceStudy>,
}

impl Studies {
    pub fn is_empty(&self) -> bool {
        self.latency.is_none() && self.cost.is_none() && self.path_change.is_none() && self.resilience.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed for training and derived streams.
    pub seed: u64,
    pub policies: Vec<String>,
    pub constellation: ConstellationConfig,
    pub gateways: GatewayConfig,
    pub sim: SimConfig,
    pub traffic: TrafficConfig,
    pub failures: FailureConfig,
    pub cost: CostModel,
    /// Dijkstra recalculation interval outside interval studies.
    pub recalc_interval_s: f64,
    pub reward: RewardWeights,
    pub ddqn: DdqnConfig,
    pub sarsa: SarsaConfig,
    pub online: OnlineConfig,
    pub training: TrainingConfig,
    pub models: ModelPaths,
    pub study: Studies,
}

pub const POLICIES: [&str; 3] = ["dijkstra", "madrl", "sarsa"];

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            policies: POLICIES.iter().map(|s| s.to_string()).collect(),
            constellation: ConstellationConfig::default(),
            gateways: GatewayConfig::default(),
            sim: SimConfig::default(),
            traffic: TrafficConfig::default(),
            failures: FailureConfig::default(),
            cost: CostModel::default(),
            recalc_interval_s: 1.0,
            reward: RewardWeights::default(),
            ddqn: DdqnConfig::default(),
            sarsa: SarsaConfig::default(),
            online: OnlineConfig::default(),
            training: TrainingConfig::default(),
            models: ModelPaths::default(),
            study: Studies::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse { path: origin.to_owned(), field, message: e.into_inner().message().trim().to_owned() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Make referenced files relative to the config's directory absolute.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut().filter(|x| x.is_relative()) {
                *x = base.join(&*x);
            }
        };
        fix(&mut self.gateways.file);
        fix(&mut self.failures.file);
        fix(&mut self.models.madrl);
        fix(&mut self.models.sarsa);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sim_err = |e: leoroute_core::sim::SimError| match e {
            leoroute_core::sim::SimError::Config { field, reason } => invalid(&format!("sim.{field}"), reason),
            other => invalid("sim", other.to_string()),
        };
        self.sim.validate().map_err(sim_err)?;
        let c = &self.constellation;
        if c.planes == 0 {
            return Err(invalid("constellation.planes", "must be positive"));
        }
        if c.sats_per_plane == 0 {
            return Err(invalid("constellation.sats_per_plane", "must be positive"));
        }
        if !(c.altitude_km > 0.0) {
            return Err(invalid("constellation.altitude_km", format!("must be positive, got {}", c.altitude_km)));
        }
        if !(0.0..=180.0).contains(&c.inclination_deg) {
            return Err(invalid("constellation.inclination_deg", "must be within [0, 180]"));
        }
        if c.phasing >= c.planes {
            return Err(invalid("constellation.phasing", "must be below planes"));
        }
        c.params()
            .validate()
            .map_err(|e| invalid("constellation", e.to_string()))?;
        for p in &self.policies {
            if !POLICIES.contains(&p.as_str()) {
                return Err(invalid("policies", format!("unknown policy `{p}` (expected one of {POLICIES:?})")));
            }
        }
        if !(self.recalc_interval_s > 0.0) {
            return Err(invalid("recalc_interval_s", "must be positive"));
        }
        self.ddqn.check_shape().map_err(|e| invalid("ddqn.layers", e.to_string()))?;
        if self.ddqn.batch_size == 0 || self.ddqn.batch_size > self.ddqn.replay_capacity {
            return Err(invalid("ddqn.batch_size", "must be in 1..=replay_capacity"));
        }
        if self.ddqn.target_sync_steps == 0 {
            return Err(invalid("ddqn.target_sync_steps", "must be positive"));
        }
        if !(self.training.horizon_s > 0.0) {
            return Err(invalid("training.horizon_s", "must be positive"));
        }
        if self.traffic.packet_bits != self.sim.packet_bits {
            return Err(invalid("traffic.packet_bits", "must equal sim.packet_bits"));
        }
        let seeds = |field: &str, s: &[u64]| {
            if s.is_empty() {
                Err(invalid(field, "needs at least one seed"))
            } else {
                Ok(())
            }
        };
        if let Some(l) = &self.study.latency {
            seeds("study.latency.seeds", &l.seeds)?;
            if !(l.horizon_s > 0.0) {
                return Err(invalid("study.latency.horizon_s", "must be positive"));
            }
        }
        let cost = self.study.cost.as_ref().map(IntervalStudy::from);
        for (name, s) in [("cost", &cost), ("path_change", &self.study.path_change)] {
            if let Some(s) = s {
                seeds(&format!("study.{name}.seeds"), &s.seeds)?;
                if s.intervals_s.is_empty() || s.intervals_s.iter().any(|&i| !(i > 0.0)) {
                    return Err(invalid(&format!("study.{name}.intervals_s"), "needs positive intervals"));
                }
            }
        }
        if let Some(r) = &self.study.resilience {
            seeds("study.resilience.seeds", &r.seeds)?;
            if r.levels_bps.is_empty() || r.levels_bps.iter().any(|&x| !(x >= 0.0)) {
                return Err(invalid("study.resilience.levels_bps", "needs non-negative levels"));
            }
            if !(r.probe_bps > 0.0) {
                return Err(invalid("study.resilience.probe_bps", "must be positive"));
            }
        }
        Ok(())
    }

    /// The resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved echo, hex.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.echo().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = Config::default();
        c.study.latency = Some(LatencyStudy::default());
        c.models.madrl = Some(PathBuf::from("/tmp/m.txt"));
        let back = Config::from_toml(&c.echo(), Path::new("echo")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(Config::from_toml("", Path::new("x")).unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = Config::from_toml("[sim]\ndt = 0.1\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sim.dt"), "{msg}");
    }

    #[test]
    fn wrong_type_names_its_path() {
        let err = Config::from_toml("[ddqn.epsilon]\nstart = \"high\"\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("ddqn.epsilon.start"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = Config::from_toml("[sim]\ndt_s = -1.0\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("sim.dt_s"), "{err}");
        let err = Config::from_toml("policies = [\"ospf\"]\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("policies"), "{err}");
    }
}
