//! Command-line front end. `main` only parses and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use leoroute_core::learning::{Mlp, STATE_DIM};
use leoroute_core::routing::{dijkstra_tables, OpCount};
use leoroute_core::sim::{Engine, TrainError};

use crate::config::{Config, ConfigError};
use crate::formats::{self, ModelFile};
use crate::output::{self, Manifest, ManifestRun, OutputError, SummaryRow, MANIFEST_VERSION};
use crate::plot::{self, PlotError};
use crate::study::{self, Models, RunSpec, Scenario, StudyError, StudyKind};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "leoroute", version, about = "LEO satellite routing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config and write its fully resolved echo.
    Validate(Common),
    /// Train the learned policies and write model files plus curves.
    Train(Common),
    /// Execute the configured studies.
    Run(Common),
    /// Rebuild figure tables and SVGs from `<out>/summary.csv`.
    Plot(Common),
    /// Time inference and table recomputation on this machine.
    Bench(Common),
}

/// Every flag can also come from a `LEOROUTE_*` environment variable.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config; built-in defaults when absent.
    #[arg(long, env = "LEOROUTE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, env = "LEOROUTE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "LEOROUTE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated subset of dijkstra, madrl, sarsa.
    #[arg(long, env = "LEOROUTE_POLICIES", value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Overwrite an output directory from an earlier run.
    #[arg(long, env = "LEOROUTE_FORCE")]
    pub force: bool,
    /// Parallel runs; defaults to the machine's parallelism.
    #[arg(long, env = "LEOROUTE_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Study(StudyError),
    #[error("{failed} of {total} runs failed; see the manifest")]
    RunsFailed { failed: usize, total: usize },
    #[error("{0}")]
    Runtime(String),
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(c) => CliError::Config(c),
            e => CliError::Study(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(OutputError::Exists(_)) => EXIT_VALIDATION,
            CliError::Study(StudyError::Train(TrainError::Diverged { .. })) => EXIT_DIVERGED,
            _ => EXIT_RUNTIME,
        }
    }
}

pub fn main_with(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(c) => validate(&c),
        Command::Train(c) => train(&c).map(|_| ()),
        Command::Run(c) => run(&c),
        Command::Plot(c) => plot_cmd(&c),
        Command::Bench(c) => bench(&c),
    }
}

/// Config file plus command-line overrides, validated.
pub fn resolve(c: &Common) -> Result<Config, ConfigError> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = &c.policies {
        cfg.policies = p.iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(output::io_err(d))?;
    }
    fs::write(path, text).map_err(output::io_err(path))
}

pub const RESOLVED: &str = "config.resolved.toml";

fn validate(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    Scenario::from_config(&cfg)?;
    write_text(&c.out.join(RESOLVED), &cfg.echo())?;
    println!("config ok  hash {}", cfg.hash());
    Ok(())
}

pub fn model_path(out: &Path, algorithm: &str) -> PathBuf {
    out.join("models").join(format!("{algorithm}.model"))
}

pub fn curve_path(out: &Path, algorithm: &str) -> PathBuf {
    out.join("curves").join(format!("{algorithm}_curve.csv"))
}

fn learned(cfg: &Config) -> Vec<String> {
    cfg.policies.iter().filter(|p| *p != "dijkstra").cloned().collect()
}

/// Train one algorithm into `out`. A divergence still writes the last good
/// checkpoint before reporting the failure.
fn train_one(cfg: &Config, scenario: &Scenario, out: &Path, algorithm: &str) -> Result<(ModelFile, Vec<PathBuf>), CliError> {
    let hash = cfg.hash();
    let started = Instant::now();
    match study::train(cfg, scenario, algorithm) {
        Ok(m) => {
            let file = study::model_file(&m, &hash);
            let (mp, cp) = (model_path(out, algorithm), curve_path(out, algorithm));
            write_text(&mp, &formats::write_model(&file))?;
            output::write_curve(&cp, &m.curve)?;
            eprintln!("trained {algorithm}: {} steps in {:.1}s", m.transitions, started.elapsed().as_secs_f64());
            Ok((file, vec![mp, cp]))
        }
        Err(TrainError::Diverged { error, checkpoint }) => {
            let file = study::model_file(&checkpoint, &hash);
            let cp = out.join("models").join(format!("{algorithm}.checkpoint.model"));
            write_text(&cp, &formats::write_model(&file))?;
            output::write_curve(&curve_path(out, algorithm), &checkpoint.curve)?;
            eprintln!("{algorithm} diverged; checkpoint kept at {}", cp.display());
            Err(StudyError::Train(TrainError::Diverged { error, checkpoint }).into())
        }
        Err(e) => Err(StudyError::Train(e).into()),
    }
}

fn train(c: &Common) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve(c)?;
    let algos = learned(&cfg);
    if algos.is_empty() {
        return Err(ConfigError::Invalid { field: "policies".into(), reason: "train needs madrl or sarsa".into() }.into());
    }
    for a in &algos {
        if model_path(&c.out, a).exists() && !c.force {
            return Err(OutputError::Exists(c.out.clone()).into());
        }
    }
    let scenario = Scenario::from_config(&cfg)?;
    let mut written = Vec::new();
    for a in &algos {
        written.extend(train_one(&cfg, &scenario, &c.out, a)?.1);
    }
    Ok(written)
}

/// Configured model paths win; otherwise reuse `<out>/models`, training
/// whatever is still missing.
fn prepare_models(cfg: &Config, scenario: &Scenario, out: &Path) -> Result<(Models, Vec<PathBuf>), CliError> {
    let mut models = Models::load(cfg)?;
    let mut written = Vec::new();
    for a in learned(cfg) {
        let slot = if a == "madrl" { &mut models.madrl } else { &mut models.sarsa };
        if slot.is_some() {
            continue;
        }
        let p = model_path(out, &a);
        let file = if p.exists() {
            let text = fs::read_to_string(&p).map_err(output::io_err(&p))?;
            formats::read_model(&text).map_err(StudyError::from)?
        } else {
            let (file, files) = train_one(cfg, scenario, out, &a)?;
            written.extend(files);
            file
        };
        *slot = Some(file);
    }
    Ok((models, written))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    output::guard(&c.out, c.force)?;
    let scenario = Scenario::from_config(&cfg)?;
    let hash = cfg.hash();
    let resolved = c.out.join(RESOLVED);
    write_text(&resolved, &cfg.echo())?;
    let mut files = vec![resolved];

    let (models, trained) = prepare_models(&cfg, &scenario, &c.out)?;
    files.extend(trained);

    let runs = study::plan(&cfg);
    let results: Vec<(RunSpec, Result<leoroute_core::sim::MetricsLedger, StudyError>)> = pool(c.workers)?.install(|| {
        runs.par_iter().map(|r| (r.clone(), study::execute(&cfg, &scenario, &models, r))).collect()
    });

    let mut summary = Vec::new();
    let mut changes = Vec::new();
    let mut manifest_runs = Vec::new();
    for (r, res) in &results {
        let (row, error) = match res {
            Ok(ledger) => {
                let p = c.out.join("runs").join(format!("{}.csv", r.id));
                output::write_packets(&p, ledger)?;
                files.push(p);
                if r.study == StudyKind::PathChange || r.study == StudyKind::Cost {
                    changes.extend(output::path_change_rows(r, ledger));
                }
                (SummaryRow::from_ledger(r, ledger), None)
            }
            Err(e) => {
                eprintln!("run {} failed: {e}", r.id);
                (SummaryRow::failed(r), Some(e.to_string()))
            }
        };
        manifest_runs.push(ManifestRun {
            id: r.id.clone(),
            study: r.study.as_str().into(),
            policy: r.policy.clone(),
            seed: r.seed,
            param: r.param,
            status: row.status.clone(),
            error,
        });
        summary.push(row);
    }
    let sp = c.out.join("summary.csv");
    output::write_rows(&sp, summary.iter())?;
    files.push(sp.clone());
    if !changes.is_empty() {
        let p = c.out.join("path_changes.csv");
        output::write_rows(&p, changes.iter())?;
        files.push(p);
    }
    files.extend(plot::plot(&sp, &c.out.join("figures"))?);

    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let failed = manifest_runs.iter().filter(|r| r.status != "ok").count();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        tool: concat!("leoroute ", env!("CARGO_PKG_VERSION")).into(),
        config_hash: hash,
        seed: cfg.seed,
        seeds,
        policies: cfg.policies.clone(),
        runs: manifest_runs,
        files: Vec::new(),
    };
    output::write_manifest(&c.out, manifest, &files)?;
    for row in &summary {
        println!(
            "{:<40} delivered {:>7}  mean {:>9}  cost {:.3e}s",
            row.run_id,
            row.delivered,
            row.mean_latency_ms.map_or("-".into(), |m| format!("{m:.3}ms")),
            row.decision_cost_s
        );
    }
    if failed > 0 {
        return Err(CliError::RunsFailed { failed, total: results.len() });
    }
    Ok(())
}

fn plot_cmd(c: &Common) -> Result<(), CliError> {
    let written = plot::plot(&c.out.join("summary.csv"), &c.out.join("figures"))?;
    for w in written {
        println!("{}", w.display());
    }
    Ok(())
}

/// Timings to calibrate the decision-cost constants against this machine.
fn bench(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    let scenario = Scenario::from_config(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Mlp::new(&cfg.ddqn.layers, &mut rng);
    let states: Vec<Vec<f64>> = (0..256).map(|_| (0..STATE_DIM).map(|_| rng.random::<f64>()).collect()).collect();
    let reps = 20_000;
    let mut sink = 0.0;
    let t = Instant::now();
    for i in 0..reps {
        sink += net.forward(&states[i % states.len()])[0];
    }
    let per_inference = t.elapsed().as_secs_f64() / reps as f64;

    let engine = Engine::new(cfg.sim.clone(), scenario.constellation.clone(), scenario.gateways.clone()).map_err(StudyError::from)?;
    let snap = engine.snapshot();
    let rounds = 50;
    let mut ops = OpCount::default();
    let t = Instant::now();
    for _ in 0..rounds {
        let table = dijkstra_tables(
            engine.topology(),
            &snap.gateway_attachment,
            |u, v| snap.link_distance_km(u, v),
            0.0,
            cfg.cost.entry_bits,
            &mut ops,
        );
        sink += table.len() as f64;
    }
    let per_recompute = t.elapsed().as_secs_f64() / rounds as f64;
    let per_op = per_recompute / (ops.0 as f64 / rounds as f64);
    let flops = net.inference_flops();
    println!("inference_s = {per_inference:.3e}");
    println!("inference_flops = {flops}");
    println!("seconds_per_flop = {:.3e}", per_inference / flops as f64);
    println!("recompute_s = {per_recompute:.3e}");
    println!("seconds_per_op = {per_op:.3e}");
    std::hint::black_box(sink);
    Ok(())
}
