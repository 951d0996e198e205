use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leoroute::config::Config;
use leoroute::formats::{read_model, write_model};
use leoroute::output::{read_manifest, read_summary};
use leoroute::study::{self, Scenario};
use leoroute_core::learning::nn::masked_argmax;
use leoroute_core::learning::{Mlp, STATE_DIM};
use leoroute_core::sim::Engine;
use leoroute_core::traffic::Endpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_leoroute"));
    // Keep the caller's environment from steering the runs.
    for k in ["LEOROUTE_CONFIG", "LEOROUTE_SEED", "LEOROUTE_OUT", "LEOROUTE_POLICIES", "LEOROUTE_FORCE", "LEOROUTE_WORKERS"] {
        c.env_remove(k);
    }
    c
}

fn leo(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
policies = ["dijkstra"]
[study.latency]
seeds = [4]
horizon_s = 0.5
rate_bps = 2e7
"#;

const SMALL_TRAINING: &str = r#"
[training]
madrl_iterations = 300
sarsa_iterations = 300
horizon_s = 1.0
[ddqn]
batch_size = 16
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn single_policy_single_seed_manifest_lists_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = leo(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].status, "ok");
    assert_eq!(m.seeds, vec![4]);
    assert_eq!(m.config_hash.len(), 64);
    for f in &m.files {
        assert!(out.join(&f.path).exists(), "{}", f.path);
    }
}

#[test]
fn rerun_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    assert_eq!(code(&leo(&["run", "--config", s(&cfg), "--out", s(&out)])), 0);
    let summary = fs::read(out.join("summary.csv")).unwrap();

    let again = leo(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    assert_eq!(code(&leo(&["run", "--config", s(&cfg), "--out", s(&out), "--force"])), 0);
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), summary);
}

#[test]
fn metrics_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
policies = ["dijkstra"]
[study.latency]
seeds = [1, 2, 3]
horizon_s = 0.5
rate_bps = 2e7
"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&leo(&["run", "--config", s(&cfg), "--out", s(&a), "--workers", "1"])), 0);
    assert_eq!(code(&leo(&["run", "--config", s(&cfg), "--out", s(&b), "--workers", "3"])), 0);
    for f in ["summary.csv", "runs/latency-dijkstra-s2.csv", "figures/fig1_latency.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "policies = [\"dijkstra\"]\n[study.latency]\nhorizon_s = 0.2\nrate_bps = 1e7\nseeds = [9]\n");
    let out = dir.path().join("out");
    let o = bin()
        .args(["run"])
        .env("LEOROUTE_CONFIG", &cfg)
        .env("LEOROUTE_OUT", &out)
        .env("LEOROUTE_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_manifest(&out).unwrap().seed, 77);
    let echo = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(echo.contains("seed = 77"));
}

#[test]
fn validate_reports_field_paths_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[constellation]\naltitude_km = -5.0\n");
    let o = leo(&["validate", "--config", s(&cfg), "--out", s(&dir.path().join("v"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("constellation.altitude_km"));

    let cfg = write_config(dir.path(), "[sim]\nhorizon = 5.0\n");
    let o = leo(&["validate", "--config", s(&cfg), "--out", s(&dir.path().join("v"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim"));

    let o = leo(&["run", "--policies", "dijkstra,ospf", "--out", s(&dir.path().join("v"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_echo_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\n[constellation]\nplanes = 6\n");
    let out = dir.path().join("v");
    assert_eq!(code(&leo(&["validate", "--config", s(&cfg), "--out", s(&out)])), 0);
    let echo = out.join("config.resolved.toml");
    let first = Config::load(&echo).unwrap();
    assert_eq!(first.seed, 3);
    assert_eq!(first.constellation.planes, 6);
    assert_eq!(first, Config::load(&cfg).unwrap());
    assert_eq!(first.echo(), fs::read_to_string(&echo).unwrap());
}

#[test]
fn zero_iterations_yield_the_initial_network_and_no_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 12\npolicies = [\"madrl\", \"sarsa\"]\n[training]\nmadrl_iterations = 0\nsarsa_iterations = 0\n");
    let out = dir.path().join("t");
    let o = leo(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let config = Config::load(&cfg).unwrap();
    let m = read_model(&fs::read_to_string(out.join("models/madrl.model")).unwrap()).unwrap();
    let init = Mlp::new(&config.ddqn.layers, &mut ChaCha8Rng::seed_from_u64(12));
    assert_eq!(m.network, init);
    assert_eq!((m.step, m.seed), (0, 12));
    assert_eq!(m.config_hash, config.hash());

    let sm = read_model(&fs::read_to_string(out.join("models/sarsa.model")).unwrap()).unwrap();
    assert_eq!(sm.network, Mlp::new(&config.sarsa.head.layers(), &mut ChaCha8Rng::seed_from_u64(12)));

    for a in ["madrl", "sarsa"] {
        let curve = fs::read_to_string(out.join(format!("curves/{a}_curve.csv"))).unwrap();
        assert!(curve.lines().count() <= 1, "{curve}");
    }
}

#[test]
fn same_seed_trains_byte_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("policies = [\"madrl\", \"sarsa\"]\n{SMALL_TRAINING}"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&leo(&["train", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&leo(&["train", "--config", s(&cfg), "--out", s(&b)])), 0);
    for f in ["models/madrl.model", "models/sarsa.model", "curves/madrl_curve.csv", "curves/sarsa_curve.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = read_model(&fs::read_to_string(a.join("models/madrl.model")).unwrap()).unwrap();
    assert_eq!(m.step, 300);
    // Existing models are not silently replaced.
    assert_eq!(code(&leo(&["train", "--config", s(&cfg), "--out", s(&a)])), 1);
}

#[test]
fn divergence_keeps_a_checkpoint_and_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "policies = [\"madrl\"]\n[training]\nmadrl_iterations = 3000\n[ddqn]\nbatch_size = 8\nlearning_rate = 1e300\n",
    );
    let out = dir.path().join("t");
    let o = leo(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = read_model(&fs::read_to_string(out.join("models/madrl.checkpoint.model")).unwrap()).unwrap();
    assert!(ck.network.is_finite());
    assert!(!out.join("models/madrl.model").exists());
}

#[test]
fn loaded_model_decides_like_the_trained_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::from_toml(&format!("policies = [\"madrl\"]\n{SMALL_TRAINING}"), dir.path()).unwrap();
    let scenario = Scenario::from_config(&cfg).unwrap();
    let trained = study::train(&cfg, &scenario, "madrl").unwrap();
    let text = write_model(&study::model_file(&trained, &cfg.hash()));
    let loaded = read_model(&text).unwrap().network;

    // Observations from a live engine plus random states.
    let engine = Engine::new(cfg.sim.clone(), scenario.constellation.clone(), scenario.gateways.clone()).unwrap();
    let mut corpus = Vec::new();
    for sat in 0..scenario.constellation.len() {
        for g in 0..scenario.gateways.len() {
            corpus.push(engine.observation(sat, Endpoint::Gateway(g)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut decided = 0;
    for o in &corpus {
        let a = masked_argmax(&trained.network.forward(o.state.as_slice()), &o.mask);
        assert_eq!(a, masked_argmax(&loaded.forward(o.state.as_slice()), &o.mask));
        decided += a.is_some() as usize;
    }
    assert!(decided > 1000);
    for _ in 0..500 {
        let x: Vec<f64> = (0..STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(trained.network.forward(&x), loaded.forward(&x));
    }
}

#[test]
fn three_policy_figures_replot_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL_TRAINING}\n[study.latency]\nseeds = [1]\nhorizon_s = 0.5\nrate_bps = 2e7\n"),
    );
    let out = dir.path().join("out");
    let o = leo(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let summary = read_summary(&out.join("summary.csv")).unwrap();
    let policies: Vec<&str> = summary.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(policies, ["dijkstra", "madrl", "sarsa"]);

    let figs = out.join("figures");
    let before: Vec<(PathBuf, Vec<u8>)> =
        fs::read_dir(&figs).unwrap().map(|e| e.unwrap().path()).map(|p| (p.clone(), fs::read(&p).unwrap())).collect();
    assert!(before.iter().any(|(p, _)| p.ends_with("fig1_latency.svg")));
    fs::remove_dir_all(&figs).unwrap();
    assert_eq!(code(&leo(&["plot", "--out", s(&out)])), 0);
    for (p, bytes) in &before {
        assert_eq!(&fs::read(p).unwrap(), bytes, "{}", p.display());
    }

    // The grouped latency table matches a hand aggregation of the summary.
    let fig1 = fs::read_to_string(figs.join("fig1_latency.csv")).unwrap();
    let rows: Vec<&str> = fig1.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, s) in rows.iter().zip(&summary) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], s.policy);
        let mean: f64 = cols[3].parse().unwrap();
        assert_eq!(mean, s.mean_latency_ms.unwrap());
    }
}
