//! CSV schemas, the run manifest and the overwrite guard.
//!
//! Every CSV carries a `schema` first column naming its layout and version
//! (e.g. `summary/1`), so readers can refuse files they do not understand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use leoroute_core::sim::{CurvePoint, MetricsLedger};
use leoroute_core::traffic::Endpoint;

use crate::config::hex;
use crate::study::RunSpec;

pub const SUMMARY_SCHEMA: &str = "summary/1";
pub const PACKETS_SCHEMA: &str = "packets/1";
pub const PATH_CHANGE_SCHEMA: &str = "path_changes/1";
pub const CURVE_SCHEMA: &str = "curve/1";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{0} already holds a manifest; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: schema `{found}`, expected `{expected}`")]
    Schema { path: PathBuf, found: String, expected: &'static str },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_owned(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv { path: path.to_owned(), source }
}

/// One row per run; every figure is computed from this file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema: String,
    pub run_id: String,
    pub study: String,
    pub policy: String,
    pub seed: u64,
    pub param: f64,
    pub status: String,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub drop_rate: f64,
    pub mean_latency_ms: Option<f64>,
    pub median_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub mean_isl_hops: Option<f64>,
    pub decisions: u64,
    pub recomputations: u64,
    pub decision_cost_s: f64,
    pub path_change_pct: Option<f64>,
    pub stale_routes: u64,
    pub resilience_path: Option<f64>,
    pub resilience_link: Option<f64>,
    pub tagged_delivered: u64,
    pub online_updates: u64,
}

impl SummaryRow {
    pub fn from_ledger(run: &RunSpec, l: &MetricsLedger) -> Self {
        let s = l.summary();
        let p = l.policy.clone().unwrap_or_default();
        let ms = |x: Option<f64>| x.map(|v| v * 1e3);
        Self {
            schema: SUMMARY_SCHEMA.into(),
            run_id: run.id.clone(),
            study: run.study.as_str().into(),
            policy: run.policy.clone(),
            seed: run.seed,
            param: run.param,
            status: "ok".into(),
            generated: s.generated,
            delivered: s.delivered,
            dropped: s.dropped,
            drop_rate: s.drop_rate,
            mean_latency_ms: ms(s.mean_latency_s),
            median_latency_ms: ms(s.median_latency_s),
            p95_latency_ms: ms(s.p95_latency_s),
            mean_isl_hops: s.mean_isl_hops,
            decisions: s.decisions,
            recomputations: p.recomputations,
            decision_cost_s: s.decision_cost_s,
            path_change_pct: s.path_change_pct,
            stale_routes: s.stale_routes,
            resilience_path: s.resilience_path,
            resilience_link: s.resilience_link,
            tagged_delivered: s.tagged_delivered,
            online_updates: p.online_updates,
        }
    }

    pub fn failed(run: &RunSpec) -> Self {
        Self {
            schema: SUMMARY_SCHEMA.into(),
            run_id: run.id.clone(),
            study: run.study.as_str().into(),
            policy: run.policy.clone(),
            seed: run.seed,
            param: run.param,
            status: "failed".into(),
            generated: 0,
            delivered: 0,
            dropped: 0,
            drop_rate: 0.0,
            mean_latency_ms: None,
            median_latency_ms: None,
            p95_latency_ms: None,
            mean_isl_hops: None,
            decisions: 0,
            recomputations: 0,
            decision_cost_s: 0.0,
            path_change_pct: None,
            stale_routes: 0,
            resilience_path: None,
            resilience_link: None,
            tagged_delivered: 0,
            online_updates: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRow {
    pub schema: &'static str,
    pub packet: u64,
    pub src: String,
    pub dst: String,
    pub tagged: bool,
    pub created_s: f64,
    pub delivered_s: Option<f64>,
    pub latency_ms: Option<f64>,
    pub isl_hops: usize,
    pub drop_reason: &'static str,
    pub path_outage: Option<f64>,
    pub resilience_path: Option<f64>,
    pub resilience_link: Option<f64>,
}

fn endpoint(e: Endpoint) -> String {
    match e {
        Endpoint::Gateway(g) => format!("g{g}"),
        Endpoint::Satellite(s) => format!("s{s}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathChangeRow {
    pub schema: &'static str,
    pub run_id: String,
    pub seed: u64,
    pub interval_s: f64,
    pub time_s: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub schema: &'static str,
    pub step: u64,
    pub loss: Option<f64>,
    pub episode_return: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_packets(path: &Path, ledger: &MetricsLedger) -> Result<(), OutputError> {
    let rows = ledger.packets.iter().map(|r| PacketRow {
        schema: PACKETS_SCHEMA,
        packet: r.packet.id,
        src: endpoint(r.packet.src),
        dst: endpoint(r.packet.dst),
        tagged: r.packet.tagged,
        created_s: r.packet.created_at,
        delivered_s: r.packet.delivered_at,
        latency_ms: r.latency_s().map(|x| x * 1e3),
        isl_hops: r.packet.isl_hops(),
        drop_reason: r.packet.drop_reason.map_or("", |d| d.as_str()),
        path_outage: r.path_outage,
        resilience_path: r.resilience_path,
        resilience_link: r.resilience_link,
    });
    write_rows(path, rows)
}

pub fn path_change_rows(run: &RunSpec, ledger: &MetricsLedger) -> Vec<PathChangeRow> {
    let changes = ledger.policy.as_ref().map(|p| p.path_changes.clone()).unwrap_or_default();
    changes
        .into_iter()
        .map(|c| PathChangeRow {
            schema: PATH_CHANGE_SCHEMA,
            run_id: run.id.clone(),
            seed: run.seed,
            interval_s: run.param,
            time_s: c.time,
            percent: c.percent,
        })
        .collect()
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), OutputError> {
    write_rows(
        path,
        curve.iter().map(|c| CurveRow { schema: CURVE_SCHEMA, step: c.step, loss: c.loss, episode_return: c.episode_return }),
    )
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for row in r.deserialize::<SummaryRow>() {
        let row = row.map_err(csv_err(path))?;
        if row.schema != SUMMARY_SCHEMA {
            return Err(OutputError::Schema { path: path.to_owned(), found: row.schema, expected: SUMMARY_SCHEMA });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub id: String,
    pub study: String,
    pub policy: String,
    pub seed: u64,
    pub param: f64,
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub policies: Vec<String>,
    pub runs: Vec<ManifestRun>,
    pub files: Vec<ManifestFile>,
}

pub const MANIFEST: &str = "manifest.json";

/// Refuse to reuse an output directory that already holds a manifest.
pub fn guard(out: &Path, force: bool) -> Result<(), OutputError> {
    let m = out.join(MANIFEST);
    if m.exists() && !force {
        return Err(OutputError::Exists(out.to_owned()));
    }
    fs::create_dir_all(out).map_err(io_err(out))
}

pub fn sha256_file(path: &Path) -> Result<String, OutputError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Hash every listed file (relative to `out`) into the manifest.
pub fn write_manifest(out: &Path, mut manifest: Manifest, files: &[PathBuf]) -> Result<(), OutputError> {
    let mut listed = Vec::new();
    for f in files {
        let rel = f.strip_prefix(out).unwrap_or(f);
        listed.push(ManifestFile { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_file(f)? });
    }
    listed.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.files = listed;
    let path = out.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| OutputError::Json { path: path.clone(), source })?;
    text.push('\n');
    fs::File::create(&path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(io_err(&path))
}

pub fn read_manifest(out: &Path) -> Result<Manifest, OutputError> {
    let path = out.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| OutputError::Json { path, source })
}
