//! Figure tables and SVGs, computed from `summary.csv` alone.
//!
//! Rerunning on the same summary rewrites byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::output::{read_summary, write_rows, OutputError, SummaryRow};

pub const LATENCY_SCHEMA: &str = "fig_latency/1";
pub const COST_SCHEMA: &str = "fig_decision_cost/1";
pub const PATH_CHANGE_SCHEMA: &str = "fig_path_change/1";
pub const RESILIENCE_SCHEMA: &str = "fig_resilience/1";

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("drawing {path}: {reason}")]
    Draw { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub schema: &'static str,
    pub policy: String,
    pub runs: usize,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub schema: &'static str,
    pub interval_s: f64,
    pub policy: String,
    pub runs: usize,
    pub decision_cost_s: f64,
    pub ratio_to_dijkstra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathChangeRow {
    pub schema: &'static str,
    pub interval_s: f64,
    pub runs: usize,
    pub mean_pct: f64,
    pub min_pct: f64,
    pub max_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResilienceRow {
    pub schema: &'static str,
    pub policy: String,
    pub level_bps: f64,
    pub runs: usize,
    pub resilience_path: f64,
    pub resilience_link: f64,
}

/// Key for float parameters that come straight from the config.
fn key(x: f64) -> u64 {
    x.to_bits()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ok_rows<'a>(rows: &'a [SummaryRow], study: &'a str) -> impl Iterator<Item = &'a SummaryRow> {
    rows.iter().filter(move |r| r.study == study && r.status == "ok")
}

/// Policy order follows first appearance in the summary.
fn policy_order(rows: &[SummaryRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.policy) {
            out.push(r.policy.clone());
        }
    }
    out
}

pub fn latency_table(rows: &[SummaryRow]) -> Vec<LatencyRow> {
    let mut out = Vec::new();
    for p in policy_order(rows) {
        let runs: Vec<_> = ok_rows(rows, "latency").filter(|r| r.policy == p).collect();
        let pick = |f: fn(&SummaryRow) -> Option<f64>| runs.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let (m, med, p95) = (pick(|r| r.mean_latency_ms), pick(|r| r.median_latency_ms), pick(|r| r.p95_latency_ms));
        if m.is_empty() {
            continue;
        }
        out.push(LatencyRow {
            schema: LATENCY_SCHEMA,
            policy: p,
            runs: m.len(),
            mean_latency_ms: mean(&m),
            median_latency_ms: mean(&med),
            p95_latency_ms: mean(&p95),
            drop_rate: mean(&runs.iter().map(|r| r.drop_rate).collect::<Vec<_>>()),
        });
    }
    out
}

/// Learned policies appear at every Dijkstra interval with their single
/// interval-free cost.
pub fn cost_table(rows: &[SummaryRow]) -> Vec<CostRow> {
    let mut dijkstra: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in ok_rows(rows, "cost").filter(|r| r.policy == "dijkstra") {
        dijkstra.entry(key(r.param)).or_insert((r.param, Vec::new())).1.push(r.decision_cost_s);
    }
    let mut out = Vec::new();
    let mut intervals: Vec<(f64, f64, usize)> =
        dijkstra.values().map(|(i, xs)| (*i, mean(xs), xs.len())).collect();
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (interval, base, n) in intervals {
        for p in policy_order(rows) {
            if p == "dijkstra" {
                out.push(CostRow {
                    schema: COST_SCHEMA,
                    interval_s: interval,
                    policy: p,
                    runs: n,
                    decision_cost_s: base,
                    ratio_to_dijkstra: 1.0,
                });
                continue;
            }
            let xs: Vec<f64> = ok_rows(rows, "cost").filter(|r| r.policy == p).map(|r| r.decision_cost_s).collect();
            if xs.is_empty() {
                continue;
            }
            let c = mean(&xs);
            out.push(CostRow {
                schema: COST_SCHEMA,
                interval_s: interval,
                policy: p,
                runs: xs.len(),
                decision_cost_s: c,
                ratio_to_dijkstra: c / base,
            });
        }
    }
    out
}

pub fn path_change_table(rows: &[SummaryRow]) -> Vec<PathChangeRow> {
    let mut by: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in ok_rows(rows, "path_change") {
        if let Some(pct) = r.path_change_pct {
            by.entry(key(r.param)).or_insert((r.param, Vec::new())).1.push(pct);
        }
    }
    let mut out: Vec<PathChangeRow> = by
        .into_values()
        .map(|(i, xs)| PathChangeRow {
            schema: PATH_CHANGE_SCHEMA,
            interval_s: i,
            runs: xs.len(),
            mean_pct: mean(&xs),
            min_pct: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max_pct: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    out.sort_by(|a, b| a.interval_s.total_cmp(&b.interval_s));
    out
}

pub fn resilience_table(rows: &[SummaryRow]) -> Vec<ResilienceRow> {
    let mut out = Vec::new();
    for p in policy_order(rows) {
        let mut by: BTreeMap<u64, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in ok_rows(rows, "resilience").filter(|r| r.policy == p) {
            if let (Some(a), Some(b)) = (r.resilience_path, r.resilience_link) {
                let e = by.entry(key(r.param)).or_insert((r.param, Vec::new(), Vec::new()));
                e.1.push(a);
                e.2.push(b);
            }
        }
        let mut levels: Vec<_> = by.into_values().collect();
        levels.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (level, a, b) in levels {
            out.push(ResilienceRow {
                schema: RESILIENCE_SCHEMA,
                policy: p.clone(),
                level_bps: level,
                runs: a.len(),
                resilience_path: mean(&a),
                resilience_link: mean(&b),
            });
        }
    }
    out
}

const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(44, 160, 44), RGBColor(214, 39, 40)];

fn draw_err(path: &Path) -> impl Fn(String) -> PlotError + '_ {
    move |reason| PlotError::Draw { path: path.to_owned(), reason }
}

macro_rules! tryd {
    ($e:expr, $path:expr) => {
        $e.map_err(|e| draw_err($path)(e.to_string()))?
    };
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = (hi - lo).abs().max(hi.abs() * 0.1).max(1e-12);
    (lo - 0.1 * span, hi + 0.1 * span)
}

/// Grouped bars: one group per policy, one bar per statistic.
fn draw_latency(path: &Path, t: &[LatencyRow]) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    tryd!(root.fill(&WHITE), path);
    let top = t.iter().map(|r| r.p95_latency_ms.max(r.mean_latency_ms)).fold(0.0, f64::max).max(1e-9) * 1.15;
    let mut chart = tryd!(
        ChartBuilder::on(&root)
            .caption("End-to-end latency", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..t.len().max(1) as f64, 0.0..top),
        path
    );
    let names: Vec<String> = t.iter().map(|r| r.policy.clone()).collect();
    tryd!(
        chart
            .configure_mesh()
            .disable_x_mesh()
            .y_desc("latency (ms)")
            .x_labels(t.len().max(1) * 2 + 1)
            .x_label_formatter(&|x| {
                let i = (*x - 0.5).round();
                if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .draw(),
        path
    );
    let stats: [(&str, fn(&LatencyRow) -> f64); 3] =
        [("mean", |r| r.mean_latency_ms), ("median", |r| r.median_latency_ms), ("p95", |r| r.p95_latency_ms)];
    for (k, (label, f)) in stats.iter().enumerate() {
        let color = PALETTE[k];
        let bars = t.iter().enumerate().map(move |(i, r)| {
            let x0 = i as f64 + 0.15 + 0.23 * k as f64;
            Rectangle::new([(x0, 0.0), (x0 + 0.2, f(r))], color.filled())
        });
        tryd!(chart.draw_series(bars), path)
            .label(*label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    tryd!(chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw(), path);
    tryd!(root.present(), path);
    Ok(())
}

/// One line per series over a shared numeric x axis.
fn draw_lines(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    tryd!(root.fill(&WHITE), path);
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let mut chart = tryd!(
        ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(x0..x1, y0..y1),
        path
    );
    tryd!(chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw(), path);
    for (k, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        tryd!(chart.draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2))), path)
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
        tryd!(chart.draw_series(s.iter().map(|&p| Circle::new(p, 3, color.filled()))), path);
    }
    if !series.is_empty() {
        tryd!(chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw(), path);
    }
    tryd!(root.present(), path);
    Ok(())
}

/// Write every figure the summary has data for; returns the files written.
pub fn plot(summary: &Path, out: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let rows = read_summary(summary)?;
    let mut written = Vec::new();

    let lat = latency_table(&rows);
    if !lat.is_empty() {
        let csv = out.join("fig1_latency.csv");
        write_rows(&csv, lat.iter())?;
        let svg = out.join("fig1_latency.svg");
        draw_latency(&svg, &lat)?;
        written.extend([csv, svg]);
    }

    let cost = cost_table(&rows);
    if !cost.is_empty() {
        let csv = out.join("fig2_decision_cost.csv");
        write_rows(&csv, cost.iter())?;
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for r in &cost {
            match series.iter_mut().find(|(n, _)| *n == r.policy) {
                Some((_, s)) => s.push((r.interval_s, r.decision_cost_s)),
                None => series.push((r.policy.clone(), vec![(r.interval_s, r.decision_cost_s)])),
            }
        }
        let svg = out.join("fig2_decision_cost.svg");
        draw_lines(&svg, "Decision-making cost", "recalculation interval (s)", "modeled cost (s)", &series)?;
        written.extend([csv, svg]);
    }

    let pc = path_change_table(&rows);
    if !pc.is_empty() {
        let csv = out.join("fig3_path_change.csv");
        write_rows(&csv, pc.iter())?;
        let series = vec![("dijkstra".to_owned(), pc.iter().map(|r| (r.interval_s, r.mean_pct)).collect())];
        let svg = out.join("fig3_path_change.svg");
        draw_lines(&svg, "Path changes per recalculation", "recalculation interval (s)", "paths changed (%)", &series)?;
        written.extend([csv, svg]);
    }

    let res = resilience_table(&rows);
    if !res.is_empty() {
        let csv = out.join("fig4_resilience.csv");
        write_rows(&csv, res.iter())?;
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for r in &res {
            let p = (r.level_bps / 1e6, r.resilience_path);
            match series.iter_mut().find(|(n, _)| *n == r.policy) {
                Some((_, s)) => s.push(p),
                None => series.push((r.policy.clone(), vec![p])),
            }
        }
        let svg = out.join("fig4_resilience.svg");
        draw_lines(&svg, "Path resilience", "background traffic (Mbit/s)", "resilience", &series)?;
        written.extend([csv, svg]);
    }
    Ok(written)
}
