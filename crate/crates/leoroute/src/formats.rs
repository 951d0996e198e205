//! Text formats: gateway and failure CSVs, model files, routing tables.
//!
//! Model file (`leoroute-model 1`):
//!
//! ```text
//! leoroute-model 1
//! algorithm madrl
//! layers 26 128 128 4
//! seed 7
//! step 20000
//! config_hash 3f2a...
//! params 20228
//! <one parameter per line, layer by layer: weights row-major (out × in), then bias>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a file
//! reloads bit-exactly and the same model always produces the same bytes.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use leoroute_core::learning::nn::Dense;
use leoroute_core::learning::Mlp;
use leoroute_core::orbital::{Gateway, SatelliteId};
use leoroute_core::resilience::{FailureEvent, FailureKind, FailureTarget};
use leoroute_core::routing::{NextHopAction, RoutingTable};
use leoroute_core::sim::scenario::CITIES;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Line { line, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRow {
    pub id: u32,
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub weight: f64,
}

/// `id,name,lat_deg,lon_deg,weight`, one gateway per row.
pub fn read_gateways(r: impl Read) -> Result<(Vec<String>, Vec<Gateway>), FormatError> {
    let mut names = Vec::new();
    let mut gws = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<GatewayRow>().enumerate() {
        let row = row?;
        let g = Gateway::from_degrees(row.id, row.lat_deg, row.lon_deg, row.weight);
        g.validate().map_err(|e| at(i + 2, e.to_string()))?;
        if !(row.weight >= 0.0) {
            return Err(at(i + 2, "weight must be non-negative"));
        }
        names.push(row.name);
        gws.push(g);
    }
    if gws.len() < 2 {
        return Err(at(1, "need at least two gateways"));
    }
    Ok((names, gws))
}

pub fn write_gateways(w: impl Write, names: &[String], gws: &[Gateway]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for (name, g) in names.iter().zip(gws) {
        out.serialize(GatewayRow {
            id: g.id,
            name: name.clone(),
            lat_deg: g.lat_rad.to_degrees(),
            lon_deg: g.lon_rad.to_degrees(),
            weight: g.population_weight,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn builtin_gateways() -> (Vec<String>, Vec<Gateway>) {
    let names = CITIES.iter().map(|c| c.0.to_owned()).collect();
    (names, leoroute_core::sim::scenario::city_gateways())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailureRow {
    kind: FailureKind,
    /// `P:S` for a satellite, `P:S>P:S` for a directed link.
    target: String,
    start_s: f64,
    duration_s: f64,
}

fn parse_sat(s: &str) -> Option<SatelliteId> {
    let (p, k) = s.trim().split_once(':')?;
    Some(SatelliteId::new(p.parse().ok()?, k.parse().ok()?))
}

/// `kind,target,start_s,duration_s`.
pub fn read_failures(r: impl Read) -> Result<Vec<FailureEvent>, FormatError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<FailureRow>().enumerate() {
        let row = row?;
        let target = match row.target.split_once('>') {
            Some((a, b)) => match (parse_sat(a), parse_sat(b)) {
                (Some(a), Some(b)) => FailureTarget::Link(a, b),
                _ => return Err(at(i + 2, format!("bad link target `{}`", row.target))),
            },
            None => FailureTarget::Satellite(
                parse_sat(&row.target).ok_or_else(|| at(i + 2, format!("bad satellite `{}`", row.target)))?,
            ),
        };
        let ev = FailureEvent { target, start: row.start_s, duration: row.duration_s, kind: row.kind };
        ev.validate().map_err(|e| at(i + 2, e.to_string()))?;
        out.push(ev);
    }
    Ok(out)
}

pub fn write_failures(w: impl Write, events: &[FailureEvent]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for e in events {
        let target = match e.target {
            FailureTarget::Satellite(s) => s.to_string(),
            FailureTarget::Link(a, b) => format!("{a}>{b}"),
        };
        out.serialize(FailureRow { kind: e.kind, target, start_s: e.start, duration_s: e.duration })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub algorithm: String,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
    pub network: Mlp,
}

const MODEL_MAGIC: &str = "leoroute-model 1";

pub fn write_model(m: &ModelFile) -> String {
    let mut s = String::new();
    let dims: Vec<String> = m.network.dims().iter().map(|d| d.to_string()).collect();
    let params = m.network.params_flat();
    let _ = writeln!(s, "{MODEL_MAGIC}");
    let _ = writeln!(s, "algorithm {}", m.algorithm);
    let _ = writeln!(s, "layers {}", dims.join(" "));
    let _ = writeln!(s, "seed {}", m.seed);
    let _ = writeln!(s, "step {}", m.step);
    let _ = writeln!(s, "config_hash {}", m.config_hash);
    let _ = writeln!(s, "params {}", params.len());
    for p in params {
        let _ = writeln!(s, "{p:?}");
    }
    s
}

pub fn read_model(text: &str) -> Result<ModelFile, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| at(0, format!("truncated before {what}")));
    let (n, magic) = next("header")?;
    if magic != MODEL_MAGIC {
        return Err(at(n, format!("expected `{MODEL_MAGIC}`")));
    }
    let mut field = |key: &str| -> Result<(usize, String), FormatError> {
        let (n, l) = next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v.trim().to_owned())),
            _ if l == key => Ok((n, String::new())),
            _ => Err(at(n, format!("expected `{key} …`"))),
        }
    };
    let (_, algorithm) = field("algorithm")?;
    let (n_layers, layers) = field("layers")?;
    let dims: Vec<usize> = layers
        .split_whitespace()
        .map(|d| d.parse().map_err(|_| at(n_layers, format!("bad layer width `{d}`"))))
        .collect::<Result<_, _>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(at(n_layers, "need at least two positive layer widths"));
    }
    let (n_seed, seed) = field("seed")?;
    let seed = seed.parse().map_err(|_| at(n_seed, "bad seed"))?;
    let (n_step, step) = field("step")?;
    let step = step.parse().map_err(|_| at(n_step, "bad step"))?;
    let (_, config_hash) = field("config_hash")?;
    let (n_count, count) = field("params")?;
    let count: usize = count.parse().map_err(|_| at(n_count, "bad parameter count"))?;

    let layers: Vec<Dense> = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
    let mut network = Mlp::from_layers(layers);
    if network.param_count() != count {
        return Err(at(n_count, format!("{count} parameters declared, layers need {}", network.param_count())));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next("parameters")?;
        let v: f64 = l.parse().map_err(|_| at(n, format!("bad parameter `{l}`")))?;
        if !v.is_finite() {
            return Err(at(n, "non-finite parameter"));
        }
        params.push(v);
    }
    network.set_params_flat(&params);
    Ok(ModelFile { algorithm, seed, step, config_hash, network })
}

/// One `sat,gateway,action` row per present entry, header first.
pub fn write_table(t: &RoutingTable) -> String {
    let mut s = String::from("satellite,gateway,action\n");
    for (sat, g, a) in t.iter() {
        let _ = writeln!(s, "{sat},{g},{}", a.as_str());
    }
    s
}

pub fn read_table(text: &str, epoch: f64, satellites: usize, gateways: usize, entry_bits: u64) -> Result<RoutingTable, FormatError> {
    let mut t = RoutingTable::empty(epoch, satellites, gateways, entry_bits);
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "satellite,gateway,action")) => {}
        _ => return Err(at(1, "expected header `satellite,gateway,action`")),
    }
    for (i, l) in lines {
        let n = i + 1;
        let parts: Vec<&str> = l.split(',').collect();
        let [sat, g, a] = parts[..] else { return Err(at(n, "expected three fields")) };
        let sat: usize = sat.parse().map_err(|_| at(n, "bad satellite"))?;
        let g: usize = g.parse().map_err(|_| at(n, "bad gateway"))?;
        if sat >= satellites || g >= gateways {
            return Err(at(n, "index out of range"));
        }
        let a = NextHopAction::parse(a).ok_or_else(|| at(n, format!("bad action `{a}`")))?;
        t.set(sat, g, Some(a));
    }
    Ok(t)
}
