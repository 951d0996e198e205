use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::policy::PolicyReport;
use crate::traffic::{DropReason, Packet};

/// A finished packet with its path metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet: Packet,
    /// Outage of the whole traversed path, ground legs included.
    pub path_outage: Option<f64>,
    /// Path-form resilience score.
    pub resilience_path: Option<f64>,
    /// Mean per-link resilience feature over traversed ISLs.
    pub resilience_link: Option<f64>,
}

impl PacketRecord {
    pub fn latency_s(&self) -> Option<f64> {
        self.packet.delivered_at.map(|t| t - self.packet.created_at)
    }

    /// Sum of the per-hop latency split.
    pub fn hop_latency_sum_s(&self) -> f64 {
        self.packet.hops.iter().map(|h| h.latency.total).sum()
    }
}

/// Append-only record of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLedger {
    /// Finished packets in completion order.
    pub packets: Vec<PacketRecord>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub drops: BTreeMap<DropReason, u64>,
    pub steps: u64,
    pub conservation_checks: u64,
    pub link_failure_flushes: u64,
    pub policy: Option<PolicyReport>,
}

impl MetricsLedger {
    pub fn delivered_records(&self) -> impl Iterator<Item = &PacketRecord> {
        self.packets.iter().filter(|r| r.packet.delivered_at.is_some())
    }

    pub fn summary(&self) -> RunSummary {
        let mut lat: Vec<f64> = self.delivered_records().filter_map(PacketRecord::latency_s).collect();
        lat.sort_by(f64::total_cmp);
        let hops: Vec<f64> = self.delivered_records().map(|r| r.packet.isl_hops() as f64).collect();
        let tagged: Vec<&PacketRecord> = self.delivered_records().filter(|r| r.packet.tagged).collect();
        let policy = self.policy.clone().unwrap_or_default();
        let path_change = mean(&policy.path_changes.iter().map(|p| p.percent).collect::<Vec<_>>());
        RunSummary {
            policy: policy.name.clone(),
            generated: self.generated,
            delivered: self.delivered,
            dropped: self.dropped,
            drop_rate: if self.generated > 0 { self.dropped as f64 / self.generated as f64 } else { 0.0 },
            mean_latency_s: mean(&lat),
            median_latency_s: quantile(&lat, 0.5),
            p95_latency_s: quantile(&lat, 0.95),
            mean_isl_hops: mean(&hops),
            decisions: policy.decisions,
            decision_cost_s: policy.modeled_cost_s,
            path_change_pct: path_change,
            stale_routes: policy.stale_routes,
            resilience_path: mean(&tagged.iter().filter_map(|r| r.resilience_path).collect::<Vec<_>>()),
            resilience_link: mean(&tagged.iter().filter_map(|r| r.resilience_link).collect::<Vec<_>>()),
            tagged_delivered: tagged.len() as u64,
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Linear interpolation between closest ranks of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        1 => Some(sorted[0]),
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub drop_rate: f64,
    pub mean_latency_s: Option<f64>,
    pub median_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub mean_isl_hops: Option<f64>,
    pub decisions: u64,
    pub decision_cost_s: f64,
    pub path_change_pct: Option<f64>,
    pub stale_routes: u64,
    /// Over delivered tagged packets.
    pub resilience_path: Option<f64>,
    pub resilience_link: Option<f64>,
    pub tagged_delivered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResiliencePoint {
    pub policy: String,
    pub traffic_level: f64,
    pub resilience_path: Option<f64>,
    pub resilience_link: Option<f64>,
    pub samples: u64,
}

/// Mean resilience per (policy, traffic level), pooling every run given
/// for that pair (e.g. several seeds).
pub fn summarize_resilience<'a>(runs: impl IntoIterator<Item = (&'a str, f64, &'a MetricsLedger)>) -> Vec<ResiliencePoint> {
    let mut acc: BTreeMap<(String, u64), (f64, f64, u64, u64)> = BTreeMap::new();
    for (policy, level, ledger) in runs {
        let e = acc.entry((String::from(policy), level.to_bits())).or_default();
        for r in ledger.delivered_records().filter(|r| r.packet.tagged) {
            if let Some(p) = r.resilience_path {
                e.0 += p;
                e.2 += 1;
            }
            if let Some(l) = r.resilience_link {
                e.1 += l;
                e.3 += 1;
            }
        }
    }
    let mut out: Vec<ResiliencePoint> = acc
        .into_iter()
        .map(|((policy, bits), (p, l, np, nl))| ResiliencePoint {
            policy,
            traffic_level: f64::from_bits(bits),
            resilience_path: (np > 0).then(|| p / np as f64),
            resilience_link: (nl > 0).then(|| l / nl as f64),
            samples: np,
        })
        .collect();
    out.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.traffic_level.total_cmp(&b.traffic_level)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), Some(3.0));
        assert_eq!(quantile(&xs, 0.95), Some(4.8));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn empty_ledger_summary() {
        let s = MetricsLedger::default().summary();
        assert_eq!(s.mean_latency_s, None);
        assert_eq!(s.drop_rate, 0.0);
    }
}
