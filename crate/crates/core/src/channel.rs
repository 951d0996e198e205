//! Link models: ISL SNR and rate, ground up/downlink SNR, per-hop latency.
//!
//! All internal quantities are SI. Distances arrive in km and are converted
//! to metres before entering a link budget.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, PI};

/// Speed of light used throughout, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 3.0e8;
/// Default packet size, bits (64 kb).
pub const DEFAULT_PACKET_BITS: u64 = 64_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("`{field}` must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("channel gain must be non-negative, got {0}")]
    NegativeGain(f64),
    #[error("link stalled: zero service rate with {pending_bits} bits pending")]
    LinkStall { pending_bits: f64 },
}

fn positive(field: &'static str, value: f64) -> Result<f64, ChannelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ChannelError::NonPositive { field, value })
    }
}

/// Budget of a single inter-satellite link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_w: f64,
    /// Linear transmit antenna gain.
    pub tx_gain: f64,
    /// Linear receive antenna gain.
    pub rx_gain: f64,
    pub path_loss_exponent: f64,
    pub noise_power_w: f64,
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
}

/// −174 dBm/Hz thermal noise density in W/Hz.
pub fn thermal_noise_density_w_hz() -> f64 {
    math::db_to_linear(-174.0 - 30.0)
}

impl Default for LinkBudget {
    fn default() -> Self {
        let bandwidth_hz = 500e6;
        Self {
            tx_power_w: 20.0,
            tx_gain: math::db_to_linear(60.0),
            rx_gain: math::db_to_linear(60.0),
            path_loss_exponent: 2.0,
            noise_power_w: thermal_noise_density_w_hz() * bandwidth_hz,
            carrier_frequency_hz: 30e9,
            bandwidth_hz,
        }
    }
}

impl LinkBudget {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_S / self.carrier_frequency_hz
    }

    /// Free-space path-loss factor at unit distance, `4π/λ`.
    pub fn unit_path_loss(&self) -> f64 {
        4.0 * PI / self.wavelength_m()
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        positive("tx_power_w", self.tx_power_w)?;
        positive("tx_gain", self.tx_gain)?;
        positive("rx_gain", self.rx_gain)?;
        positive("path_loss_exponent", self.path_loss_exponent)?;
        positive("noise_power_w", self.noise_power_w)?;
        positive("carrier_frequency_hz", self.carrier_frequency_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        Ok(())
    }
}

/// Nakagami-m fading with unit mean power; `|h|²` is Gamma(m, 1/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadingModel {
    pub nakagami_m: f64,
}

impl Default for FadingModel {
    fn default() -> Self {
        Self { nakagami_m: 2.0 }
    }
}

impl FadingModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.nakagami_m >= 0.5 && self.nakagami_m.is_finite() {
            Ok(())
        } else {
            Err(ChannelError::NonPositive { field: "nakagami_m", value: self.nakagami_m })
        }
    }

    pub fn mean_power(&self) -> f64 {
        1.0
    }

    /// One draw of the channel power gain `|g|²`.
    pub fn sample_power<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.nakagami_m;
        Gamma::new(m, 1.0 / m).expect("validated shape").sample(rng)
    }
}

/// Linear SNR of an ISL at `distance_km` with power gain `channel_gain`.
pub fn isl_snr(budget: &LinkBudget, distance_km: f64, channel_gain: f64) -> Result<f64, ChannelError> {
    budget.validate()?;
    let d_m = positive("distance_km", distance_km)? * 1e3;
    if !(channel_gain >= 0.0) {
        return Err(ChannelError::NegativeGain(channel_gain));
    }
    let received = budget.tx_power_w * math::powf(d_m, -budget.path_loss_exponent) * channel_gain;
    Ok(received * budget.tx_gain * budget.rx_gain / (budget.unit_path_loss() * budget.noise_power_w))
}

/// Shannon rate `W·log2(1 + μ)` in bits/s.
pub fn rate_from_snr(snr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * math::ln_1p(snr.max(0.0)) / core::f64::consts::LN_2
}

/// Inverse of [`rate_from_snr`]: `2^(R/W) − 1`.
pub fn snr_from_rate(rate_bps: f64, bandwidth_hz: f64) -> f64 {
    math::exp_m1(rate_bps / bandwidth_hz * core::f64::consts::LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundDirection {
    /// Terminal → satellite; the terminal's power budget applies.
    Uplink,
    /// Satellite → terminal; the satellite's power budget applies.
    Downlink,
}

/// Budget of the gateway/satellite link in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundBudget {
    pub terminal_power_w: f64,
    pub satellite_power_w: f64,
    pub terminal_gain: f64,
    pub satellite_gain: f64,
    pub noise_power_w: f64,
    pub bandwidth_hz: f64,
}

impl Default for GroundBudget {
    fn default() -> Self {
        let bandwidth_hz = 500e6;
        Self {
            terminal_power_w: 10.0,
            satellite_power_w: 20.0,
            terminal_gain: math::db_to_linear(60.0),
            satellite_gain: math::db_to_linear(60.0),
            noise_power_w: thermal_noise_density_w_hz() * bandwidth_hz,
            bandwidth_hz,
        }
    }
}

impl GroundBudget {
    pub fn validate(&self) -> Result<(), ChannelError> {
        positive("terminal_power_w", self.terminal_power_w)?;
        positive("satellite_power_w", self.satellite_power_w)?;
        positive("terminal_gain", self.terminal_gain)?;
        positive("satellite_gain", self.satellite_gain)?;
        positive("noise_power_w", self.noise_power_w)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        Ok(())
    }

    pub fn tx_power(&self, direction: GroundDirection) -> f64 {
        match direction {
            GroundDirection::Uplink => self.terminal_power_w,
            GroundDirection::Downlink => self.satellite_power_w,
        }
    }
}

/// Received SNR `P·G_i·G_j·|g|²/σ²` of a ground link.
pub fn ground_snr(budget: &GroundBudget, direction: GroundDirection, fading_draw: f64) -> Result<f64, ChannelError> {
    budget.validate()?;
    if !(fading_draw >= 0.0) {
        return Err(ChannelError::NegativeGain(fading_draw));
    }
    Ok(budget.tx_power(direction) * budget.terminal_gain * budget.satellite_gain * fading_draw / budget.noise_power_w)
}

/// Per-hop latency split, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HopLatency {
    pub propagation: f64,
    pub transmission: f64,
    pub queueing: f64,
    pub total: f64,
}

impl HopLatency {
    pub fn new(propagation: f64, transmission: f64, queueing: f64) -> Self {
        Self { propagation, transmission, queueing, total: propagation + transmission + queueing }
    }
}

/// Propagation `d/c`, transmission `B_pkt/R` and queueing `backlog/R`.
pub fn hop_latency(
    distance_km: f64,
    rate_bps: f64,
    packet_bits: f64,
    queue_backlog_bits: f64,
) -> Result<HopLatency, ChannelError> {
    let propagation = distance_km.max(0.0) * 1e3 / SPEED_OF_LIGHT_M_S;
    if rate_bps <= 0.0 {
        let pending_bits = packet_bits + queue_backlog_bits;
        if pending_bits > 0.0 {
            return Err(ChannelError::LinkStall { pending_bits });
        }
        return Ok(HopLatency::new(propagation, 0.0, 0.0));
    }
    Ok(HopLatency::new(propagation, packet_bits / rate_bps, queue_backlog_bits / rate_bps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gain_gives_zero_snr() {
        let b = LinkBudget::default();
        assert_eq!(isl_snr(&b, 1970.0, 0.0).unwrap(), 0.0);
        assert_eq!(ground_snr(&GroundBudget::default(), GroundDirection::Uplink, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn snr_is_linear_in_power() {
        let mut b = LinkBudget::default();
        let base = isl_snr(&b, 1970.0, 1.0).unwrap();
        b.tx_power_w *= 2.0;
        assert_eq!(isl_snr(&b, 1970.0, 1.0).unwrap(), 2.0 * base);
    }

    #[test]
    fn table_budget_matches_independent_arithmetic() {
        // Recomputed in dB terms rather than through the linear expression.
        let b = LinkBudget::default();
        let d_m: f64 = 1970e3;
        let lambda: f64 = 3e8 / 30e9;
        let db = 10.0 * 20f64.log10() + 60.0 + 60.0 - 20.0 * d_m.log10()
            - 10.0 * (4.0 * core::f64::consts::PI / lambda).log10()
            - (-174.0 - 30.0)
            - 10.0 * 500e6f64.log10();
        let want = 10f64.powf(db / 10.0);
        let got = isl_snr(&b, 1970.0, 1.0).unwrap();
        assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn nonpositive_inputs_are_domain_errors() {
        let b = LinkBudget::default();
        assert!(isl_snr(&b, 0.0, 1.0).is_err());
        assert!(isl_snr(&b, 10.0, -1.0).is_err());
        let mut bad = b.clone();
        bad.noise_power_w = 0.0;
        assert!(matches!(isl_snr(&bad, 10.0, 1.0), Err(ChannelError::NonPositive { field: "noise_power_w", .. })));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_from_snr(0.0, 500e6), 0.0);
        assert!((rate_from_snr(3.0, 500e6) - 1e9).abs() < 1e-3);
    }

    #[test]
    fn uplink_downlink_ratio_is_power_ratio() {
        let g = GroundBudget::default();
        let up = ground_snr(&g, GroundDirection::Uplink, 0.7).unwrap();
        let down = ground_snr(&g, GroundDirection::Downlink, 0.7).unwrap();
        assert!((up / down - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noise_scaling_divides_snr() {
        let mut b = LinkBudget::default();
        let base = isl_snr(&b, 3000.0, 1.0).unwrap();
        b.noise_power_w *= 4.0;
        let scaled = isl_snr(&b, 3000.0, 1.0).unwrap();
        assert!((base / scaled - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mean_ground_snr_over_fading_draws() {
        let g = GroundBudget::default();
        let fading = FadingModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| ground_snr(&g, GroundDirection::Downlink, fading.sample_power(&mut rng)).unwrap())
            .sum::<f64>()
            / n as f64;
        let det = ground_snr(&g, GroundDirection::Downlink, 1.0).unwrap();
        assert!((mean / det - 1.0).abs() < 0.005);
    }

    #[test]
    fn hop_latency_examples() {
        let h = hop_latency(1970.0, 1e9, 64_000.0, 0.0).unwrap();
        assert!((h.propagation - 1970e3 / 3e8).abs() < 1e-15);
        assert!((h.propagation - 6.5667e-3).abs() < 1e-6);
        assert_eq!(h.queueing, 0.0);
        assert!((h.transmission - 64e-6).abs() < 1e-15);
        assert_eq!(h.total, h.propagation + h.transmission + h.queueing);
        assert!(matches!(hop_latency(10.0, 0.0, 0.0, 64.0), Err(ChannelError::LinkStall { .. })));
        assert!(hop_latency(10.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn snr_decreases_with_distance() {
        let b = LinkBudget::default();
        let mut prev = f64::INFINITY;
        for d in [100.0, 500.0, 1000.0, 2000.0, 5000.0] {
            let s = isl_snr(&b, d, 1.0).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }
}
