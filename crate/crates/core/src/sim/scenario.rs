//! A desk-scale setup: 8 planes × 8 satellites and 20 city gateways.

use alloc::vec::Vec;

use crate::orbital::{ConstellationParams, Gateway, EARTH_RADIUS_KM};

/// 64 satellites at 1200 km, 53°. The higher shell keeps every gateway
/// below 50° latitude in view at 10° minimum elevation.
pub fn reduced_constellation() -> ConstellationParams {
    ConstellationParams {
        plane_count: 8,
        sats_per_plane: 8,
        altitude_km: 1200.0,
        inclination_rad: 53f64.to_radians(),
        eccentricity: 1e-5,
        phasing_offset_rad: 0.0,
        earth_radius_km: EARTH_RADIUS_KM,
        polar_seam: false,
    }
    .with_walker_phasing(1)
}

/// `(name, lat°, lon°, metro population in millions)`.
pub const CITIES: [(&str, f64, f64, f64); 20] = [
    ("tokyo", 35.68, 139.69, 37.0),
    ("delhi", 28.61, 77.21, 32.0),
    ("shanghai", 31.23, 121.47, 28.0),
    ("sao_paulo", -23.55, -46.63, 22.0),
    ("mexico_city", 19.43, -99.13, 22.0),
    ("dhaka", 23.81, 90.41, 22.0),
    ("cairo", 30.04, 31.24, 21.0),
    ("mumbai", 19.08, 72.88, 21.0),
    ("beijing", 39.90, 116.41, 21.0),
    ("osaka", 34.69, 135.50, 19.0),
    ("new_york", 40.71, -74.01, 19.0),
    ("karachi", 24.86, 67.01, 17.0),
    ("buenos_aires", -34.60, -58.38, 15.0),
    ("istanbul", 41.01, 28.98, 15.0),
    ("lagos", 6.52, 3.38, 15.0),
    ("manila", 14.60, 120.98, 14.0),
    ("rio_de_janeiro", -22.91, -43.17, 13.0),
    ("los_angeles", 34.05, -118.24, 12.0),
    ("paris", 48.86, 2.35, 11.0),
    ("jakarta", -6.21, 106.85, 11.0),
];

pub fn city_gateways() -> Vec<Gateway> {
    CITIES
        .iter()
        .enumerate()
        .map(|(i, &(_, lat, lon, pop))| Gateway::from_degrees(i as u32, lat, lon, pop))
        .collect()
}
