//! Walker-Delta constellation geometry.
//!
//! Satellites fly circular orbits. Plane `p` has its ascending node at
//! `2π·p/O`, slot `s` sits at argument of latitude `2π·s/N_o + p·phasing`
//! at `t = 0`. Each satellite carries four inter-satellite links in the
//! +Grid pattern (two intra-plane, two inter-plane) and one ground link.
//!
//! Inertial (ECI) positions come from [`Constellation::satellite_position`].
//! Snapshots store Earth-fixed (ECEF) positions so gateways are static.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, Vec3, PI, TAU};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of the Earth, km³/s².
pub const EARTH_MU_KM3_S2: f64 = 398_600.4418;
/// Sidereal rotation rate of the Earth, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitalError {
    #[error("invalid constellation parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: &'static str },
    #[error("invalid gateway {id}: {reason}")]
    InvalidGateway { id: u32, reason: &'static str },
    #[error("unknown satellite (plane {plane}, slot {slot})")]
    UnknownSatellite { plane: u32, slot: u32 },
    #[error("gateway {gateway} has no visible satellite at t = {time} s")]
    CoverageGap { gateway: u32, time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationParams {
    pub plane_count: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_rad: f64,
    /// Anything below 1e-3 is treated as a circular orbit.
    pub eccentricity: f64,
    /// Walker phase shift between adjacent planes, radians.
    pub phasing_offset_rad: f64,
    pub earth_radius_km: f64,
    /// Disable the inter-plane links between the last and first plane.
    pub polar_seam: bool,
}

impl Default for ConstellationParams {
    fn default() -> Self {
        Self::starlink_shell1()
    }
}

impl ConstellationParams {
    /// Starlink shell 1: 72 planes × 22 satellites at 550 km, 53°.
    pub fn starlink_shell1() -> Self {
        Self {
            plane_count: 72,
            sats_per_plane: 22,
            altitude_km: 550.0,
            inclination_rad: 53f64.to_radians(),
            eccentricity: 1e-5,
            phasing_offset_rad: 0.0,
            earth_radius_km: EARTH_RADIUS_KM,
            polar_seam: false,
        }
    }

    /// Walker-Delta `i: T/P/F` phasing: `2π·F/T` between adjacent planes.
    pub fn with_walker_phasing(mut self, f: u32) -> Self {
        let total = (self.plane_count * self.sats_per_plane) as f64;
        self.phasing_offset_rad = TAU * f as f64 / total;
        self
    }

    pub fn validate(&self) -> Result<(), OrbitalError> {
        let bad = |field, reason| Err(OrbitalError::InvalidParam { field, reason });
        if self.plane_count < 1 {
            return bad("plane_count", "must be at least 1");
        }
        if self.sats_per_plane < 3 {
            return bad("sats_per_plane", "must be at least 3");
        }
        if !(self.altitude_km > 0.0 && self.altitude_km.is_finite()) {
            return bad("altitude_km", "must be positive");
        }
        if !(0.0..=PI).contains(&self.inclination_rad) {
            return bad("inclination", "must lie in [0, π]");
        }
        if !(0.0..1e-3).contains(&self.eccentricity) {
            return bad("eccentricity", "only near-circular orbits (e < 1e-3) are modeled");
        }
        if !self.phasing_offset_rad.is_finite() {
            return bad("phasing_offset", "must be finite");
        }
        if !(self.earth_radius_km > 0.0 && self.earth_radius_km.is_finite()) {
            return bad("earth_radius_km", "must be positive");
        }
        Ok(())
    }

    pub fn total_satellites(&self) -> usize {
        self.plane_count as usize * self.sats_per_plane as usize
    }

    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }
}

/// A satellite's (plane, slot) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatelliteId {
    pub plane: u32,
    pub slot: u32,
}

impl SatelliteId {
    pub const fn new(plane: u32, slot: u32) -> Self {
        Self { plane, slot }
    }
}

impl fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.plane, self.slot)
    }
}

/// ISL direction; the discriminant is the action index used by learned policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// slot + 1
    Up = 0,
    /// slot − 1
    Down = 1,
    /// plane − 1
    Left = 2,
    /// plane + 1
    Right = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// Ground terminal aggregating user traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    pub id: u32,
    pub lat_rad: f64,
    pub lon_rad: f64,
    pub population_weight: f64,
}

impl Gateway {
    pub fn from_degrees(id: u32, lat_deg: f64, lon_deg: f64, population_weight: f64) -> Self {
        Self {
            id,
            lat_rad: lat_deg.to_radians(),
            lon_rad: lon_deg.to_radians(),
            population_weight,
        }
    }

    pub fn validate(&self) -> Result<(), OrbitalError> {
        if !(self.lat_rad.abs() <= PI / 2.0) {
            return Err(OrbitalError::InvalidGateway { id: self.id, reason: "|latitude| must be ≤ 90°" });
        }
        if !self.lon_rad.is_finite() {
            return Err(OrbitalError::InvalidGateway { id: self.id, reason: "longitude must be finite" });
        }
        if !(self.population_weight >= 0.0 && self.population_weight.is_finite()) {
            return Err(OrbitalError::InvalidGateway { id: self.id, reason: "population weight must be ≥ 0" });
        }
        Ok(())
    }

    /// Earth-fixed position on the surface, km.
    pub fn position_ecef(&self, earth_radius_km: f64) -> Vec3 {
        let (cl, sl) = (math::cos(self.lat_rad), math::sin(self.lat_rad));
        Vec3::new(
            earth_radius_km * cl * math::cos(self.lon_rad),
            earth_radius_km * cl * math::sin(self.lon_rad),
            earth_radius_km * sl,
        )
    }
}

/// Static constellation descriptor. Positions at any time derive from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    params: ConstellationParams,
    radius_km: f64,
    mean_motion_rad_s: f64,
    /// (sin, cos) of each plane's right ascension of the ascending node.
    raan: Vec<(f64, f64)>,
    sin_inc: f64,
    cos_inc: f64,
}

impl Constellation {
    pub fn new(params: ConstellationParams) -> Result<Self, OrbitalError> {
        params.validate()?;
        let radius_km = params.orbit_radius_km();
        let mean_motion_rad_s = math::sqrt(EARTH_MU_KM3_S2 / (radius_km * radius_km * radius_km));
        let raan = (0..params.plane_count)
            .map(|p| {
                let angle = TAU * p as f64 / params.plane_count as f64;
                (math::sin(angle), math::cos(angle))
            })
            .collect();
        Ok(Self {
            sin_inc: math::sin(params.inclination_rad),
            cos_inc: math::cos(params.inclination_rad),
            params,
            radius_km,
            mean_motion_rad_s,
            raan,
        })
    }

    pub fn params(&self) -> &ConstellationParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.total_satellites()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radius_km(&self) -> f64 {
        self.radius_km
    }

    /// Orbital period from Kepler's third law, seconds.
    pub fn period_s(&self) -> f64 {
        TAU / self.mean_motion_rad_s
    }

    pub fn index_of(&self, sat: SatelliteId) -> Result<usize, OrbitalError> {
        if sat.plane >= self.params.plane_count || sat.slot >= self.params.sats_per_plane {
            return Err(OrbitalError::UnknownSatellite { plane: sat.plane, slot: sat.slot });
        }
        Ok(sat.plane as usize * self.params.sats_per_plane as usize + sat.slot as usize)
    }

    /// Inverse of [`Constellation::index_of`]. Panics on an out-of-range index.
    pub fn id_of(&self, index: usize) -> SatelliteId {
        assert!(index < self.len(), "satellite index {index} out of range");
        let n = self.params.sats_per_plane as usize;
        SatelliteId::new((index / n) as u32, (index % n) as u32)
    }

    fn position_by_index(&self, index: usize, t: f64) -> Vec3 {
        let n = self.params.sats_per_plane as usize;
        let (plane, slot) = (index / n, index % n);
        let u = TAU * slot as f64 / n as f64
            + plane as f64 * self.params.phasing_offset_rad
            + self.mean_motion_rad_s * t;
        let (su, cu) = (math::sin(u), math::cos(u));
        let (so, co) = self.raan[plane];
        let r = self.radius_km;
        Vec3::new(
            r * (co * cu - so * su * self.cos_inc),
            r * (so * cu + co * su * self.cos_inc),
            r * su * self.sin_inc,
        )
    }

    /// Inertial position at time `t` seconds, km.
    pub fn satellite_position(&self, sat: SatelliteId, t: f64) -> Result<Vec3, OrbitalError> {
        Ok(self.position_by_index(self.index_of(sat)?, t))
    }

    /// Earth-fixed position at time `t` seconds, km.
    pub fn satellite_position_ecef(&self, index: usize, t: f64) -> Vec3 {
        self.position_by_index(index, t).rotate_z(-EARTH_ROTATION_RAD_S * t)
    }

    /// +Grid neighbours indexed by [`Direction`].
    pub fn isl_neighbors(&self, sat: SatelliteId) -> Result<[Option<SatelliteId>; 4], OrbitalError> {
        self.index_of(sat)?;
        let o = self.params.plane_count;
        let n = self.params.sats_per_plane;
        let (p, s) = (sat.plane, sat.slot);
        let mut out = [None; 4];
        out[Direction::Up.index()] = Some(SatelliteId::new(p, (s + 1) % n));
        out[Direction::Down.index()] = Some(SatelliteId::new(p, (s + n - 1) % n));
        match o {
            1 => {}
            // Both adjacent planes coincide; keep a single link so the
            // relation stays symmetric without duplicate edges.
            2 => out[Direction::Right.index()] = Some(SatelliteId::new(1 - p, s)),
            _ => {
                let seam = self.params.polar_seam;
                if !(seam && p == 0) {
                    out[Direction::Left.index()] = Some(SatelliteId::new((p + o - 1) % o, s));
                }
                if !(seam && p == o - 1) {
                    out[Direction::Right.index()] = Some(SatelliteId::new((p + 1) % o, s));
                }
            }
        }
        Ok(out)
    }

    /// Flat-index form of the +Grid adjacency for every satellite.
    pub fn isl_adjacency(&self) -> Vec<[Option<usize>; 4]> {
        (0..self.len())
            .map(|i| {
                let nbrs = self.isl_neighbors(self.id_of(i)).expect("index in range");
                nbrs.map(|n| n.map(|id| self.index_of(id).expect("neighbour in range")))
            })
            .collect()
    }

    /// Visible satellite with the smallest slant range; ties go to the
    /// smallest flat index.
    pub fn gateway_attachment(
        &self,
        gateway: &Gateway,
        t: f64,
        min_elevation_rad: f64,
    ) -> Result<SatelliteId, OrbitalError> {
        let positions: Vec<Vec3> = (0..self.len()).map(|i| self.satellite_position_ecef(i, t)).collect();
        let ground = gateway.position_ecef(self.params.earth_radius_km);
        attach(&positions, ground, min_elevation_rad, |_| true)
            .map(|i| self.id_of(i))
            .ok_or(OrbitalError::CoverageGap { gateway: gateway.id, time: t })
    }

    /// Positions, adjacency and attachments at time `t`. Gateways without a
    /// visible satellite get `None`.
    pub fn snapshot(&self, gateways: &[Gateway], t: f64, min_elevation_rad: f64) -> ConstellationSnapshot {
        let positions: Vec<Vec3> = (0..self.len()).map(|i| self.satellite_position_ecef(i, t)).collect();
        let gateway_positions: Vec<Vec3> =
            gateways.iter().map(|g| g.position_ecef(self.params.earth_radius_km)).collect();
        let gateway_attachment = gateway_positions
            .iter()
            .map(|&g| attach(&positions, g, min_elevation_rad, |_| true))
            .collect();
        ConstellationSnapshot {
            time: t,
            positions,
            isl_adjacency: self.isl_adjacency(),
            gateway_positions,
            gateway_attachment,
            min_elevation_rad,
        }
    }
}

/// Sine of the elevation of `sat` seen from ground point `ground`.
pub fn sin_elevation(ground: Vec3, sat: Vec3) -> f64 {
    let los = sat - ground;
    let range = los.norm();
    if range == 0.0 {
        return 1.0;
    }
    los.dot(ground.normalized()) / range
}

/// Argmin slant range over satellites above `min_elevation_rad` that pass `usable`.
pub fn attach(
    positions: &[Vec3],
    ground: Vec3,
    min_elevation_rad: f64,
    usable: impl Fn(usize) -> bool,
) -> Option<usize> {
    let min_sin = math::sin(min_elevation_rad);
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in positions.iter().enumerate() {
        if !usable(i) || sin_elevation(ground, p) < min_sin {
            continue;
        }
        let d = ground.distance(p);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Geometry of the constellation and its ground attachments at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSnapshot {
    pub time: f64,
    /// Earth-fixed positions by flat index, km.
    pub positions: Vec<Vec3>,
    /// Neighbour flat indices by [`Direction`].
    pub isl_adjacency: Vec<[Option<usize>; 4]>,
    /// Earth-fixed gateway positions, km.
    pub gateway_positions: Vec<Vec3>,
    pub gateway_attachment: Vec<Option<usize>>,
    pub min_elevation_rad: f64,
}

impl ConstellationSnapshot {
    pub fn link_distance_km(&self, from: usize, to: usize) -> f64 {
        self.positions[from].distance(self.positions[to])
    }

    pub fn slant_range_km(&self, gateway: usize, sat: usize) -> f64 {
        self.gateway_positions[gateway].distance(self.positions[sat])
    }

    /// Number of undirected ISLs.
    pub fn isl_count(&self) -> usize {
        let directed: usize = self.isl_adjacency.iter().map(|n| n.iter().flatten().count()).sum();
        directed / 2
    }
}
