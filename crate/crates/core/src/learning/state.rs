//! The 26-feature local observation a satellite routes on.

use crate::math::Vec3;
use crate::orbital::Direction;

pub const STATE_DIM: usize = 26;
pub const ACTIONS: usize = 4;

/// `[current(3), up(3), down(3), left(3), right(3), destination(3),
///   occupancy(4), resilience(4)]`, every entry in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingState(pub [f64; STATE_DIM]);

impl RoutingState {
    pub const ZERO: RoutingState = RoutingState([0.0; STATE_DIM]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Default for RoutingState {
    fn default() -> Self {
        Self::ZERO
    }
}

/// Raw inputs to [`encode_state`]. Positions are Earth-fixed, in km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalView {
    pub position: Vec3,
    /// Indexed by [`Direction::index`]; `None` where no usable link exists.
    pub neighbors: [Option<Vec3>; ACTIONS],
    /// Occupancy of the outgoing queue toward each neighbour, in `[0, 1]`.
    pub occupancy: [f64; ACTIONS],
    /// Link resilience feature toward each neighbour, in `[0, 1]`.
    pub resilience: [f64; ACTIONS],
    pub destination: Vec3,
    /// Coordinate scale, the orbit radius `r_e + h`.
    pub scale_km: f64,
}

impl LocalView {
    /// Directions with a live neighbour.
    pub fn mask(&self) -> [bool; ACTIONS] {
        core::array::from_fn(|k| self.neighbors[k].is_some())
    }
}

fn unit_to_signed(x: f64) -> f64 {
    2.0 * x.clamp(0.0, 1.0) - 1.0
}

/// Missing neighbours encode as zero coordinates, full queue, zero resilience.
pub fn encode_state(view: &LocalView) -> RoutingState {
    let mut s = [0.0; STATE_DIM];
    let scale = |v: Vec3| {
        let k = view.scale_km;
        [(v.x / k).clamp(-1.0, 1.0), (v.y / k).clamp(-1.0, 1.0), (v.z / k).clamp(-1.0, 1.0)]
    };
    s[0..3].copy_from_slice(&scale(view.position));
    for d in Direction::ALL {
        let k = d.index();
        let base = 3 + 3 * k;
        match view.neighbors[k] {
            Some(p) => {
                s[base..base + 3].copy_from_slice(&scale(p));
                s[18 + k] = unit_to_signed(view.occupancy[k]);
                s[22 + k] = unit_to_signed(view.resilience[k]);
            }
            None => {
                s[18 + k] = 1.0;
                s[22 + k] = -1.0;
            }
        }
    }
    s[15..18].copy_from_slice(&scale(view.destination));
    RoutingState(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn view() -> LocalView {
        let r = 6921.0;
        LocalView {
            position: Vec3::new(r, 0.0, 0.0),
            neighbors: [
                Some(Vec3::new(0.0, r, 0.0)),
                Some(Vec3::new(0.0, -r, 0.0)),
                Some(Vec3::new(0.0, 0.0, r)),
                Some(Vec3::new(0.0, 0.0, -r)),
            ],
            occupancy: [0.0; 4],
            resilience: [1.0; 4],
            destination: Vec3::new(-6371.0, 0.0, 0.0),
            scale_km: r,
        }
    }

    #[test]
    fn pristine_neighbourhood_maps_to_extremes() {
        let s = encode_state(&view());
        assert_eq!(&s.0[18..22], &[-1.0; 4]);
        assert_eq!(&s.0[22..26], &[1.0; 4]);
        assert_eq!(&s.0[0..3], &[1.0, 0.0, 0.0]);
        assert!(s.0.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn missing_neighbour_is_sentinel() {
        let mut v = view();
        v.neighbors[Direction::Left.index()] = None;
        v.occupancy[Direction::Left.index()] = 0.3;
        let s = encode_state(&v);
        let k = Direction::Left.index();
        assert_eq!(&s.0[3 + 3 * k..6 + 3 * k], &[0.0; 3]);
        assert_eq!(s.0[18 + k], 1.0);
        assert_eq!(s.0[22 + k], -1.0);
        assert_eq!(v.mask(), [true, true, false, true]);
    }

    #[test]
    fn injective_on_sampled_grid() {
        // 10 positions × 10 occupancy levels × 10 resilience levels × 10 destinations.
        let mut seen: Vec<[u64; STATE_DIM]> = Vec::with_capacity(10_000);
        let r = 6921.0;
        for p in 0..10 {
            for q in 0..10 {
                for res in 0..10 {
                    for d in 0..10 {
                        let mut v = view();
                        let a = p as f64 * 0.3;
                        v.position = Vec3::new(r * libm::cos(a), r * libm::sin(a), 0.0);
                        v.occupancy[p % 4] = q as f64 / 10.0;
                        v.resilience[(p + 1) % 4] = res as f64 / 10.0;
                        let b = d as f64 * 0.25;
                        v.destination = Vec3::new(6371.0 * libm::cos(b), 0.0, 6371.0 * libm::sin(b));
                        seen.push(encode_state(&v).0.map(f64::to_bits));
                    }
                }
            }
        }
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), n);
    }
}
