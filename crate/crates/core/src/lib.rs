//! Routing in LEO satellite constellations: Walker-Delta geometry, link and
//! queue models, outage and resilience scoring, a Dijkstra baseline and
//! learned (DDQN / SARSA) next-hop policies, all driven by a fixed-step
//! discrete-event engine.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod channel;
pub mod learning;
pub mod math;
pub mod orbital;
pub mod queueing;
pub mod resilience;
pub mod routing;
pub mod sim;
pub mod traffic;
