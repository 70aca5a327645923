//! Grid co-simulation for load-alteration attack studies.
//!
//! The crate couples a Newton-Raphson power flow, a line stability index,
//! thermostatic HVAC loads, inverse-time voltage relays and an aggregate
//! frequency model into a two-player game. A DDPG attacker falsifies
//! temperature readings at the weakest bus; a DQN defender retunes relay
//! thresholds.

pub mod agents;
pub mod dynamics;
pub mod game;
pub mod grid_core;
pub mod loads;
pub mod protection;
pub mod rng;
pub mod stability;
pub mod training;
