//! Swarm path planning: target assignment, a learned threat-cost surrogate,
//! steepest-descent steering under a turn-rate limit, and a discrete-time
//! simulator tying them together.

pub mod assignment;
pub mod controller;
pub mod convergence;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod scenario;
pub mod simulator;
pub mod surrogate;

pub use error::{Error, Result};
pub use geometry::Vec2;
