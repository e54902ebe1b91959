//! Numerical engine for the dual-migration core-periphery model, in which
//! firms move toward high real profits and manufacturing workers toward high
//! real wages, on discrete regions or on a circular (racetrack) economy.

pub mod analysis;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod model;
pub mod stability;

pub use error::{Error, Result};
