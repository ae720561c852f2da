//! Discrete-time simulator for an entanglement generation switch: a hub that
//! shares `R` generation resources among node pairs, schedules them by
//! maximum weight, and steers session demand with a price-based rate control
//! protocol.

pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numopt;
pub mod rcp;
pub mod scheduler;
pub mod traffic;

pub use error::{Error, Result};
