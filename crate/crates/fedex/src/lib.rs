//! Federated learning with indirect server-client communication.
//!
//! Mobile transporters (e.g. UAVs) ferry the global model out to clients and
//! cumulative local updates back to the server. This crate provides:
//!
//! - the transporter energy and round-trip-time model ([`energy`], [`routing`]),
//! - the bi-level client-assignment + route-planning optimizer ([`assignment`]),
//! - a deterministic slot-by-slot simulator of the sync and async schedules
//!   ([`fedsim`]),
//! - trace verification and convergence-bound evaluation ([`verify`]),
//! - synthetic learning tasks with analytically known constants ([`learning`]).

pub mod assignment;
pub mod config;
pub mod energy;
pub mod error;
pub mod fedsim;
pub mod learning;
pub mod orchestrate;
pub mod routing;
pub mod topology;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
