//! Discrete-event simulator for a beacon-enabled IEEE 802.15.4 star network:
//! slotted CSMA/CA in the contention access period, guaranteed time slots in
//! the contention-free period, and an ideal unit-disk PHY with per-receiver
//! collision modelling.
//!
//! The high-level entry points are [`world::World`] for a single run and
//! [`scenario`] for parameter sweeps driven by a config file.

pub mod audit;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod scenario;
pub mod trace;
pub mod world;

pub use engine::SymbolTime;
pub use mac::SuperframeConfig;
pub use world::{RunOutcome, RunParams, World};
