//! Mixed-traffic routing on networks where buses share a dedicated lane
//! with connected automated vehicles.
//!
//! The crate is organised bottom-up: [`network`] holds the graph,
//! [`flowmodel`] turns fleet snapshots into anticipated lane times,
//! [`router`] implements the routing policies and [`sim`] ties everything
//! together in a deterministic tick loop.

pub mod audit;
pub mod experiment;
pub mod fleet;
pub mod flowmodel;
pub mod metrics;
pub mod network;
pub mod router;
pub mod scenario;
pub mod sim;

/// Simulation time in whole seconds.
pub type Seconds = i64;
