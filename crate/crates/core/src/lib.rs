//! Coupled electric/district-heating network simulation with heat pumps in
//! primary frequency control, plus the optimality oracles used to certify
//! the simulated steady states.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`]: validated electric and heating topologies, `A_h`.
//! - [`control`]: droop controllers, passive block interface, passivity audit.
//! - [`dynamics`]: the coupled vector field, RK4 integration, trajectories.
//! - [`dispatch`]: equilibria, KKT dispatch oracles, steady-state verification.
//! - [`scenario`], [`metrics`], [`report`]: scenario files, metrics and outputs.

pub mod control;
pub mod dispatch;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod network;
pub mod report;
pub mod scenario;

pub use control::{FirstOrderBlock, PassiveBlock, TwoLagBlock};
pub use dynamics::simulate::{simulate, simulate_from, SimSettings, Signal, Trajectory};
pub use dynamics::system::{Disturbance, DisturbanceTarget, System};
pub use error::{Error, Result};
pub use network::{ElectricNetwork, HeatNetwork, PumpCoupling, PumpMode};

pub use scenario::{load_scenario, parse_scenario, Scenario};
