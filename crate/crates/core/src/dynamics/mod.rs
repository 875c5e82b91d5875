//! Coupled system dynamics and their time integration.

pub mod integrate;
pub mod simulate;
pub mod system;
