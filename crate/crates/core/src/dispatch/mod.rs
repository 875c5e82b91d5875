//! Steady states, optimal dispatch oracles and their comparison with
//! simulated trajectories.

pub mod equilibrium;
pub mod generalized;
pub mod linsolve;
pub mod oracle;
pub mod verify;

pub use equilibrium::{check_security, equilibrium_scalars, expand_equilibrium, EquilibriumPoint, Security};
pub use generalized::{generalized_dispatch, CubicMarginal, GeneralizedProblem, LinearMarginal, MarginalCost};
pub use oracle::{
    equilibrium_scalars_mode1, equilibrium_scalars_mode2, objective_mode1, objective_mode2, solve_dispatch_mode1,
    solve_dispatch_mode2, Allocation, DispatchProblem, DispatchSolution,
};
pub use verify::{verify_power_sharing, ComparisonRow, OptimalityReport};
