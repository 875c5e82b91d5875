//! Shared inputs for the benchmarks.

use std::path::PathBuf;

use thermofreq::{load_scenario, Scenario};

/// Loads a scenario shipped in the workspace `scenarios/` directory.
pub fn fixture(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"));
    load_scenario(&path).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}
