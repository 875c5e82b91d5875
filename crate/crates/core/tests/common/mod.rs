//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use thermofreq::network::{
    validate_networks, Bus, CouplingSpec, EdgeKind, ElectricSpec, HeatEdge, HeatNetwork, HeatSpec,
};
use thermofreq::{load_scenario, FirstOrderBlock, PumpMode, Scenario, System};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap()
}

/// Random connected heating graph with conserved mass flow: a Hamiltonian
/// base cycle through every node plus extra cycles over random node subsets.
/// Edge count lies in `2..=max_edges`. All edges are zero-demand loads.
pub fn random_heat_spec(seed: u64, max_edges: usize) -> HeatSpec {
    let mut rng = StdRng::seed_from_u64(seed);
    let target = rng.random_range(2..=max_edges);
    let n = rng.random_range(2..=target.min(12));
    let mut edges = Vec::new();
    let add_cycle = |nodes: &[usize], rng: &mut StdRng, edges: &mut Vec<HeatEdge>| {
        let q = rng.random_range(0.1..3.0);
        for w in 0..nodes.len() {
            edges.push(HeatEdge {
                tail: nodes[w],
                head: nodes[(w + 1) % nodes.len()],
                kind: EdgeKind::Load,
                volume: rng.random_range(0.1..2.0),
                mass_flow: q,
                demand: 0.0,
            });
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    add_cycle(&order, &mut rng, &mut edges);
    while target - edges.len() >= 2 {
        let room = target - edges.len();
        let len = rng.random_range(2..=room.min(n));
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut rng);
        nodes.truncate(len);
        add_cycle(&nodes, &mut rng, &mut edges);
    }
    HeatSpec {
        node_volumes: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
        edges,
    }
}

fn single_bus() -> ElectricSpec {
    ElectricSpec {
        buses: vec![Bus::inertial(1.0, 1.0)],
        lines: vec![],
        generators: vec![0],
    }
}

pub fn random_heat_network(seed: u64, max_edges: usize) -> HeatNetwork {
    let (_, h, _) = validate_networks(&single_bus(), &random_heat_spec(seed, max_edges), &CouplingSpec::default())
        .expect("generated network is valid");
    h
}

/// A single-bus system around a random heating graph with no sources or
/// pumps, so no heat is injected.
pub fn heat_only_system(seed: u64, max_edges: usize) -> System {
    let (e, h, c) = validate_networks(&single_bus(), &random_heat_spec(seed, max_edges), &CouplingSpec::default())
        .expect("generated network is valid");
    System::new(e, h, c, PumpMode::Mode1, None, vec![Arc::new(FirstOrderBlock::new(1.0))], vec![]).unwrap()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
