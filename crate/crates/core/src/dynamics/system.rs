//! The coupled electric/thermal vector field.
//!
//! State vector layout (flat `f64` slice):
//!
//! ```text
//! [ eta (per line) | omega (per inertial bus) | generator block states |
//!   T^E (per heat edge) | T^N (per heat node) | heat-source block states ]
//! ```
//!
//! Converter buses (mode 2) have no frequency state: their frequency is the
//! algebraic output `m * Tbar`, and the pump power is read off the converter's
//! net line inflow.

use std::ops::Range;
use std::sync::Arc;

use crate::control::PassiveBlock;
use crate::error::{NetworkError, SimulationError};
use crate::network::{
    attach_converter_buses, weighted_mean, BusKind, EdgeKind, ElectricNetwork, HeatNetwork,
    PumpCoupling, PumpMode,
};

/// `p_ij = B_ij sin(eta_ij) - p_ij_nom`.
pub fn line_flow(eta: f64, susceptance: f64, nominal_flow: f64) -> f64 {
    susceptance * eta.sin() - nominal_flow
}

/// Mode 1 pump draw `p^P = a_1 omega`.
pub fn pump_mode1_power(omega: f64, gain: f64) -> f64 {
    gain * omega
}

/// Step change in demand at a bus (`p^L`) or a heat edge (`h^L`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum DisturbanceTarget {
    Bus(usize),
    Edge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Disturbance {
    pub time: f64,
    pub target: DisturbanceTarget,
    pub magnitude: f64,
}

/// Demand deviations in force over an integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveLoads {
    pub bus: Vec<f64>,
    pub edge: Vec<f64>,
}

impl ActiveLoads {
    pub fn total_electric(&self) -> f64 {
        self.bus.iter().sum()
    }

    pub fn total_heat(&self) -> f64 {
        self.edge.iter().sum()
    }
}

/// Offsets of every named component in the flat state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub eta: Range<usize>,
    pub omega: Range<usize>,
    /// State slot of each bus's frequency; `None` for converter buses.
    pub omega_slot: Vec<Option<usize>>,
    pub generators: Vec<Range<usize>>,
    pub edge_temperatures: Range<usize>,
    pub node_temperatures: Range<usize>,
    pub sources: Vec<Range<usize>>,
    pub dim: usize,
}

impl StateLayout {
    pub fn temperatures(&self) -> Range<usize> {
        self.edge_temperatures.start..self.node_temperatures.end
    }

    /// Human-readable name of component `i` (one-based ids).
    pub fn component_name(&self, i: usize) -> String {
        let within = |r: &Range<usize>| r.contains(&i);
        if within(&self.eta) {
            return format!("eta[line {}]", i - self.eta.start + 1);
        }
        if within(&self.omega) {
            let bus = self.omega_slot.iter().position(|s| *s == Some(i)).unwrap_or(0);
            return format!("omega[bus {}]", bus + 1);
        }
        if let Some(g) = self.generators.iter().position(within) {
            return format!("generator {} state {}", g + 1, i - self.generators[g].start + 1);
        }
        if within(&self.edge_temperatures) {
            return format!("T^E[edge {}]", i - self.edge_temperatures.start + 1);
        }
        if within(&self.node_temperatures) {
            return format!("T^N[node {}]", i - self.node_temperatures.start + 1);
        }
        if let Some(s) = self.sources.iter().position(within) {
            return format!("heat source {} state {}", s + 1, i - self.sources[s].start + 1);
        }
        format!("component {i}")
    }
}

/// Structured view of one state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub eta: Vec<f64>,
    /// Frequencies of the inertial buses, in bus order.
    pub omega: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
    pub edge_temperatures: Vec<f64>,
    pub node_temperatures: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
}

/// Offsets of the derived outputs recorded alongside each state sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayout {
    pub flows: Range<usize>,
    pub omega: Range<usize>,
    pub omega_dot: Range<usize>,
    pub p_gen: Range<usize>,
    pub h_src: Range<usize>,
    pub p_pump: Range<usize>,
    pub h_pump: Range<usize>,
    pub p_damping: Range<usize>,
    pub p_load: Range<usize>,
    pub h_load: Range<usize>,
    pub t_bar: usize,
    pub dim: usize,
}

impl OutputLayout {
    fn new(n_lines: usize, n_buses: usize, n_gen: usize, n_src: usize, n_pumps: usize, n_edges: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let flows = take(n_lines);
        let omega = take(n_buses);
        let omega_dot = take(n_buses);
        let p_gen = take(n_gen);
        let h_src = take(n_src);
        let p_pump = take(n_pumps);
        let h_pump = take(n_pumps);
        let p_damping = take(n_buses);
        let p_load = take(n_buses);
        let h_load = take(n_edges);
        let t_bar = take(1).start;
        OutputLayout {
            flows,
            omega,
            omega_dot,
            p_gen,
            h_src,
            p_pump,
            h_pump,
            p_damping,
            p_load,
            h_load,
            t_bar,
            dim: at,
        }
    }
}

/// A scenario compiled for one pump mode: networks (with converter buses in
/// mode 2), controller blocks and the state layout.
#[derive(Debug, Clone)]
pub struct System {
    electric: ElectricNetwork,
    heat: HeatNetwork,
    coupling: PumpCoupling,
    mode: PumpMode,
    generator_blocks: Vec<Arc<dyn PassiveBlock>>,
    source_blocks: Vec<Arc<dyn PassiveBlock>>,
    source_edges: Vec<usize>,
    /// Pumps on each heat edge, indexed by edge.
    pump_on_edge: Vec<Option<usize>>,
    layout: StateLayout,
    outputs: OutputLayout,
}

impl System {
    /// `generator_blocks` follow `electric.generators()`; `source_blocks`
    /// follow the source edges in edge order.
    pub fn new(
        electric: ElectricNetwork,
        heat: HeatNetwork,
        coupling: PumpCoupling,
        mode: PumpMode,
        link_susceptance: Option<f64>,
        generator_blocks: Vec<Arc<dyn PassiveBlock>>,
        source_blocks: Vec<Arc<dyn PassiveBlock>>,
    ) -> Result<Self, NetworkError> {
        let electric = match mode {
            // Without pumps there is nothing to attach; mode 2 equals mode 1.
            PumpMode::Mode1 => electric,
            PumpMode::Mode2 if coupling.is_empty() => electric,
            PumpMode::Mode2 => {
                let link = link_susceptance.ok_or(NetworkError::MissingConverterLink)?;
                attach_converter_buses(&electric, &coupling, mode, link)?
            }
        };
        if generator_blocks.len() != electric.generators().len() {
            return Err(NetworkError::BlockCount {
                what: "generators",
                got: generator_blocks.len(),
                expected: electric.generators().len(),
            });
        }
        let source_edges: Vec<usize> = heat.edges_of_kind(EdgeKind::Source).collect();
        if source_blocks.len() != source_edges.len() {
            return Err(NetworkError::BlockCount {
                what: "heat sources",
                got: source_blocks.len(),
                expected: source_edges.len(),
            });
        }
        let mut pump_on_edge = vec![None; heat.n_edges()];
        for (k, p) in coupling.pumps().iter().enumerate() {
            pump_on_edge[p.edge] = Some(k);
        }

        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let eta = take(electric.n_lines());
        let omega_start = eta.end;
        let mut omega_slot = Vec::with_capacity(electric.n_buses());
        let mut n_inertial = 0;
        for bus in electric.buses() {
            if bus.is_converter() {
                omega_slot.push(None);
            } else {
                omega_slot.push(Some(omega_start + n_inertial));
                n_inertial += 1;
            }
        }
        let omega = take(n_inertial);
        let generators = generator_blocks.iter().map(|b| take(b.dim())).collect();
        let edge_temperatures = take(heat.n_edges());
        let node_temperatures = take(heat.n_nodes());
        let sources = source_blocks.iter().map(|b| take(b.dim())).collect();
        let layout = StateLayout {
            eta,
            omega,
            omega_slot,
            generators,
            edge_temperatures,
            node_temperatures,
            sources,
            dim: at,
        };
        let outputs = OutputLayout::new(
            electric.n_lines(),
            electric.n_buses(),
            generator_blocks.len(),
            source_blocks.len(),
            coupling.len(),
            heat.n_edges(),
        );
        Ok(System {
            electric,
            heat,
            coupling,
            mode,
            generator_blocks,
            source_blocks,
            source_edges,
            pump_on_edge,
            layout,
            outputs,
        })
    }

    pub fn electric(&self) -> &ElectricNetwork {
        &self.electric
    }

    pub fn heat(&self) -> &HeatNetwork {
        &self.heat
    }

    pub fn coupling(&self) -> &PumpCoupling {
        &self.coupling
    }

    pub fn mode(&self) -> PumpMode {
        self.mode
    }

    pub fn generator_blocks(&self) -> &[Arc<dyn PassiveBlock>] {
        &self.generator_blocks
    }

    pub fn source_blocks(&self) -> &[Arc<dyn PassiveBlock>] {
        &self.source_blocks
    }

    /// Heat edge index of each conventional source.
    pub fn source_edges(&self) -> &[usize] {
        &self.source_edges
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn output_layout(&self) -> &OutputLayout {
        &self.outputs
    }

    /// Base demands (heat loads from the network data, zero electric load).
    pub fn base_loads(&self) -> ActiveLoads {
        ActiveLoads {
            bus: vec![0.0; self.electric.n_buses()],
            edge: self.heat.edges().iter().map(|e| e.demand).collect(),
        }
    }

    /// Demands in force at time `t`; steps are right-continuous.
    pub fn loads_at(&self, disturbances: &[Disturbance], t: f64) -> ActiveLoads {
        let mut loads = self.base_loads();
        for d in disturbances.iter().filter(|d| t >= d.time) {
            apply(&mut loads, d);
        }
        loads
    }

    /// Nominal operating point: line angles carrying the nominal flows,
    /// every deviation variable zero.
    pub fn default_initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.dim];
        for (l, line) in self.electric.lines().iter().enumerate() {
            x[self.layout.eta.start + l] = (line.nominal_flow / line.susceptance).asin();
        }
        x
    }

    /// Rejects initial line angles that no set of bus angles can produce.
    pub fn check_initial_state(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.layout.dim {
            return Err(NetworkError::LengthMismatch {
                what: "initial state",
                got: x.len(),
                expected: self.layout.dim,
            });
        }
        let residual = self.electric.angle_consistency_residual(&x[self.layout.eta.clone()]);
        if residual > 1e-9 {
            return Err(NetworkError::InconsistentAngles { residual });
        }
        Ok(())
    }

    pub fn unpack(&self, x: &[f64]) -> SystemState {
        let l = &self.layout;
        SystemState {
            eta: x[l.eta.clone()].to_vec(),
            omega: x[l.omega.clone()].to_vec(),
            generators: l.generators.iter().map(|r| x[r.clone()].to_vec()).collect(),
            edge_temperatures: x[l.edge_temperatures.clone()].to_vec(),
            node_temperatures: x[l.node_temperatures.clone()].to_vec(),
            sources: l.sources.iter().map(|r| x[r.clone()].to_vec()).collect(),
        }
    }

    pub fn pack(&self, state: &SystemState) -> Result<Vec<f64>, SimulationError> {
        let l = &self.layout;
        let mut x = Vec::with_capacity(l.dim);
        x.extend_from_slice(&state.eta);
        x.extend_from_slice(&state.omega);
        for g in &state.generators {
            x.extend_from_slice(g);
        }
        x.extend_from_slice(&state.edge_temperatures);
        x.extend_from_slice(&state.node_temperatures);
        for s in &state.sources {
            x.extend_from_slice(s);
        }
        if x.len() != l.dim {
            return Err(SimulationError::StateLength {
                got: x.len(),
                expected: l.dim,
            });
        }
        Ok(x)
    }

    pub fn average_temperature(&self, x: &[f64]) -> f64 {
        weighted_mean(&x[self.layout.temperatures()], self.heat.volumes())
    }

    /// Mode 2 algebraic coupling: frequency of each converter bus (`m Tbar`)
    /// and each pump's power (net line inflow at its converter bus).
    pub fn pump_mode2_coupling(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t_bar = self.average_temperature(x);
        let mut inflow = vec![0.0; self.electric.n_buses()];
        self.net_inflow(x, &mut inflow);
        let pumps = self.coupling.pumps();
        let omega = pumps.iter().map(|p| p.mode2_coefficient * t_bar).collect();
        let power = self
            .electric
            .pump_buses()
            .iter()
            .map(|&b| inflow[b])
            .collect();
        (omega, power)
    }

    fn net_inflow(&self, x: &[f64], inflow: &mut [f64]) {
        inflow.fill(0.0);
        for (l, line) in self.electric.lines().iter().enumerate() {
            let f = line_flow(x[self.layout.eta.start + l], line.susceptance, line.nominal_flow);
            inflow[line.to] += f;
            inflow[line.from] -= f;
        }
    }

    /// Writes the time derivative of `x` under `loads` into `dx`.
    pub fn assemble_rhs(
        &self,
        x: &[f64],
        loads: &ActiveLoads,
        dx: &mut [f64],
    ) -> Result<(), SimulationError> {
        self.evaluate(x, loads, dx, None)
    }

    /// Derivative at time `t` given the disturbance schedule.
    pub fn rhs_at(
        &self,
        x: &[f64],
        disturbances: &[Disturbance],
        t: f64,
        dx: &mut [f64],
    ) -> Result<(), SimulationError> {
        self.evaluate(x, &self.loads_at(disturbances, t), dx, None)
    }

    /// Derived outputs at `x` (flows, pump powers, Tbar, ...), laid out per
    /// [`OutputLayout`].
    pub fn outputs(&self, x: &[f64], loads: &ActiveLoads) -> Result<Vec<f64>, SimulationError> {
        let mut dx = vec![0.0; self.layout.dim];
        let mut out = vec![0.0; self.outputs.dim];
        self.evaluate(x, loads, &mut dx, Some(&mut out))?;
        Ok(out)
    }

    pub(crate) fn evaluate(
        &self,
        x: &[f64],
        loads: &ActiveLoads,
        dx: &mut [f64],
        mut out: Option<&mut [f64]>,
    ) -> Result<(), SimulationError> {
        let l = &self.layout;
        if x.len() != l.dim || dx.len() != l.dim {
            return Err(SimulationError::StateLength {
                got: x.len().min(dx.len()),
                expected: l.dim,
            });
        }
        let n_buses = self.electric.n_buses();
        let pumps = self.coupling.pumps();
        let temps = &x[l.temperatures()];
        let volumes = self.heat.volumes();
        let t_bar = weighted_mean(temps, volumes);

        let omega_of = |b: usize| -> f64 {
            match l.omega_slot[b] {
                Some(s) => x[s],
                None => match self.electric.buses()[b].kind {
                    BusKind::Converter { pump } => pumps[pump].mode2_coefficient * t_bar,
                    BusKind::Inertial => unreachable!("inertial buses have a state slot"),
                },
            }
        };

        // Net power into each bus: line inflows plus local injections.
        let mut balance = vec![0.0; n_buses];
        for (i, line) in self.electric.lines().iter().enumerate() {
            let eta = x[l.eta.start + i];
            let f = line_flow(eta, line.susceptance, line.nominal_flow);
            balance[line.to] += f;
            balance[line.from] -= f;
            dx[l.eta.start + i] = omega_of(line.from) - omega_of(line.to);
            if let Some(o) = out.as_deref_mut() {
                o[self.outputs.flows.start + i] = f;
            }
        }

        let mut pump_power = vec![0.0; pumps.len()];
        for (k, p) in pumps.iter().enumerate() {
            let bus = self.electric.pump_buses()[k];
            pump_power[k] = match self.mode {
                PumpMode::Mode1 => pump_mode1_power(omega_of(bus), p.mode1_gain),
                // Converter bus balance 0 = -p^P + net inflow.
                PumpMode::Mode2 => balance[bus],
            };
            balance[bus] -= pump_power[k];
        }

        for (g, (&bus, block)) in self
            .electric
            .generators()
            .iter()
            .zip(&self.generator_blocks)
            .enumerate()
        {
            let r = l.generators[g].clone();
            let u = omega_of(bus);
            let y = block.output(&x[r.clone()], u);
            block.drift(&x[r.clone()], u, &mut dx[r]);
            balance[bus] += y;
            if let Some(o) = out.as_deref_mut() {
                o[self.outputs.p_gen.start + g] = y;
            }
        }

        for (b, bus) in self.electric.buses().iter().enumerate() {
            let w = omega_of(b);
            let damping = bus.damping * w;
            if let Some(slot) = l.omega_slot[b] {
                let net = balance[b] - loads.bus[b] - damping;
                dx[slot] = net / bus.inertia;
            }
            if let Some(o) = out.as_deref_mut() {
                o[self.outputs.omega.start + b] = w;
                o[self.outputs.omega_dot.start + b] = l.omega_slot[b].map_or(0.0, |s| dx[s]);
                o[self.outputs.p_damping.start + b] = damping;
                o[self.outputs.p_load.start + b] = loads.bus[b];
            }
        }

        // Heat injections per edge.
        let ne = self.heat.n_edges();
        let mut injection = vec![0.0; ne];
        for (j, inj) in injection.iter_mut().enumerate() {
            *inj = -loads.edge[j];
            if let Some(k) = self.pump_on_edge[j] {
                *inj += pumps[k].cop * pump_power[k];
            }
        }
        for (s, (&edge, block)) in self.source_edges.iter().zip(&self.source_blocks).enumerate() {
            let r = l.sources[s].clone();
            let h = block.output(&x[r.clone()], t_bar);
            block.drift(&x[r.clone()], t_bar, &mut dx[r]);
            injection[edge] += h;
            if let Some(o) = out.as_deref_mut() {
                o[self.outputs.h_src.start + s] = h;
            }
        }

        // V T' = -A_h T + [injection; 0]
        let ah = self.heat.ah();
        let nt = temps.len();
        let t0 = l.edge_temperatures.start;
        for i in 0..nt {
            let mut acc = if i < ne { injection[i] } else { 0.0 };
            for (j, tj) in temps.iter().enumerate() {
                acc -= ah[(i, j)] * tj;
            }
            dx[t0 + i] = acc / volumes[i];
        }

        if let Some(o) = out {
            for k in 0..pumps.len() {
                o[self.outputs.p_pump.start + k] = pump_power[k];
                o[self.outputs.h_pump.start + k] = pumps[k].cop * pump_power[k];
            }
            o[self.outputs.h_load.clone()].copy_from_slice(&loads.edge);
            o[self.outputs.t_bar] = t_bar;
        }

        if let Some(i) = dx.iter().position(|v| !v.is_finite()) {
            return Err(SimulationError::NonFinite {
                component: format!("d/dt {}", l.component_name(i)),
                time: f64::NAN,
            });
        }
        Ok(())
    }
}

pub(crate) fn apply(loads: &mut ActiveLoads, d: &Disturbance) {
    match d.target {
        DisturbanceTarget::Bus(b) => loads.bus[b] += d.magnitude,
        DisturbanceTarget::Edge(e) => loads.edge[e] += d.magnitude,
    }
}
