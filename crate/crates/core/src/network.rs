//! Electric and district-heating network topologies.
//!
//! Both networks are validated once and are immutable afterwards. All indices
//! are zero-based internally; error messages report one-based ids to match
//! scenario files.
//!
//! Heat incidence orientation: row `j` of `B_h` holds `+1` at the head node of
//! edge `j` (where its flow leaves into) and `-1` at its tail node (where the
//! flow enters the edge from). The edge temperature equation therefore mixes
//! in the tail node temperature, and node equations collect edges whose head
//! is that node.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::NetworkError;

/// Tolerance on per-node mass-flow conservation.
pub const MASS_FLOW_TOLERANCE: f64 = 1e-9;

/// How heat pumps take part in frequency regulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PumpMode {
    /// Pump power proportional to the local bus frequency.
    Mode1,
    /// Pump behind a zero-inertia converter bus whose frequency follows the
    /// average heating temperature.
    Mode2,
}

impl PumpMode {
    pub fn number(self) -> u8 {
        match self {
            PumpMode::Mode1 => 1,
            PumpMode::Mode2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusKind {
    Inertial,
    /// Zero-inertia converter bus carrying pump `pump`.
    Converter { pump: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub inertia: f64,
    pub damping: f64,
    pub kind: BusKind,
}

impl Bus {
    pub fn inertial(inertia: f64, damping: f64) -> Self {
        Bus {
            inertia,
            damping,
            kind: BusKind::Inertial,
        }
    }

    pub fn is_converter(&self) -> bool {
        matches!(self.kind, BusKind::Converter { .. })
    }
}

/// Oriented transmission line `(from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub nominal_flow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Pump,
    Source,
    Load,
}

impl EdgeKind {
    fn tag(self) -> &'static str {
        match self {
            EdgeKind::Pump => "pump",
            EdgeKind::Source => "source",
            EdgeKind::Load => "load",
        }
    }
}

/// Heat edge oriented along its mass flow, from `tail` to `head`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatEdge {
    pub tail: usize,
    pub head: usize,
    pub kind: EdgeKind,
    pub volume: f64,
    pub mass_flow: f64,
    /// Constant heat demand; nonzero only on load edges.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pump {
    pub bus: usize,
    pub edge: usize,
    pub cop: f64,
    pub mode1_gain: f64,
    pub mode2_coefficient: f64,
}

/// Unvalidated electric data as parsed from a scenario.
#[derive(Debug, Clone, Default)]
pub struct ElectricSpec {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct HeatSpec {
    pub node_volumes: Vec<f64>,
    pub edges: Vec<HeatEdge>,
}

#[derive(Debug, Clone, Default)]
pub struct CouplingSpec {
    pub pumps: Vec<Pump>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectricNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<usize>,
    pump_buses: Vec<usize>,
}

impl ElectricNetwork {
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Bus index of each generator.
    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    /// Bus where each pump draws its power (the converter bus in mode 2).
    pub fn pump_buses(&self) -> &[usize] {
        &self.pump_buses
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn converter_buses(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.buses.iter().enumerate().filter_map(|(b, bus)| match bus.kind {
            BusKind::Converter { pump } => Some((b, pump)),
            BusKind::Inertial => None,
        })
    }

    pub fn has_converters(&self) -> bool {
        self.buses.iter().any(Bus::is_converter)
    }

    /// Bus-by-line incidence: `+1` at the sending bus, `-1` at the receiving bus.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.buses.len(), self.lines.len());
        for (l, line) in self.lines.iter().enumerate() {
            e[(line.from, l)] = 1.0;
            e[(line.to, l)] = -1.0;
        }
        e
    }

    /// Max deviation of `eta` from the nearest vector of bus-angle differences.
    pub fn angle_consistency_residual(&self, eta: &[f64]) -> f64 {
        let n = self.buses.len();
        if n <= 1 || eta.is_empty() {
            return 0.0;
        }
        // Drop bus 0 as the angle reference; the reduced incidence has full row
        // rank on a connected graph.
        let e = self.incidence();
        let er = e.rows(1, n - 1).into_owned();
        let eta = DVector::from_column_slice(eta);
        let lap = &er * er.transpose();
        let rhs = &er * &eta;
        let Some(theta) = lap.lu().solve(&rhs) else {
            return f64::INFINITY;
        };
        let fitted = er.transpose() * theta;
        (fitted - eta).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatNetwork {
    node_volumes: Vec<f64>,
    edges: Vec<HeatEdge>,
    volumes: Vec<f64>,
    incidence: DMatrix<f64>,
    ah: DMatrix<f64>,
}

impl HeatNetwork {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_volumes.len()
    }

    /// Length of the stacked temperature vector `(T^E, T^N)`.
    pub fn n_temperatures(&self) -> usize {
        self.edges.len() + self.node_volumes.len()
    }

    pub fn edges(&self) -> &[HeatEdge] {
        &self.edges
    }

    pub fn node_volumes(&self) -> &[f64] {
        &self.node_volumes
    }

    /// Diagonal of the volume matrix, edges first.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Edge-by-node incidence, `+1` at the head and `-1` at the tail.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// The transport matrix `A_h`, computed once at validation.
    pub fn ah(&self) -> &DMatrix<f64> {
        &self.ah
    }

    pub fn edges_of_kind(&self, kind: EdgeKind) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.kind == kind)
            .map(|(j, _)| j)
    }

    pub fn mass_flows(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.mass_flow).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpCoupling {
    pumps: Vec<Pump>,
}

impl PumpCoupling {
    pub fn pumps(&self) -> &[Pump] {
        &self.pumps
    }

    pub fn len(&self) -> usize {
        self.pumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pumps.is_empty()
    }
}

fn positive(what: impl Into<String>, value: f64) -> Result<(), NetworkError> {
    if !value.is_finite() {
        return Err(NetworkError::NonFinite {
            what: what.into(),
            value,
        });
    }
    if value <= 0.0 {
        return Err(NetworkError::NonPositive {
            what: what.into(),
            value,
        });
    }
    Ok(())
}

fn finite(what: impl Into<String>, value: f64) -> Result<(), NetworkError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NetworkError::NonFinite {
            what: what.into(),
            value,
        })
    }
}

fn check_index(
    what: impl FnOnce() -> String,
    kind: &'static str,
    index: usize,
    len: usize,
) -> Result<(), NetworkError> {
    if index < len {
        Ok(())
    } else {
        Err(NetworkError::DanglingIndex {
            what: what(),
            kind,
            index: index.wrapping_add(1),
        })
    }
}

/// First node (zero-based) unreachable from node 0 over undirected links.
fn unreachable_node(n: usize, links: impl Iterator<Item = (usize, usize)>) -> Option<usize> {
    if n == 0 {
        return None;
    }
    let mut adj = vec![Vec::new(); n];
    for (a, b) in links {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.iter().position(|s| !s)
}

fn validate_electric(spec: &ElectricSpec) -> Result<(), NetworkError> {
    let n = spec.buses.len();
    if n == 0 {
        return Err(NetworkError::NoBuses);
    }
    for (b, bus) in spec.buses.iter().enumerate() {
        if bus.is_converter() {
            return Err(NetworkError::HostIsConverter { bus: b + 1 });
        }
        positive(format!("inertia of bus {}", b + 1), bus.inertia)?;
        positive(format!("damping of bus {}", b + 1), bus.damping)?;
    }
    let mut seen = HashSet::new();
    for line in &spec.lines {
        let label = || format!("line ({},{})", line.from + 1, line.to + 1);
        check_index(label, "bus", line.from, n)?;
        check_index(label, "bus", line.to, n)?;
        if line.from == line.to {
            return Err(NetworkError::SelfLoop {
                from: line.from + 1,
                to: line.to + 1,
            });
        }
        positive(format!("susceptance of {}", label()), line.susceptance)?;
        finite(format!("nominal flow of {}", label()), line.nominal_flow)?;
        if line.nominal_flow.abs() >= line.susceptance {
            return Err(NetworkError::InfeasibleNominalFlow {
                from: line.from + 1,
                to: line.to + 1,
                nominal: line.nominal_flow,
                susceptance: line.susceptance,
            });
        }
        if seen.contains(&(line.to, line.from)) {
            return Err(NetworkError::AntiParallelLine {
                a: line.from + 1,
                b: line.to + 1,
            });
        }
        if !seen.insert((line.from, line.to)) {
            return Err(NetworkError::Duplicate {
                what: "line",
                index: line.from + 1,
            });
        }
    }
    if let Some(b) = unreachable_node(n, spec.lines.iter().map(|l| (l.from, l.to))) {
        return Err(NetworkError::Disconnected { bus: b + 1 });
    }
    let mut gens = HashSet::new();
    for &g in &spec.generators {
        check_index(|| "generator".into(), "bus", g, n)?;
        if !gens.insert(g) {
            return Err(NetworkError::Duplicate {
                what: "generator bus",
                index: g + 1,
            });
        }
    }
    Ok(())
}

fn validate_heat(spec: &HeatSpec) -> Result<(), NetworkError> {
    let n = spec.node_volumes.len();
    for (k, &v) in spec.node_volumes.iter().enumerate() {
        positive(format!("volume of heat node {}", k + 1), v)?;
    }
    let mut balance = vec![0.0; n];
    for (j, e) in spec.edges.iter().enumerate() {
        let label = || format!("heat edge {}", j + 1);
        check_index(label, "heat node", e.tail, n)?;
        check_index(label, "heat node", e.head, n)?;
        if e.tail == e.head {
            return Err(NetworkError::DegenerateEdge {
                edge: j + 1,
                node: e.head + 1,
            });
        }
        positive(format!("volume of heat edge {}", j + 1), e.volume)?;
        positive(format!("mass flow of heat edge {}", j + 1), e.mass_flow)?;
        finite(format!("demand of heat edge {}", j + 1), e.demand)?;
        if e.kind != EdgeKind::Load && e.demand != 0.0 {
            return Err(NetworkError::EdgeTagMismatch {
                edge: j + 1,
                tag: e.kind.tag(),
                reason: "carries a heat demand",
            });
        }
        balance[e.head] += e.mass_flow;
        balance[e.tail] -= e.mass_flow;
    }
    for (k, &imbalance) in balance.iter().enumerate() {
        if imbalance.abs() > MASS_FLOW_TOLERANCE {
            return Err(NetworkError::MassFlowImbalance {
                node: k + 1,
                imbalance,
            });
        }
    }
    if let Some(k) = unreachable_node(n, spec.edges.iter().map(|e| (e.tail, e.head))) {
        return Err(NetworkError::HeatDisconnected { node: k + 1 });
    }
    let total: f64 = spec.node_volumes.iter().sum::<f64>()
        + spec.edges.iter().map(|e| e.volume).sum::<f64>();
    positive("total heating volume", total)?;
    Ok(())
}

fn validate_coupling(
    spec: &CouplingSpec,
    electric: &ElectricSpec,
    heat: &HeatSpec,
) -> Result<(), NetworkError> {
    let mut buses = HashSet::new();
    let mut edges = HashSet::new();
    for (k, p) in spec.pumps.iter().enumerate() {
        let label = || format!("pump {}", k + 1);
        check_index(label, "bus", p.bus, electric.buses.len())?;
        check_index(label, "heat edge", p.edge, heat.edges.len())?;
        if heat.edges[p.edge].kind != EdgeKind::Pump {
            return Err(NetworkError::EdgeTagMismatch {
                edge: p.edge + 1,
                tag: heat.edges[p.edge].kind.tag(),
                reason: "is assigned a heat pump",
            });
        }
        if !buses.insert(p.bus) {
            return Err(NetworkError::Duplicate {
                what: "pump bus",
                index: p.bus + 1,
            });
        }
        if !edges.insert(p.edge) {
            return Err(NetworkError::Duplicate {
                what: "pump edge",
                index: p.edge + 1,
            });
        }
        let cop = p.cop;
        finite(format!("CoP of pump {}", k + 1), cop)?;
        if cop <= 1.0 {
            return Err(NetworkError::NonPositive {
                what: format!("CoP - 1 of pump {}", k + 1),
                value: cop - 1.0,
            });
        }
        positive(format!("mode 1 gain of pump {}", k + 1), p.mode1_gain)?;
        positive(format!("mode 2 coefficient of pump {}", k + 1), p.mode2_coefficient)?;
    }
    for (j, e) in heat.edges.iter().enumerate() {
        if e.kind == EdgeKind::Pump && !edges.contains(&j) {
            return Err(NetworkError::EdgeTagMismatch {
                edge: j + 1,
                tag: "pump",
                reason: "has no heat pump assigned",
            });
        }
    }
    Ok(())
}

/// Checks every structural invariant and returns the typed networks.
pub fn validate_networks(
    electric: &ElectricSpec,
    heat: &HeatSpec,
    coupling: &CouplingSpec,
) -> Result<(ElectricNetwork, HeatNetwork, PumpCoupling), NetworkError> {
    validate_electric(electric)?;
    validate_heat(heat)?;
    validate_coupling(coupling, electric, heat)?;

    let electric = ElectricNetwork {
        buses: electric.buses.clone(),
        lines: electric.lines.clone(),
        generators: electric.generators.clone(),
        pump_buses: coupling.pumps.iter().map(|p| p.bus).collect(),
    };

    let n_nodes = heat.node_volumes.len();
    let mut incidence = DMatrix::zeros(heat.edges.len(), n_nodes);
    for (j, e) in heat.edges.iter().enumerate() {
        incidence[(j, e.head)] = 1.0;
        incidence[(j, e.tail)] = -1.0;
    }
    let volumes = heat
        .edges
        .iter()
        .map(|e| e.volume)
        .chain(heat.node_volumes.iter().copied())
        .collect();
    let mass_flows: Vec<f64> = heat.edges.iter().map(|e| e.mass_flow).collect();
    let ah = ah_from_parts(&incidence, &mass_flows)?;
    let heat = HeatNetwork {
        node_volumes: heat.node_volumes.clone(),
        edges: heat.edges.clone(),
        volumes,
        incidence,
        ah,
    };
    let coupling = PumpCoupling {
        pumps: coupling.pumps.clone(),
    };
    Ok((electric, heat, coupling))
}

/// Splits `B_h` into its head selector `B_th = (|B_h| + B_h)/2` and tail
/// selector `B_sh = (|B_h| - B_h)/2`.
pub fn split_incidence(
    incidence: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), NetworkError> {
    for (r, row) in incidence.row_iter().enumerate() {
        let mut plus = 0;
        let mut minus = 0;
        for &x in row.iter() {
            if x == 1.0 {
                plus += 1;
            } else if x == -1.0 {
                minus += 1;
            } else if x != 0.0 {
                return Err(NetworkError::MalformedIncidence {
                    row: r + 1,
                    reason: "entries must be -1, 0 or +1",
                });
            }
        }
        if !((plus == 1 && minus == 1) || (plus == 0 && minus == 0)) {
            return Err(NetworkError::MalformedIncidence {
                row: r + 1,
                reason: "needs exactly one head (+1) and one tail (-1)",
            });
        }
    }
    let abs = incidence.abs();
    let head = (&abs + incidence) * 0.5;
    let tail = (&abs - incidence) * 0.5;
    Ok((head, tail))
}

fn ah_from_parts(incidence: &DMatrix<f64>, mass_flows: &[f64]) -> Result<DMatrix<f64>, NetworkError> {
    let (head, tail) = split_incidence(incidence)?;
    let ne = incidence.nrows();
    let nn = incidence.ncols();
    let q = DVector::from_column_slice(mass_flows);
    let dq = DMatrix::from_diagonal(&q);
    let mut ah = DMatrix::zeros(ne + nn, ne + nn);
    ah.view_mut((0, 0), (ne, ne)).copy_from(&dq);
    ah.view_mut((0, ne), (ne, nn)).copy_from(&(-(&dq * &tail)));
    ah.view_mut((ne, 0), (nn, ne))
        .copy_from(&(-(head.transpose() * &dq)));
    // Node outflow rates; the lower-right block is diag(B_th^T q).
    let inflow = head.transpose() * &q;
    ah.view_mut((ne, ne), (nn, nn))
        .copy_from(&DMatrix::from_diagonal(&inflow));
    Ok(ah)
}

/// Assembles `A_h = [diag(q), -diag(q) B_sh; -B_th^T diag(q), diag(B_th^T q)]`.
pub fn assemble_ah(heat: &HeatNetwork) -> DMatrix<f64> {
    ah_from_parts(&heat.incidence, &heat.mass_flows())
        .expect("incidence of a validated network is well formed")
}

/// Volume-weighted mean temperature deviation `1^T V T / sum(V)`.
pub fn average_temperature(temperatures: &[f64], heat: &HeatNetwork) -> Result<f64, NetworkError> {
    if temperatures.len() != heat.n_temperatures() {
        return Err(NetworkError::LengthMismatch {
            what: "temperature vector",
            got: temperatures.len(),
            expected: heat.n_temperatures(),
        });
    }
    Ok(weighted_mean(temperatures, &heat.volumes))
}

pub(crate) fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(t, v)| t * v).sum::<f64>() / total
}

/// Adds one zero-inertia converter bus per pump, linked to the pump's host
/// bus by a line of susceptance `link_susceptance`, and moves the pump's
/// electric load onto the new bus.
pub fn attach_converter_buses(
    network: &ElectricNetwork,
    coupling: &PumpCoupling,
    mode: PumpMode,
    link_susceptance: f64,
) -> Result<ElectricNetwork, NetworkError> {
    if mode != PumpMode::Mode2 {
        return Err(NetworkError::ConverterInMode1);
    }
    positive("converter link susceptance", link_susceptance)?;
    let mut out = network.clone();
    for (k, pump) in coupling.pumps().iter().enumerate() {
        let host = pump.bus;
        check_index(|| format!("pump {}", k + 1), "bus", host, network.n_buses())?;
        if network.buses[host].is_converter() {
            return Err(NetworkError::HostIsConverter { bus: host + 1 });
        }
        let conv = out.buses.len();
        out.buses.push(Bus {
            inertia: 0.0,
            damping: 0.0,
            kind: BusKind::Converter { pump: k },
        });
        out.lines.push(Line {
            from: host,
            to: conv,
            susceptance: link_susceptance,
            nominal_flow: 0.0,
        });
        out.pump_buses[k] = conv;
    }
    Ok(out)
}

/// Ascending eigenvalues of `A + A^T`.
pub fn symmetric_part_spectrum(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = a + a.transpose();
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn edge(tail: usize, head: usize, kind: EdgeKind, q: f64) -> HeatEdge {
        HeatEdge {
            tail,
            head,
            kind,
            volume: 1.0,
            mass_flow: q,
            demand: 0.0,
        }
    }

    fn two_cycle() -> HeatSpec {
        HeatSpec {
            node_volumes: vec![1.0, 1.0],
            edges: vec![edge(0, 1, EdgeKind::Load, 1.0), edge(1, 0, EdgeKind::Source, 1.0)],
        }
    }

    fn single_bus() -> ElectricSpec {
        ElectricSpec {
            buses: vec![Bus::inertial(1.0, 1.0)],
            lines: vec![],
            generators: vec![0],
        }
    }

    #[test]
    fn single_bus_network_is_valid() {
        let (e, h, c) = validate_networks(&single_bus(), &two_cycle(), &CouplingSpec::default()).unwrap();
        assert_eq!(e.n_buses(), 1);
        assert_eq!(h.n_temperatures(), 4);
        assert!(c.is_empty());
    }

    #[test]
    fn mass_flow_imbalance_is_rejected() {
        let mut heat = two_cycle();
        heat.edges[1].mass_flow = 2.0;
        let err = validate_networks(&single_bus(), &heat, &CouplingSpec::default()).unwrap_err();
        assert!(matches!(err, NetworkError::MassFlowImbalance { .. }), "{err}");
    }

    #[test]
    fn disconnected_electric_graph_is_rejected() {
        let spec = ElectricSpec {
            buses: vec![Bus::inertial(1.0, 1.0); 3],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, nominal_flow: 0.0 }],
            generators: vec![],
        };
        let err = validate_networks(&spec, &two_cycle(), &CouplingSpec::default()).unwrap_err();
        assert_eq!(err, NetworkError::Disconnected { bus: 3 });
    }

    #[test]
    fn anti_parallel_lines_are_rejected() {
        let spec = ElectricSpec {
            buses: vec![Bus::inertial(1.0, 1.0); 2],
            lines: vec![
                Line { from: 0, to: 1, susceptance: 1.0, nominal_flow: 0.0 },
                Line { from: 1, to: 0, susceptance: 1.0, nominal_flow: 0.0 },
            ],
            generators: vec![],
        };
        let err = validate_networks(&spec, &two_cycle(), &CouplingSpec::default()).unwrap_err();
        assert!(matches!(err, NetworkError::AntiParallelLine { .. }));
    }

    #[test]
    fn nonpositive_parameters_are_rejected() {
        let mut spec = single_bus();
        spec.buses[0].damping = 0.0;
        assert!(matches!(
            validate_networks(&spec, &two_cycle(), &CouplingSpec::default()),
            Err(NetworkError::NonPositive { .. })
        ));
        let mut heat = two_cycle();
        heat.edges[0].volume = -1.0;
        assert!(matches!(
            validate_networks(&single_bus(), &heat, &CouplingSpec::default()),
            Err(NetworkError::NonPositive { .. })
        ));
    }

    #[test]
    fn pump_assignments_are_checked() {
        let mut heat = two_cycle();
        heat.edges[0].kind = EdgeKind::Pump;
        let pump = Pump { bus: 0, edge: 0, cop: 3.0, mode1_gain: 1.0, mode2_coefficient: 1.0 };
        let ok = CouplingSpec { pumps: vec![pump.clone()] };
        assert!(validate_networks(&single_bus(), &heat, &ok).is_ok());

        let dup = CouplingSpec { pumps: vec![pump.clone(), pump.clone()] };
        assert!(matches!(
            validate_networks(&single_bus(), &heat, &dup),
            Err(NetworkError::Duplicate { .. })
        ));

        let dangling = CouplingSpec { pumps: vec![Pump { bus: 4, ..pump.clone() }] };
        assert!(matches!(
            validate_networks(&single_bus(), &heat, &dangling),
            Err(NetworkError::DanglingIndex { .. })
        ));

        // pump-tagged edge without a pump
        assert!(matches!(
            validate_networks(&single_bus(), &heat, &CouplingSpec::default()),
            Err(NetworkError::EdgeTagMismatch { .. })
        ));
    }

    #[test]
    fn split_single_edge() {
        let b = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let (th, sh) = split_incidence(&b).unwrap();
        assert_eq!(th, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(sh, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    }

    #[test]
    fn split_zero_matrix() {
        let b = DMatrix::zeros(3, 2);
        let (th, sh) = split_incidence(&b).unwrap();
        assert_eq!(th, b);
        assert_eq!(sh, b);
    }

    #[test]
    fn split_two_cycle() {
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let (th, sh) = split_incidence(&b).unwrap();
        assert_eq!(th, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(sh, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(&th - &sh, b);
    }

    #[test]
    fn split_rejects_malformed_rows() {
        let b = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, -1.0]);
        assert!(split_incidence(&b).is_err());
        let b = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        assert!(split_incidence(&b).is_err());
    }

    #[test]
    fn ah_of_two_cycle_matches_hand_expansion() {
        let (_, h, _) = validate_networks(&single_bus(), &two_cycle(), &CouplingSpec::default()).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, -1.0,
            0.0, -1.0, 1.0, 0.0,
            -1.0, 0.0, 0.0, 1.0,
        ]);
        assert_eq!(assemble_ah(&h), expected);
        assert_eq!(h.ah(), &expected);
    }

    #[test]
    fn average_temperature_cases() {
        let (_, h, _) = validate_networks(&single_bus(), &two_cycle(), &CouplingSpec::default()).unwrap();
        assert_abs_diff_eq!(average_temperature(&[1.0, 2.0, 3.0, 4.0], &h).unwrap(), 2.5);
        assert_abs_diff_eq!(average_temperature(&[0.7; 4], &h).unwrap(), 0.7, epsilon = 1e-15);
        assert!(average_temperature(&[1.0], &h).is_err());
        // V = diag(1, 3), T = (2, -2)
        assert_abs_diff_eq!(weighted_mean(&[2.0, -2.0], &[1.0, 3.0]), -1.0);
    }

    fn three_bus() -> ElectricSpec {
        ElectricSpec {
            buses: vec![Bus::inertial(1.0, 1.0); 3],
            lines: vec![
                Line { from: 0, to: 1, susceptance: 1.0, nominal_flow: 0.0 },
                Line { from: 1, to: 2, susceptance: 1.0, nominal_flow: 0.0 },
            ],
            generators: vec![0, 1],
        }
    }

    #[test]
    fn converter_attachment() {
        let mut heat = two_cycle();
        heat.edges[0].kind = EdgeKind::Pump;
        let coupling = CouplingSpec {
            pumps: vec![Pump { bus: 2, edge: 0, cop: 3.0, mode1_gain: 1.0, mode2_coefficient: 1.0 }],
        };
        let (e, _, c) = validate_networks(&three_bus(), &heat, &coupling).unwrap();
        let aug = attach_converter_buses(&e, &c, PumpMode::Mode2, 5.0).unwrap();
        assert_eq!(aug.n_buses(), 4);
        assert_eq!(aug.n_lines(), 3);
        let link = aug.lines().last().unwrap();
        assert_eq!((link.from, link.to, link.susceptance), (2, 3, 5.0));
        assert_eq!(aug.buses()[3].kind, BusKind::Converter { pump: 0 });
        assert_eq!(aug.buses()[3].inertia, 0.0);
        assert_eq!(aug.pump_buses(), &[3]);
        assert_eq!(aug.generators(), e.generators());
        // the original part is untouched
        assert_eq!(&aug.buses()[..3], e.buses());
        assert_eq!(&aug.lines()[..2], e.lines());

        assert_eq!(
            attach_converter_buses(&e, &c, PumpMode::Mode1, 5.0),
            Err(NetworkError::ConverterInMode1)
        );
        assert!(matches!(
            attach_converter_buses(&e, &c, PumpMode::Mode2, 0.0),
            Err(NetworkError::NonPositive { .. })
        ));
        // a second attachment would host on a converter-bearing network; pump
        // hosts are still inertial so this remains valid, but hosting on a
        // converter bus is not
        let mut bad = c.clone();
        bad.pumps[0].bus = 3;
        assert_eq!(
            attach_converter_buses(&aug, &bad, PumpMode::Mode2, 5.0),
            Err(NetworkError::HostIsConverter { bus: 4 })
        );
    }

    #[test]
    fn no_pumps_leaves_network_unchanged() {
        let (e, _, c) = validate_networks(&three_bus(), &two_cycle(), &CouplingSpec::default()).unwrap();
        assert_eq!(attach_converter_buses(&e, &c, PumpMode::Mode2, 1.0).unwrap(), e);
    }

    #[test]
    fn angle_consistency_on_a_triangle() {
        let mut spec = three_bus();
        spec.lines.push(Line { from: 0, to: 2, susceptance: 1.0, nominal_flow: 0.0 });
        let (e, _, _) = validate_networks(&spec, &two_cycle(), &CouplingSpec::default()).unwrap();
        // theta = (0.3, 0.1, -0.2)
        let good = [0.2, 0.3, 0.5];
        assert!(e.angle_consistency_residual(&good) < 1e-12);
        let bad = [0.2, 0.3, 0.1];
        assert!(e.angle_consistency_residual(&bad) > 1e-3);
    }
}
