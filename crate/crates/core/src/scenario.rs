//! Scenario files.
//!
//! A scenario is a TOML document with the sections `electric`, `heat`,
//! `coupling`, `control`, `disturbances` and `sim`, plus a top-level
//! `schema_version`. All ids in the file are one-based; they are converted to
//! zero-based indices on load. Unknown keys are rejected so that a typo in a
//! physical parameter cannot silently fall back to a default.
//!
//! See `scenarios/annotated_example.toml` for a complete commented example.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::control::{FirstOrderBlock, PassiveBlock, TwoLagBlock};
use crate::dynamics::simulate::SimSettings;
use crate::dynamics::system::{Disturbance, DisturbanceTarget, System};
use crate::error::{Error, NetworkError, ScenarioError};
use crate::network::{
    validate_networks, Bus, CouplingSpec, EdgeKind, ElectricNetwork, ElectricSpec, HeatEdge, HeatNetwork, HeatSpec,
    Line, Pump, PumpCoupling, PumpMode,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Default settling band on frequency deviation (rad/s).
pub const DEFAULT_SETTLE_BAND: f64 = 2e-4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    #[serde(default)]
    name: Option<String>,
    electric: RawElectric,
    heat: RawHeat,
    #[serde(default)]
    coupling: RawCoupling,
    control: RawControl,
    #[serde(default)]
    disturbances: Vec<RawDisturbance>,
    sim: RawSim,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElectric {
    buses: Vec<RawBus>,
    #[serde(default)]
    lines: Vec<RawLine>,
    generators: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    inertia: f64,
    damping: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: usize,
    to: usize,
    susceptance: f64,
    #[serde(default)]
    nominal_flow: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeat {
    node_volumes: Vec<f64>,
    edges: Vec<RawEdge>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawEdgeKind {
    Pump,
    Source,
    Load,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    tail: usize,
    head: usize,
    kind: RawEdgeKind,
    volume: f64,
    mass_flow: f64,
    #[serde(default)]
    demand: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    #[serde(default)]
    converter_link_susceptance: Option<f64>,
    #[serde(default)]
    pumps: Vec<RawPump>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPump {
    bus: usize,
    edge: usize,
    cop: f64,
    mode1_gain: f64,
    mode2_coefficient: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    generators: Vec<BlockSpec>,
    #[serde(default)]
    sources: Vec<BlockSpec>,
}

/// Controller selection for one generator or heat source.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    FirstOrder {
        cost: f64,
    },
    TwoLag {
        cost: f64,
        fast_weight: f64,
        slow_time_constant: f64,
    },
}

impl BlockSpec {
    pub fn cost(&self) -> f64 {
        match *self {
            BlockSpec::FirstOrder { cost } | BlockSpec::TwoLag { cost, .. } => cost,
        }
    }

    fn validate(&self, what: &str) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(format!("{what}: {msg}")));
        let cost = self.cost();
        if !(cost > 0.0 && cost.is_finite()) {
            return bad(format!("cost must be positive, got {cost}"));
        }
        if let BlockSpec::TwoLag {
            fast_weight,
            slow_time_constant,
            ..
        } = *self
        {
            if !(fast_weight > 0.0 && fast_weight < 1.0) {
                return bad(format!("fast_weight must lie in (0, 1), got {fast_weight}"));
            }
            if !(slow_time_constant > 0.0 && slow_time_constant.is_finite()) {
                return bad(format!("slow_time_constant must be positive, got {slow_time_constant}"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Arc<dyn PassiveBlock> {
        match *self {
            BlockSpec::FirstOrder { cost } => Arc::new(FirstOrderBlock::new(cost)),
            BlockSpec::TwoLag {
                cost,
                fast_weight,
                slow_time_constant,
            } => Arc::new(TwoLagBlock::new(cost, fast_weight, slow_time_constant)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    time: f64,
    #[serde(default)]
    bus: Option<usize>,
    #[serde(default)]
    edge: Option<usize>,
    magnitude: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    mode: u8,
    t_end: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_blowup")]
    blowup_bound: f64,
    #[serde(default = "default_record_every")]
    record_every: usize,
    #[serde(default = "default_band")]
    settle_band: f64,
}

fn default_dt() -> f64 {
    SimSettings::default().dt
}

fn default_blowup() -> f64 {
    SimSettings::default().blowup_bound
}

fn default_record_every() -> usize {
    1
}

fn default_band() -> f64 {
    DEFAULT_SETTLE_BAND
}

/// A validated scenario. Indices are zero-based.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub electric: ElectricNetwork,
    pub heat: HeatNetwork,
    pub coupling: PumpCoupling,
    pub converter_link_susceptance: Option<f64>,
    pub generator_blocks: Vec<BlockSpec>,
    pub source_blocks: Vec<BlockSpec>,
    pub disturbances: Vec<Disturbance>,
    pub mode: PumpMode,
    pub settings: SimSettings,
    pub settle_band: f64,
}

impl Scenario {
    /// Compiles the scenario for `mode`.
    pub fn system(&self, mode: PumpMode) -> Result<System, NetworkError> {
        System::new(
            self.electric.clone(),
            self.heat.clone(),
            self.coupling.clone(),
            mode,
            self.converter_link_susceptance,
            self.generator_blocks.iter().map(BlockSpec::build).collect(),
            self.source_blocks.iter().map(BlockSpec::build).collect(),
        )
    }

    /// Same scenario with every controller replaced by `f(spec)`.
    pub fn with_blocks(&self, f: impl Fn(&BlockSpec) -> BlockSpec) -> Scenario {
        Scenario {
            generator_blocks: self.generator_blocks.iter().map(&f).collect(),
            source_blocks: self.source_blocks.iter().map(&f).collect(),
            ..self.clone()
        }
    }

    /// Time of the last scheduled disturbance, or 0 with none.
    pub fn last_disturbance_time(&self) -> f64 {
        self.disturbances.iter().map(|d| d.time).fold(0.0, f64::max)
    }

    /// Re-checks the parts of the scenario that CLI overrides can change.
    pub fn check_settings(&self) -> Result<(), ScenarioError> {
        let s = &self.settings;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(ScenarioError::Invalid(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(ScenarioError::Invalid(format!("t_end must be positive, got {}", s.t_end)));
        }
        if self.settle_band.is_nan() || self.settle_band <= 0.0 {
            return Err(ScenarioError::Invalid(format!(
                "settle_band must be positive, got {}",
                self.settle_band
            )));
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if !(d.time >= 0.0 && d.time <= s.t_end) {
                return Err(ScenarioError::Invalid(format!(
                    "disturbance {} at t = {} lies outside [0, {}]",
                    i + 1,
                    d.time,
                    s.t_end
                )));
            }
        }
        if self.mode == PumpMode::Mode2 && !self.coupling.is_empty() && self.converter_link_susceptance.is_none() {
            return Err(NetworkError::MissingConverterLink.into());
        }
        Ok(())
    }
}

fn one_based(what: &str, id: usize, count: usize) -> Result<usize, ScenarioError> {
    if id == 0 || id > count {
        return Err(ScenarioError::Invalid(format!("{what} {id} is out of range 1..={count}")));
    }
    Ok(id - 1)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::SchemaVersion(raw.schema_version));
    }
    // Ids are shifted to zero-based; 0 becomes a huge index that validation
    // reports as dangling.
    let shift = |id: usize| id.wrapping_sub(1);
    let electric = ElectricSpec {
        buses: raw.electric.buses.iter().map(|b| Bus::inertial(b.inertia, b.damping)).collect(),
        lines: raw
            .electric
            .lines
            .iter()
            .map(|l| Line {
                from: shift(l.from),
                to: shift(l.to),
                susceptance: l.susceptance,
                nominal_flow: l.nominal_flow,
            })
            .collect(),
        generators: raw.electric.generators.iter().map(|&g| shift(g)).collect(),
    };
    let heat = HeatSpec {
        node_volumes: raw.heat.node_volumes.clone(),
        edges: raw
            .heat
            .edges
            .iter()
            .map(|e| HeatEdge {
                tail: shift(e.tail),
                head: shift(e.head),
                kind: match e.kind {
                    RawEdgeKind::Pump => EdgeKind::Pump,
                    RawEdgeKind::Source => EdgeKind::Source,
                    RawEdgeKind::Load => EdgeKind::Load,
                },
                volume: e.volume,
                mass_flow: e.mass_flow,
                demand: e.demand,
            })
            .collect(),
    };
    let coupling = CouplingSpec {
        pumps: raw
            .coupling
            .pumps
            .iter()
            .map(|p| Pump {
                bus: shift(p.bus),
                edge: shift(p.edge),
                cop: p.cop,
                mode1_gain: p.mode1_gain,
                mode2_coefficient: p.mode2_coefficient,
            })
            .collect(),
    };
    let (electric, heat, coupling) = validate_networks(&electric, &heat, &coupling)?;

    if let Some(b) = raw.coupling.converter_link_susceptance {
        if !(b > 0.0 && b.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "converter_link_susceptance must be positive, got {b}"
            )));
        }
    }

    let n_sources = heat.edges_of_kind(EdgeKind::Source).count();
    if raw.control.generators.len() != electric.generators().len() {
        return Err(ScenarioError::Invalid(format!(
            "control.generators has {} entries but electric.generators lists {}",
            raw.control.generators.len(),
            electric.generators().len()
        )));
    }
    if raw.control.sources.len() != n_sources {
        return Err(ScenarioError::Invalid(format!(
            "control.sources has {} entries but the heat network has {} source edges",
            raw.control.sources.len(),
            n_sources
        )));
    }
    for (i, b) in raw.control.generators.iter().enumerate() {
        b.validate(&format!("control.generators[{}]", i + 1))?;
    }
    for (i, b) in raw.control.sources.iter().enumerate() {
        b.validate(&format!("control.sources[{}]", i + 1))?;
    }

    let mut disturbances = Vec::with_capacity(raw.disturbances.len());
    for (i, d) in raw.disturbances.iter().enumerate() {
        let what = format!("disturbance {}", i + 1);
        if !d.magnitude.is_finite() || !d.time.is_finite() {
            return Err(ScenarioError::Invalid(format!("{what}: values must be finite")));
        }
        let target = match (d.bus, d.edge) {
            (Some(b), None) => DisturbanceTarget::Bus(one_based("bus", b, electric.n_buses())?),
            (None, Some(e)) => {
                let j = one_based("edge", e, heat.n_edges())?;
                if heat.edges()[j].kind != EdgeKind::Load {
                    return Err(ScenarioError::Invalid(format!(
                        "{what}: heat demand steps apply to load edges, edge {e} is not one"
                    )));
                }
                DisturbanceTarget::Edge(j)
            }
            _ => {
                return Err(ScenarioError::Invalid(format!(
                    "{what}: exactly one of `bus` or `edge` must be given"
                )))
            }
        };
        disturbances.push(Disturbance {
            time: d.time,
            target,
            magnitude: d.magnitude,
        });
    }

    let mode = match raw.sim.mode {
        1 => PumpMode::Mode1,
        2 => PumpMode::Mode2,
        m => return Err(ScenarioError::Invalid(format!("sim.mode must be 1 or 2, got {m}"))),
    };
    if raw.sim.record_every == 0 {
        return Err(ScenarioError::Invalid("sim.record_every must be at least 1".into()));
    }
    let scenario = Scenario {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        electric,
        heat,
        coupling,
        converter_link_susceptance: raw.coupling.converter_link_susceptance,
        generator_blocks: raw.control.generators,
        source_blocks: raw.control.sources,
        disturbances,
        mode,
        settings: SimSettings {
            dt: raw.sim.dt,
            t_end: raw.sim.t_end,
            blowup_bound: raw.sim.blowup_bound,
            record_every: raw.sim.record_every,
        },
        settle_band: raw.sim.settle_band,
    };
    scenario.check_settings()?;
    Ok(scenario)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut scenario = parse_scenario(&text)?;
    if scenario.name == "scenario" {
        if let Some(stem) = path.file_stem() {
            scenario.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[electric]
buses = [{ inertia = 2.0, damping = 1.0 }]
generators = [1]

[heat]
node_volumes = [1.0, 1.0]
edges = [
  { tail = 1, head = 2, kind = "source", volume = 1.0, mass_flow = 1.0 },
  { tail = 2, head = 1, kind = "load", volume = 1.0, mass_flow = 1.0 },
]

[control]
generators = [{ type = "first_order", cost = 1.0 }]
sources = [{ type = "first_order", cost = 1.0 }]

[sim]
mode = 1
t_end = 10.0
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.electric.n_buses(), 1);
        assert!(s.disturbances.is_empty());
        assert_eq!(s.settings.dt, 1e-3);
        assert_eq!(s.settle_band, DEFAULT_SETTLE_BAND);
    }

    #[test]
    fn negative_disturbance_time_rejected() {
        let text = format!("{MINIMAL}\n[[disturbances]]\ntime = -1.0\nbus = 1\nmagnitude = 0.1\n");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.replace("damping = 1.0", "damping = 1.0, dampening = 2.0");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(ref m) if m.contains("dampening")), "{err}");
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        assert_eq!(parse_scenario(&text).unwrap_err(), ScenarioError::SchemaVersion(7));
    }

    #[test]
    fn disturbance_needs_exactly_one_target() {
        let text = format!("{MINIMAL}\n[[disturbances]]\ntime = 1.0\nbus = 1\nedge = 2\nmagnitude = 0.1\n");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Invalid(_))));
        let text = format!("{MINIMAL}\n[[disturbances]]\ntime = 1.0\nedge = 2\nmagnitude = 0.1\n");
        assert_eq!(
            parse_scenario(&text).unwrap().disturbances[0].target,
            DisturbanceTarget::Edge(1)
        );
    }

    #[test]
    fn block_count_must_match() {
        let text = MINIMAL.replace(
            "generators = [{ type = \"first_order\", cost = 1.0 }]",
            "generators = []",
        );
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Invalid(_))));
    }
}
