//! Run and compare pipelines, CSV time series and JSON reports.

use std::io::Write as _;
use std::path::Path;

use crate::control::{passivity_audit, AuditReport, BlockEquilibrium, BlockTrace};
use crate::dispatch::oracle::{objective_mode1, objective_mode2, DispatchProblem};
use crate::dispatch::verify::{simulated_allocation, verify_power_sharing};
use crate::dispatch::{
    expand_equilibrium, solve_dispatch_mode1, solve_dispatch_mode2, Allocation, DispatchSolution, OptimalityReport,
};
use crate::dynamics::simulate::{simulate, Signal, Trajectory};
use crate::dynamics::system::System;
use crate::error::{Error, Result};
use crate::metrics::{max_deviation, settling_time};
use crate::network::PumpMode;
use crate::scenario::Scenario;

/// Componentwise tolerance for dispatch verification.
pub const DISPATCH_TOLERANCE: f64 = 1e-4;

/// Frequency metrics of one bus.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BusMetrics {
    /// One-based bus id.
    pub bus: usize,
    pub converter: bool,
    /// Seconds after the last disturbance; `None` if the frequency has not
    /// settled within the horizon.
    pub settling_time: Option<f64>,
    /// Largest `|omega|` after the first disturbance.
    pub max_deviation: f64,
}

/// Settling time and maximum deviation of a frequency trace.
///
/// The settling target is the final recorded value. Both metrics are
/// measured from the disturbance instants (0 when there are none).
pub fn bus_metrics(
    bus: usize,
    converter: bool,
    times: &[f64],
    omega: &[f64],
    first_disturbance: f64,
    last_disturbance: f64,
    band: f64,
) -> BusMetrics {
    let target = *omega.last().expect("non-empty trace");
    let t_end = *times.last().expect("non-empty trace");
    BusMetrics {
        bus,
        converter,
        settling_time: settling_time(times, omega, target, band, last_disturbance),
        max_deviation: max_deviation(times, omega, (first_disturbance, t_end)).unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EquilibriumSummary {
    pub omega: f64,
    pub t_bar: f64,
    /// `max |x'|` at the expanded equilibrium state.
    pub residual: f64,
    pub secure: bool,
    pub security_margin: f64,
    /// `max |x(t_end) - x*|`.
    pub final_distance: f64,
}

/// Passivity audit of one controller over the run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockAudit {
    /// `generator` or `source`.
    pub role: String,
    /// One-based bus (generators) or heat edge (sources).
    pub location: usize,
    pub report: AuditReport,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: u8,
    pub dt: f64,
    pub t_end: f64,
    pub settle_band: f64,
    pub samples: usize,
    pub buses: Vec<BusMetrics>,
    /// Final frequency averaged over buses.
    pub steady_omega: f64,
    pub steady_t_bar: f64,
    pub equilibrium: Option<EquilibriumSummary>,
    pub equilibrium_note: Option<String>,
    pub oracle: Option<DispatchSolution>,
    pub dispatch: Option<OptimalityReport>,
    pub dispatch_note: Option<String>,
    pub passivity: Vec<BlockAudit>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub system: System,
    pub trajectory: Trajectory,
    pub report: RunReport,
}

fn disturbance_window(scenario: &Scenario) -> (f64, f64) {
    let first = scenario.disturbances.iter().map(|d| d.time).fold(f64::INFINITY, f64::min);
    let first = if first.is_finite() { first } else { 0.0 };
    (first, scenario.last_disturbance_time())
}

/// Oracle for the system's own mode.
pub fn oracle_for(system: &System, problem: &DispatchProblem) -> std::result::Result<DispatchSolution, crate::error::DispatchError> {
    match system.mode() {
        PumpMode::Mode1 => solve_dispatch_mode1(problem),
        PumpMode::Mode2 => solve_dispatch_mode2(problem),
    }
}

/// Audits every controller block along the trajectory around its settled
/// operating point (the final recorded input).
pub fn audit_blocks(system: &System, traj: &Trajectory) -> Result<Vec<BlockAudit>> {
    let mut out = Vec::new();
    let layout = &traj.layout;
    let gen_buses = system.electric().generators();
    for (g, block) in system.generator_blocks().iter().enumerate() {
        let inputs = traj.series(Signal::Omega(gen_buses[g]));
        let states = traj.state_block(layout.generators[g].clone());
        let outputs = traj.series(Signal::PGen(g));
        let eq = BlockEquilibrium::of(block.as_ref(), *inputs.last().expect("non-empty"));
        let report = passivity_audit(
            block.as_ref(),
            BlockTrace {
                dt: traj.sample_dt,
                inputs: &inputs,
                states: &states,
                outputs: &outputs,
            },
            &eq,
        )?;
        out.push(BlockAudit {
            role: "generator".into(),
            location: gen_buses[g] + 1,
            report,
        });
    }
    let inputs = traj.series(Signal::TBar);
    for (s, block) in system.source_blocks().iter().enumerate() {
        let states = traj.state_block(layout.sources[s].clone());
        let outputs = traj.series(Signal::HSrc(s));
        let eq = BlockEquilibrium::of(block.as_ref(), *inputs.last().expect("non-empty"));
        let report = passivity_audit(
            block.as_ref(),
            BlockTrace {
                dt: traj.sample_dt,
                inputs: &inputs,
                states: &states,
                outputs: &outputs,
            },
            &eq,
        )?;
        out.push(BlockAudit {
            role: "source".into(),
            location: system.source_edges()[s] + 1,
            report,
        });
    }
    Ok(out)
}

/// Simulates `scenario` in `mode` and evaluates every report field. With
/// `verify`, the settled tail is also checked against the dispatch oracle.
pub fn run_scenario(scenario: &Scenario, mode: PumpMode, verify: bool) -> Result<RunOutput> {
    scenario.check_settings()?;
    let system = scenario.system(mode)?;
    let traj = simulate(&system, &scenario.disturbances, &scenario.settings)?;
    let n = traj.len();
    let (first, last) = disturbance_window(scenario);

    let buses = system
        .electric()
        .buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            bus_metrics(
                b + 1,
                bus.is_converter(),
                &traj.times,
                &traj.series(Signal::Omega(b)),
                first,
                last,
                scenario.settle_band,
            )
        })
        .collect();
    let nb = system.electric().n_buses();
    let steady_omega = (0..nb).map(|b| traj.value(n - 1, Signal::Omega(b))).sum::<f64>() / nb as f64;
    let steady_t_bar = traj.value(n - 1, Signal::TBar);

    let final_loads = system.loads_at(&scenario.disturbances, scenario.settings.t_end);
    let (equilibrium, equilibrium_note) = match expand_equilibrium(&system, &final_loads) {
        Ok(eq) => {
            let final_distance = traj
                .final_state()
                .iter()
                .zip(&eq.state)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            (
                Some(EquilibriumSummary {
                    omega: eq.omega,
                    t_bar: eq.t_bar,
                    residual: eq.residual,
                    secure: eq.security.secure,
                    security_margin: eq.security.margin,
                    final_distance,
                }),
                None,
            )
        }
        Err(e) => (None, Some(e.to_string())),
    };

    let problem = DispatchProblem::from_system(&system, &final_loads);
    let oracle = problem.as_ref().ok().and_then(|p| oracle_for(&system, p).ok());
    let (dispatch, dispatch_note) = if !verify {
        (None, None)
    } else {
        match (&problem, &oracle) {
            (Err(e), _) => (None, Some(e.to_string())),
            (Ok(p), None) => (None, Some(oracle_for(&system, p).unwrap_err().to_string())),
            (Ok(_), Some(sol)) => match verify_power_sharing(&traj, &system, sol, DISPATCH_TOLERANCE) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            },
        }
    };

    let passivity = audit_blocks(&system, &traj)?;
    let report = RunReport {
        scenario: scenario.name.clone(),
        mode: mode.number(),
        dt: scenario.settings.dt,
        t_end: scenario.settings.t_end,
        settle_band: scenario.settle_band,
        samples: n,
        buses,
        steady_omega,
        steady_t_bar,
        equilibrium,
        equilibrium_note,
        oracle,
        dispatch,
        dispatch_note,
        passivity,
    };
    Ok(RunOutput {
        system,
        trajectory: traj,
        report,
    })
}

/// Outcome of one mode within a comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModeOutcome {
    pub mode: u8,
    pub buses: Vec<BusMetrics>,
    pub steady_omega: f64,
    pub steady_t_bar: f64,
    /// Largest `max_deviation` over the inertial buses.
    pub max_deviation: f64,
    pub allocation: Allocation,
    pub dispatch: Option<OptimalityReport>,
    pub dispatch_note: Option<String>,
    /// Mode 1 objective (electric plus heat) of this outcome's allocation.
    pub objective_mode1: f64,
    /// Joint mode 2 objective of this outcome's allocation.
    pub objective_mode2: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub mode1: ModeOutcome,
    pub mode2: ModeOutcome,
}

fn outcome(scenario: &Scenario, out: &RunOutput) -> Result<ModeOutcome> {
    let loads = out.system.loads_at(&scenario.disturbances, scenario.settings.t_end);
    let problem = DispatchProblem::from_system(&out.system, &loads)?;
    let allocation = simulated_allocation(&out.trajectory, &out.system);
    let r = &out.report;
    Ok(ModeOutcome {
        mode: r.mode,
        max_deviation: r
            .buses
            .iter()
            .filter(|b| !b.converter)
            .map(|b| b.max_deviation)
            .fold(0.0, f64::max),
        buses: r.buses.clone(),
        steady_omega: r.steady_omega,
        steady_t_bar: r.steady_t_bar,
        objective_mode1: objective_mode1(&problem, &allocation),
        objective_mode2: objective_mode2(&problem, &allocation)?,
        allocation,
        dispatch: r.dispatch.clone(),
        dispatch_note: r.dispatch_note.clone(),
    })
}

/// Runs the scenario under both pump modes (concurrently) and tabulates the
/// outcomes side by side.
pub fn compare_modes(scenario: &Scenario) -> Result<(CompareReport, RunOutput, RunOutput)> {
    let (r1, r2) = std::thread::scope(|s| {
        let h1 = s.spawn(|| run_scenario(scenario, PumpMode::Mode1, true));
        let h2 = s.spawn(|| run_scenario(scenario, PumpMode::Mode2, true));
        (h1.join().expect("mode 1 run panicked"), h2.join().expect("mode 2 run panicked"))
    });
    let (r1, r2) = (r1?, r2?);
    let report = CompareReport {
        scenario: scenario.name.clone(),
        mode1: outcome(scenario, &r1)?,
        mode2: outcome(scenario, &r2)?,
    };
    Ok((report, r1, r2))
}

/// CSV column names in output order.
pub fn csv_header(system: &System) -> Vec<String> {
    let e = system.electric();
    let mut h = vec!["t".to_string()];
    h.extend((0..e.n_buses()).map(|b| format!("omega_{}", b + 1)));
    h.extend(e.lines().iter().map(|l| format!("eta_{}_{}", l.from + 1, l.to + 1)));
    h.extend(e.generators().iter().map(|g| format!("pG_{}", g + 1)));
    h.extend((0..system.heat().n_edges()).map(|j| format!("TE_{}", j + 1)));
    h.extend((0..system.heat().n_nodes()).map(|k| format!("TN_{}", k + 1)));
    h.extend(system.source_edges().iter().map(|j| format!("hG_{}", j + 1)));
    let np = system.coupling().len();
    h.extend((0..np).map(|k| format!("pP_{}", k + 1)));
    h.extend((0..np).map(|k| format!("hP_{}", k + 1)));
    h.push("Tbar".into());
    h
}

fn csv_signals(system: &System) -> Vec<Signal> {
    let e = system.electric();
    let mut s = Vec::new();
    s.extend((0..e.n_buses()).map(Signal::Omega));
    s.extend((0..e.n_lines()).map(Signal::Eta));
    s.extend((0..e.generators().len()).map(Signal::PGen));
    s.extend((0..system.heat().n_edges()).map(Signal::EdgeTemperature));
    s.extend((0..system.heat().n_nodes()).map(Signal::NodeTemperature));
    s.extend((0..system.source_edges().len()).map(Signal::HSrc));
    let np = system.coupling().len();
    s.extend((0..np).map(Signal::PPump));
    s.extend((0..np).map(Signal::HPump));
    s.push(Signal::TBar);
    s
}

/// Formats with 17 significant digits, which round-trips every `f64`.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, system: &System, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(system))?;
    let signals = csv_signals(system);
    let mut row = Vec::with_capacity(signals.len() + 1);
    for i in 0..traj.len() {
        row.clear();
        row.push(fmt(traj.times[i]));
        row.extend(signals.iter().map(|s| fmt(traj.value(i, *s))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Column-major contents of a CSV written by [`write_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad number {field:?}")),
            })?;
            columns[c].push(v);
        }
    }
    Ok(CsvTable { header, columns })
}

/// Recomputes the per-bus frequency metrics from a written CSV.
pub fn bus_metrics_from_csv(table: &CsvTable, scenario: &Scenario, system: &System) -> Vec<BusMetrics> {
    let (first, last) = disturbance_window(scenario);
    let times = table.column("t").expect("t column");
    system
        .electric()
        .buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            let omega = table.column(&format!("omega_{}", b + 1)).expect("omega column");
            bus_metrics(b + 1, bus.is_converter(), times, omega, first, last, scenario.settle_band)
        })
        .collect()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| io(e.into()))?;
    f.write_all(b"\n").map_err(io)?;
    Ok(())
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}
