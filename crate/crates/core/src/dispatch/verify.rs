//! Certifies a settled trajectory against a dispatch oracle.

use crate::dynamics::simulate::{Signal, Trajectory};
use crate::dynamics::system::System;
use crate::error::DispatchError;
use crate::network::PumpMode;

use super::oracle::{Allocation, DispatchSolution};

/// Fraction of the horizon treated as the steady tail.
pub const TAIL_FRACTION: f64 = 0.1;
/// Largest peak-to-peak motion of any state component allowed in the tail.
pub const TAIL_SETTLE_BOUND: f64 = 1e-6;

/// One row of the simulated-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub simulated: f64,
    pub oracle: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OptimalityReport {
    pub mode: PumpMode,
    pub tolerance: f64,
    pub rows: Vec<ComparisonRow>,
    pub max_abs_error: f64,
    /// Spread of `Q_e p^G` across generators around their median.
    pub generator_marginal_spread: f64,
    /// Spread of the heat-source marginal (`Q_h h^G`, weighted by `m/C_o`
    /// in mode 2) around its median.
    pub source_marginal_spread: f64,
    /// Mode 2 only: worst mismatch among `-Q_e p^G = omega`,
    /// `-Q_h h^G = Tbar` and `omega = m Tbar`.
    pub cross_sector_residual: Option<f64>,
    /// Steady synchronised frequency (mean over buses).
    pub omega: f64,
    pub t_bar: f64,
    pub passed: bool,
}

/// Index of the first sample of the steady tail.
pub fn tail_start(traj: &Trajectory) -> usize {
    let n = traj.len();
    let k = ((n as f64) * TAIL_FRACTION).ceil() as usize;
    n - k.clamp(1, n)
}

/// Worst peak-to-peak motion over the tail, with the component that moves most.
pub fn tail_motion(traj: &Trajectory) -> (f64, usize) {
    let start = tail_start(traj);
    let dim = traj.layout.dim;
    let mut lo = traj.state(start).to_vec();
    let mut hi = lo.clone();
    for i in start + 1..traj.len() {
        for (c, v) in traj.state(i).iter().enumerate() {
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
    }
    (0..dim)
        .map(|c| (hi[c] - lo[c], c))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Refuses to continue unless the tail has settled.
pub fn ensure_settled(traj: &Trajectory) -> Result<(), DispatchError> {
    let (ptp, c) = tail_motion(traj);
    if ptp >= TAIL_SETTLE_BOUND || ptp.is_nan() {
        return Err(DispatchError::Unsettled {
            component: traj.layout.component_name(c),
            peak_to_peak: ptp,
        });
    }
    Ok(())
}

fn tail_mean(traj: &Trajectory, signal: Signal) -> f64 {
    let start = tail_start(traj);
    let s = traj.series(signal);
    s[start..].iter().sum::<f64>() / (s.len() - start) as f64
}

/// Tail-averaged allocation realised by a simulation.
pub fn simulated_allocation(traj: &Trajectory, system: &System) -> Allocation {
    let ng = system.generator_blocks().len();
    let ns = system.source_blocks().len();
    let np = system.coupling().len();
    let nb = system.electric().n_buses();
    let p_pump: Vec<f64> = (0..np).map(|k| tail_mean(traj, Signal::PPump(k))).collect();
    Allocation {
        p_gen: (0..ng).map(|g| tail_mean(traj, Signal::PGen(g))).collect(),
        p_pump_total: p_pump.iter().sum(),
        p_pump,
        p_damping: (0..nb).map(|b| tail_mean(traj, Signal::PDamping(b))).collect(),
        h_src: (0..ns).map(|s| tail_mean(traj, Signal::HSrc(s))).collect(),
        h_pump_total: (0..np).map(|k| tail_mean(traj, Signal::HPump(k))).sum(),
    }
}

/// Steady `(omega, Tbar)` from the tail: frequency averaged over buses.
pub fn steady_scalars(traj: &Trajectory, system: &System) -> (f64, f64) {
    let nb = system.electric().n_buses();
    let omega = (0..nb).map(|b| tail_mean(traj, Signal::Omega(b))).sum::<f64>() / nb as f64;
    (omega, tail_mean(traj, Signal::TBar))
}

fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    values.iter().fold(0.0_f64, |m, v| m.max((v - median).abs()))
}

/// Compares the settled tail of `traj` with `oracle` componentwise.
pub fn verify_power_sharing(
    traj: &Trajectory,
    system: &System,
    oracle: &DispatchSolution,
    tolerance: f64,
) -> Result<OptimalityReport, DispatchError> {
    ensure_settled(traj)?;
    let sim = simulated_allocation(traj, system);
    let exp = &oracle.allocation;
    let mut rows = Vec::new();
    let mut push = |quantity: String, simulated: f64, oracle: f64| {
        rows.push(ComparisonRow {
            quantity,
            simulated,
            oracle,
            abs_error: (simulated - oracle).abs(),
        });
    };
    let gen_buses = system.electric().generators();
    for (g, (s, o)) in sim.p_gen.iter().zip(&exp.p_gen).enumerate() {
        push(format!("pG_{}", gen_buses[g] + 1), *s, *o);
    }
    if exp.p_pump.len() == sim.p_pump.len() {
        for (k, (s, o)) in sim.p_pump.iter().zip(&exp.p_pump).enumerate() {
            push(format!("pP_{}", k + 1), *s, *o);
        }
    }
    push("pP_total".into(), sim.p_pump_total, exp.p_pump_total);
    // Converter buses carry no damping; compare the buses the oracle knows.
    for (b, (s, o)) in sim.p_damping.iter().zip(&exp.p_damping).enumerate() {
        push(format!("pU_{}", b + 1), *s, *o);
    }
    let src_edges = system.source_edges();
    for (j, (s, o)) in sim.h_src.iter().zip(&exp.h_src).enumerate() {
        push(format!("hG_{}", src_edges[j] + 1), *s, *o);
    }
    push("hP_total".into(), sim.h_pump_total, exp.h_pump_total);

    let (omega, t_bar) = steady_scalars(traj, system);
    let gen_costs: Vec<f64> = system
        .generator_blocks()
        .iter()
        .map(|b| b.droop_cost().unwrap_or(f64::NAN))
        .collect();
    let src_costs: Vec<f64> = system
        .source_blocks()
        .iter()
        .map(|b| b.droop_cost().unwrap_or(f64::NAN))
        .collect();
    let gen_marginals: Vec<f64> = gen_costs.iter().zip(&sim.p_gen).map(|(q, y)| q * y).collect();
    let src_marginals: Vec<f64> = src_costs.iter().zip(&sim.h_src).map(|(q, y)| q * y).collect();
    let pumps = system.coupling().pumps();
    let (src_weight, cross) = match (oracle.mode, pumps.first()) {
        (PumpMode::Mode2, Some(p)) => {
            let m = p.mode2_coefficient;
            let mut worst = (omega - m * t_bar).abs();
            for v in &gen_marginals {
                worst = worst.max((-v - omega).abs());
            }
            for v in &src_marginals {
                worst = worst.max((-v - t_bar).abs());
            }
            (m / p.cop, Some(worst))
        }
        _ => (1.0, None),
    };
    let weighted: Vec<f64> = src_marginals.iter().map(|v| src_weight * v).collect();

    let max_abs_error = rows.iter().fold(0.0_f64, |m, r| m.max(r.abs_error));
    Ok(OptimalityReport {
        mode: oracle.mode,
        tolerance,
        passed: max_abs_error < tolerance,
        rows,
        max_abs_error,
        generator_marginal_spread: spread(&gen_marginals),
        source_marginal_spread: spread(&weighted),
        cross_sector_residual: cross,
        omega,
        t_bar,
    })
}
