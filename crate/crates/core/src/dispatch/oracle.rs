//! Closed-form equilibria and the KKT dispatch oracles.
//!
//! Mode 1 splits into an electric problem over generators, pumps and bus
//! damping, followed by a heat problem over the conventional sources once the
//! pump consumption is known. Mode 2 is one joint problem in which the heat
//! cost is weighted by `m / C_o` and pumps couple the two balances.

use crate::dynamics::system::{ActiveLoads, System};
use crate::error::DispatchError;
use crate::network::PumpMode;

use super::linsolve::solve_dense;

/// Aggregate data the oracles need: cost coefficients and total demands.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DispatchProblem {
    /// `Q_e` per generator.
    pub generator_costs: Vec<f64>,
    /// `Q_h` per conventional heat source.
    pub source_costs: Vec<f64>,
    /// `D` per bus; buses with zero damping carry no `p^U`.
    pub damping: Vec<f64>,
    /// Mode 1 gain `a_1` per pump.
    pub pump_gains: Vec<f64>,
    /// `C_o` per pump.
    pub cops: Vec<f64>,
    /// Mode 2 coefficient `m` per pump.
    pub mode2_coefficients: Vec<f64>,
    /// Total electric demand deviation.
    pub electric_demand: f64,
    /// Total heat demand deviation.
    pub heat_demand: f64,
}

impl DispatchProblem {
    /// Reads costs from the system's controller blocks and demand totals
    /// from `loads`. Every block must be a linear droop.
    pub fn from_system(system: &System, loads: &ActiveLoads) -> Result<Self, DispatchError> {
        let cost = |b: &std::sync::Arc<dyn crate::control::PassiveBlock>, what: &str| {
            b.droop_cost().ok_or_else(|| {
                DispatchError::Unsupported(format!("{what} block has no linear droop characteristic"))
            })
        };
        let generator_costs = system
            .generator_blocks()
            .iter()
            .map(|b| cost(b, "generator"))
            .collect::<Result<_, _>>()?;
        let source_costs = system
            .source_blocks()
            .iter()
            .map(|b| cost(b, "heat source"))
            .collect::<Result<_, _>>()?;
        let pumps = system.coupling().pumps();
        Ok(DispatchProblem {
            generator_costs,
            source_costs,
            damping: system.electric().buses().iter().map(|b| b.damping).collect(),
            pump_gains: pumps.iter().map(|p| p.mode1_gain).collect(),
            cops: pumps.iter().map(|p| p.cop).collect(),
            mode2_coefficients: pumps.iter().map(|p| p.mode2_coefficient).collect(),
            electric_demand: loads.total_electric(),
            heat_demand: loads.total_heat(),
        })
    }

    pub fn n_pumps(&self) -> usize {
        self.pump_gains.len()
    }

    fn total_damping(&self) -> f64 {
        self.damping.iter().sum()
    }

    fn generator_droop(&self) -> f64 {
        self.generator_costs.iter().map(|q| 1.0 / q).sum()
    }

    fn source_droop(&self) -> f64 {
        self.source_costs.iter().map(|q| 1.0 / q).sum()
    }

    /// The common `(m, C_o)` that the joint problem's scalar weight needs.
    pub fn common_pump_coefficients(&self) -> Result<Option<(f64, f64)>, DispatchError> {
        let common = |v: &[f64], what| match v.first() {
            None => Ok(None),
            Some(&first) if v.iter().all(|x| (x - first).abs() <= 1e-12 * first.abs()) => Ok(Some(first)),
            Some(_) => Err(DispatchError::HeterogeneousPumps { what }),
        };
        let m = common(&self.mode2_coefficients, "m")?;
        let c = common(&self.cops, "C_o")?;
        Ok(m.zip(c))
    }
}

/// A steady-state split of the disturbance across all participants.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Allocation {
    pub p_gen: Vec<f64>,
    /// Per-pump electric draw; empty when the oracle cannot determine the
    /// split (several pumps in mode 2, where only the total is fixed).
    pub p_pump: Vec<f64>,
    pub p_pump_total: f64,
    /// Damping term `p^U = D omega` per bus.
    pub p_damping: Vec<f64>,
    pub h_src: Vec<f64>,
    pub h_pump_total: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DispatchSolution {
    pub mode: PumpMode,
    pub allocation: Allocation,
    /// Marginal cost of electric balance, `Q_e p^G` at the optimum.
    pub lambda_e: f64,
    /// Marginal cost of heat balance (`Q_h h^G` in mode 1,
    /// `(m/C_o) Q_h h^G` in mode 2).
    pub lambda_h: f64,
    /// Multiplier of the pump coupling row (mode 2 with pumps only).
    pub coupling_multiplier: Option<f64>,
    pub objective: f64,
}

/// Steady `(omega, Tbar)` for mode 1 from summing the equilibrium equations.
pub fn equilibrium_scalars_mode1(p: &DispatchProblem) -> Result<(f64, f64), DispatchError> {
    let droop = p.generator_droop() + p.pump_gains.iter().sum::<f64>() + p.total_damping();
    if droop <= 0.0 {
        return Err(DispatchError::ZeroDroop);
    }
    let omega = -p.electric_demand / droop;
    let h_pump: f64 = p.pump_gains.iter().zip(&p.cops).map(|(a, c)| c * a * omega).sum();
    let t_bar = heat_only_temperature(p, h_pump)?;
    Ok((omega, t_bar))
}

fn heat_only_temperature(p: &DispatchProblem, h_pump: f64) -> Result<f64, DispatchError> {
    let net = p.heat_demand - h_pump;
    if net == 0.0 {
        return Ok(0.0);
    }
    let droop = p.source_droop();
    if droop <= 0.0 {
        return Err(DispatchError::ZeroDroop);
    }
    Ok(-net / droop)
}

/// Steady `(omega, Tbar)` for mode 2, eliminating `Tbar = omega / m`.
pub fn equilibrium_scalars_mode2(p: &DispatchProblem) -> Result<(f64, f64), DispatchError> {
    let Some((m, cop)) = p.common_pump_coefficients()? else {
        // Without pumps the sectors decouple and the modes coincide.
        return equilibrium_scalars_mode1(p);
    };
    let droop = p.generator_droop() + p.total_damping() + p.source_droop() / (m * cop);
    if droop <= 0.0 {
        return Err(DispatchError::ZeroDroop);
    }
    let omega = -(p.electric_demand + p.heat_demand / cop) / droop;
    Ok((omega, omega / m))
}

/// Indices of buses that carry a damping variable.
fn damped(p: &DispatchProblem) -> Vec<usize> {
    (0..p.damping.len()).filter(|&b| p.damping[b] > 0.0).collect()
}

/// Solves `min 1/2 sum c_i x_i^2` subject to `A x = rhs` via its KKT system.
/// Returns `(x, nu)` with stationarity `c_i x_i + (A^T nu)_i = 0`.
fn equality_qp(
    curvature: &[f64],
    constraints: &[Vec<f64>],
    rhs: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), DispatchError> {
    let n = curvature.len();
    let m = constraints.len();
    let mut a = vec![vec![0.0; n + m]; n + m];
    for i in 0..n {
        a[i][i] = curvature[i];
    }
    for (r, row) in constraints.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            a[n + r][i] = v;
            a[i][n + r] = v;
        }
    }
    let mut b = vec![0.0; n + m];
    b[n..].copy_from_slice(rhs);
    let sol = solve_dense(a, b)?;
    Ok((sol[..n].to_vec(), sol[n..].to_vec()))
}

/// Mode 1 dispatch: electric problem over
/// `(p^G, p^P, p^U)` with costs `(Q_e, 1/a_1, 1/D)`, then the heat problem
/// over `h^G` given the pump heat `C_o p^P`.
pub fn solve_dispatch_mode1(p: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    let ng = p.generator_costs.len();
    let np = p.n_pumps();
    let damped = damped(p);
    let mut curvature = p.generator_costs.clone();
    curvature.extend(p.pump_gains.iter().map(|a| 1.0 / a));
    curvature.extend(damped.iter().map(|&b| 1.0 / p.damping[b]));
    let mut row = vec![1.0; ng];
    row.extend(std::iter::repeat_n(-1.0, np + damped.len()));
    let (x, nu) = equality_qp(&curvature, &[row], &[p.electric_demand])?;

    let p_gen = x[..ng].to_vec();
    let p_pump = x[ng..ng + np].to_vec();
    let mut p_damping = vec![0.0; p.damping.len()];
    for (k, &b) in damped.iter().enumerate() {
        p_damping[b] = x[ng + np + k];
    }
    let h_pump_total: f64 = p_pump.iter().zip(&p.cops).map(|(pp, c)| c * pp).sum();

    let ns = p.source_costs.len();
    let heat_net = p.heat_demand - h_pump_total;
    let (h_src, nu_h) = if ns == 0 {
        // Nothing can absorb a heat imbalance; the mean temperature would drift.
        if heat_net != 0.0 {
            return Err(DispatchError::ZeroDroop);
        }
        (Vec::new(), vec![0.0])
    } else {
        equality_qp(&p.source_costs, &[vec![1.0; ns]], &[heat_net])?
    };

    let allocation = Allocation {
        p_gen,
        p_pump_total: p_pump.iter().sum(),
        p_pump,
        p_damping,
        h_src,
        h_pump_total,
    };
    Ok(DispatchSolution {
        mode: PumpMode::Mode1,
        objective: objective_mode1(p, &allocation),
        allocation,
        lambda_e: -nu[0],
        lambda_h: -nu_h[0],
        coupling_multiplier: None,
    })
}

/// Joint mode 2 dispatch over `(p^G, h^G, p^U, p^P, h^P)`.
///
/// Pumps carry no cost, so with several pumps only their total is
/// determined; the oracle therefore works with the aggregate pump and
/// requires a common `(m, C_o)`.
pub fn solve_dispatch_mode2(p: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    let coefficients = p.common_pump_coefficients()?;
    let (weight, cop) = match coefficients {
        Some((m, c)) => (m / c, Some(c)),
        None => (1.0, None),
    };
    let ng = p.generator_costs.len();
    let ns = p.source_costs.len();
    let damped = damped(p);
    let nu_count = damped.len();
    let with_pump = cop.is_some();
    let n = ng + ns + nu_count + if with_pump { 2 } else { 0 };

    let mut curvature = p.generator_costs.clone();
    curvature.extend(p.source_costs.iter().map(|q| weight * q));
    curvature.extend(damped.iter().map(|&b| 1.0 / p.damping[b]));
    let ip = ng + ns + nu_count;
    if with_pump {
        curvature.extend([0.0, 0.0]);
    }

    let mut electric = vec![0.0; n];
    electric[..ng].fill(1.0);
    electric[ng + ns..ip].fill(-1.0);
    let mut heat = vec![0.0; n];
    heat[ng..ng + ns].fill(1.0);
    let mut constraints = vec![electric, heat];
    let mut rhs = vec![p.electric_demand, p.heat_demand];
    if let Some(c) = cop {
        constraints[0][ip] = -1.0;
        constraints[1][ip + 1] = 1.0;
        let mut coupling = vec![0.0; n];
        coupling[ip + 1] = 1.0;
        coupling[ip] = -c;
        constraints.push(coupling);
        rhs.push(0.0);
    }
    if ns == 0 && !with_pump {
        // Heat balance has no variables; it must hold trivially.
        constraints.remove(1);
        rhs.remove(1);
    }
    let (x, nu) = equality_qp(&curvature, &constraints, &rhs)?;

    let mut p_damping = vec![0.0; p.damping.len()];
    for (k, &b) in damped.iter().enumerate() {
        p_damping[b] = x[ng + ns + k];
    }
    let (p_pump_total, h_pump_total) = if with_pump { (x[ip], x[ip + 1]) } else { (0.0, 0.0) };
    let p_pump = match p.n_pumps() {
        0 => Vec::new(),
        1 => vec![p_pump_total],
        _ => Vec::new(),
    };
    let allocation = Allocation {
        p_gen: x[..ng].to_vec(),
        p_pump,
        p_pump_total,
        p_damping,
        h_src: x[ng..ng + ns].to_vec(),
        h_pump_total,
    };
    let lambda_h = if ns == 0 && !with_pump { 0.0 } else { -nu[1] };
    Ok(DispatchSolution {
        mode: PumpMode::Mode2,
        objective: objective_mode2(p, &allocation)?,
        allocation,
        lambda_e: -nu[0],
        lambda_h,
        coupling_multiplier: with_pump.then(|| nu[2]),
    })
}

fn quadratic(costs: &[f64], x: &[f64]) -> f64 {
    costs.iter().zip(x).map(|(q, v)| 0.5 * q * v * v).sum()
}

fn damping_cost(p: &DispatchProblem, a: &Allocation) -> f64 {
    p.damping
        .iter()
        .zip(&a.p_damping)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, v)| 0.5 * v * v / d)
        .sum()
}

/// Electric part of the mode 1 objective: generators, pumps (`1/a_1`) and
/// damping (`1/D`).
pub fn objective_mode1_electric(p: &DispatchProblem, a: &Allocation) -> f64 {
    let pump_costs: Vec<f64> = p.pump_gains.iter().map(|g| 1.0 / g).collect();
    quadratic(&p.generator_costs, &a.p_gen) + quadratic(&pump_costs, &a.p_pump) + damping_cost(p, a)
}

pub fn objective_mode1_heat(p: &DispatchProblem, a: &Allocation) -> f64 {
    quadratic(&p.source_costs, &a.h_src)
}

/// Sum of the two mode 1 objectives.
pub fn objective_mode1(p: &DispatchProblem, a: &Allocation) -> f64 {
    objective_mode1_electric(p, a) + objective_mode1_heat(p, a)
}

/// Joint objective with the heat cost weighted by `m / C_o`.
pub fn objective_mode2(p: &DispatchProblem, a: &Allocation) -> Result<f64, DispatchError> {
    let weight = p.common_pump_coefficients()?.map_or(1.0, |(m, c)| m / c);
    let weighted: Vec<f64> = p.source_costs.iter().map(|q| weight * q).collect();
    Ok(quadratic(&p.generator_costs, &a.p_gen) + quadratic(&weighted, &a.h_src) + damping_cost(p, a))
}
