//! Dispatch with general strictly convex costs.
//!
//! At the optimum every unit runs where its marginal cost equals the common
//! multiplier, so the output of a unit is the inverse marginal `K(lambda)`.
//! The multiplier itself is found by bisection on the aggregate balance,
//! which is monotone in it.

use crate::error::DispatchError;
use crate::network::PumpMode;

use super::oracle::{Allocation, DispatchProblem, DispatchSolution};

/// Derivative `C'(y)` of a strictly convex cost, strictly increasing on its
/// domain.
pub trait MarginalCost: std::fmt::Debug + Send + Sync {
    fn marginal(&self, y: f64) -> f64;

    fn cost(&self, y: f64) -> f64;

    /// Interval of admissible outputs.
    fn domain(&self) -> (f64, f64) {
        (-1e6, 1e6)
    }

    /// `K(lambda) = (C')^{-1}(lambda)`, clamped to the domain.
    fn inverse(&self, lambda: f64) -> f64 {
        let (mut lo, mut hi) = self.domain();
        if self.marginal(lo) >= lambda {
            return lo;
        }
        if self.marginal(hi) <= lambda {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal(mid) < lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Quadratic cost `Q y^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMarginal {
    pub cost: f64,
}

impl MarginalCost for LinearMarginal {
    fn marginal(&self, y: f64) -> f64 {
        self.cost * y
    }

    fn cost(&self, y: f64) -> f64 {
        0.5 * self.cost * y * y
    }

    fn inverse(&self, lambda: f64) -> f64 {
        lambda / self.cost
    }
}

/// Quartic cost `s y^4 / 4` with marginal `s y^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicMarginal {
    pub scale: f64,
}

impl MarginalCost for CubicMarginal {
    fn marginal(&self, y: f64) -> f64 {
        self.scale * y * y * y
    }

    fn cost(&self, y: f64) -> f64 {
        0.25 * self.scale * y.powi(4)
    }
}

/// Costs of every participant plus demand totals.
///
/// Pumps and damping keep their linear virtual costs; only generators and
/// heat sources take general marginals.
#[derive(Debug)]
pub struct GeneralizedProblem<'a> {
    pub generators: Vec<&'a dyn MarginalCost>,
    pub sources: Vec<&'a dyn MarginalCost>,
    pub damping: Vec<f64>,
    pub pump_gains: Vec<f64>,
    pub cops: Vec<f64>,
    pub mode2_coefficients: Vec<f64>,
    pub electric_demand: f64,
    pub heat_demand: f64,
}

impl GeneralizedProblem<'_> {
    fn linear_view(&self) -> DispatchProblem {
        DispatchProblem {
            generator_costs: vec![],
            source_costs: vec![],
            damping: self.damping.clone(),
            pump_gains: self.pump_gains.clone(),
            cops: self.cops.clone(),
            mode2_coefficients: self.mode2_coefficients.clone(),
            electric_demand: self.electric_demand,
            heat_demand: self.heat_demand,
        }
    }
}

/// Finds the root of the increasing function `g` (`g(lambda) = demand`).
fn bisect_multiplier(g: impl Fn(f64) -> f64, demand: f64) -> Result<f64, DispatchError> {
    let f = |l: f64| g(l) - demand;
    if f(0.0) == 0.0 {
        return Ok(0.0);
    }
    let mut span = 1.0;
    let (mut lo, mut hi) = loop {
        if f(-span) <= 0.0 && f(span) >= 0.0 {
            break (-span, span);
        }
        span *= 2.0;
        if span > 1e12 {
            return Err(DispatchError::BracketFailure { demand });
        }
    };
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick the endpoint with the smaller residual.
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Optimal dispatch for general marginal costs in either pump mode.
///
/// Mode 1: generators at `K_e(lambda)`, pumps at `-a_1 lambda`, damping at
/// `-D lambda`; heat sources then at `K_h(mu)` covering the demand net of
/// pump heat. Mode 2: one multiplier, sources at `K_h(lambda / m)` with the
/// heat balance folded into the electric one through `C_o`.
pub fn generalized_dispatch(p: &GeneralizedProblem<'_>, mode: PumpMode) -> Result<DispatchSolution, DispatchError> {
    let sum_k = |units: &[&dyn MarginalCost], l: f64| units.iter().map(|u| u.inverse(l)).sum::<f64>();
    let total_d: f64 = p.damping.iter().sum();
    match mode {
        PumpMode::Mode1 => {
            let a1: f64 = p.pump_gains.iter().sum();
            let lambda = bisect_multiplier(|l| sum_k(&p.generators, l) + (a1 + total_d) * l, p.electric_demand)?;
            let p_pump: Vec<f64> = p.pump_gains.iter().map(|a| -a * lambda).collect();
            let h_pump_total: f64 = p_pump.iter().zip(&p.cops).map(|(x, c)| c * x).sum();
            let heat_net = p.heat_demand - h_pump_total;
            let mu = if p.sources.is_empty() {
                if heat_net != 0.0 {
                    return Err(DispatchError::ZeroDroop);
                }
                0.0
            } else {
                bisect_multiplier(|l| sum_k(&p.sources, l), heat_net)?
            };
            let allocation = Allocation {
                p_gen: p.generators.iter().map(|u| u.inverse(lambda)).collect(),
                p_pump_total: p_pump.iter().sum(),
                p_pump,
                p_damping: p.damping.iter().map(|d| -d * lambda).collect(),
                h_src: p.sources.iter().map(|u| u.inverse(mu)).collect(),
                h_pump_total,
            };
            let pump_cost: f64 = allocation
                .p_pump
                .iter()
                .zip(&p.pump_gains)
                .map(|(x, a)| 0.5 * x * x / a)
                .sum();
            let objective = cost_of(&p.generators, &allocation.p_gen)
                + cost_of(&p.sources, &allocation.h_src)
                + pump_cost
                + damping_cost(&p.damping, &allocation.p_damping);
            Ok(DispatchSolution {
                mode,
                allocation,
                lambda_e: lambda,
                lambda_h: mu,
                coupling_multiplier: None,
                objective,
            })
        }
        PumpMode::Mode2 => {
            let Some((m, cop)) = p.linear_view().common_pump_coefficients()? else {
                return generalized_dispatch(p, PumpMode::Mode1).map(|s| DispatchSolution { mode, ..s });
            };
            let lambda = bisect_multiplier(
                |l| sum_k(&p.generators, l) + total_d * l + sum_k(&p.sources, l / m) / cop,
                p.electric_demand + p.heat_demand / cop,
            )?;
            let h_src: Vec<f64> = p.sources.iter().map(|u| u.inverse(lambda / m)).collect();
            let h_pump_total = p.heat_demand - h_src.iter().sum::<f64>();
            let p_pump_total = h_pump_total / cop;
            let allocation = Allocation {
                p_gen: p.generators.iter().map(|u| u.inverse(lambda)).collect(),
                p_pump: if p.pump_gains.len() == 1 { vec![p_pump_total] } else { vec![] },
                p_pump_total,
                p_damping: p.damping.iter().map(|d| -d * lambda).collect(),
                h_src,
                h_pump_total,
            };
            let objective = cost_of(&p.generators, &allocation.p_gen)
                + (m / cop) * cost_of(&p.sources, &allocation.h_src)
                + damping_cost(&p.damping, &allocation.p_damping);
            Ok(DispatchSolution {
                mode,
                allocation,
                lambda_e: lambda,
                lambda_h: lambda / cop,
                coupling_multiplier: Some(-lambda / cop),
                objective,
            })
        }
    }
}

fn cost_of(units: &[&dyn MarginalCost], y: &[f64]) -> f64 {
    units.iter().zip(y).map(|(u, v)| u.cost(*v)).sum()
}

fn damping_cost(d: &[f64], p: &[f64]) -> f64 {
    d.iter().zip(p).filter(|(d, _)| **d > 0.0).map(|(d, v)| 0.5 * v * v / d).sum()
}
