//! Expansion of the scalar equilibrium `(omega, Tbar)` to a full state, and
//! the line-angle security check.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::system::{ActiveLoads, System};
use crate::error::DispatchError;
use crate::network::{BusKind, PumpMode};

use super::linsolve::solve_dense;
use super::oracle::{equilibrium_scalars_mode1, equilibrium_scalars_mode2, DispatchProblem};

/// Result of the angle security check.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Security {
    /// All line angles strictly inside `(-pi/2, pi/2)`.
    pub secure: bool,
    /// `pi/2 - max |eta|`; negative or zero when insecure.
    pub margin: f64,
}

/// Checks `|eta_ij| < pi/2` on every line.
pub fn check_security(eta: &[f64]) -> Security {
    let worst = eta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Security {
        secure: worst < FRAC_PI_2,
        margin: FRAC_PI_2 - worst,
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EquilibriumPoint {
    /// Synchronised frequency deviation.
    pub omega: f64,
    /// Steady average temperature deviation.
    pub t_bar: f64,
    /// Full state vector in the system's layout.
    pub state: Vec<f64>,
    pub security: Security,
    /// `max |x'|` of the vector field at `state`.
    pub residual: f64,
}

/// Steady `(omega, Tbar)` for the system's pump mode under `loads`.
pub fn equilibrium_scalars(system: &System, loads: &ActiveLoads) -> Result<(f64, f64), DispatchError> {
    let problem = DispatchProblem::from_system(system, loads)?;
    match system.mode() {
        PumpMode::Mode1 => equilibrium_scalars_mode1(&problem),
        PumpMode::Mode2 => equilibrium_scalars_mode2(&problem),
    }
}

/// Builds the full equilibrium state under the demands `loads`.
///
/// Electric angles come from a Newton power flow with bus 1 as angle
/// reference; temperatures from `A_h T = injection` with one balance row
/// replaced by the anchor `1^T V T = V_total Tbar`.
///
/// In mode 2 the split of pump power across several pumps is not fixed by
/// the equilibrium conditions (converter link angles are free), so the
/// expansion is limited to at most one pump.
pub fn expand_equilibrium(system: &System, loads: &ActiveLoads) -> Result<EquilibriumPoint, DispatchError> {
    let (omega, t_bar) = equilibrium_scalars(system, loads)?;
    let electric = system.electric();
    let heat = system.heat();
    let pumps = system.coupling().pumps();
    if system.mode() == PumpMode::Mode2 && pumps.len() > 1 {
        return Err(DispatchError::Unsupported(
            "mode 2 equilibrium expansion is only defined for a single pump".into(),
        ));
    }
    let layout = system.layout();

    let gen_out: Vec<f64> = system.generator_blocks().iter().map(|b| b.characteristic(omega)).collect();
    let src_out: Vec<f64> = system.source_blocks().iter().map(|b| b.characteristic(t_bar)).collect();

    let pump_power: Vec<f64> = match system.mode() {
        PumpMode::Mode1 => pumps.iter().map(|p| p.mode1_gain * omega).collect(),
        PumpMode::Mode2 => pumps
            .iter()
            .map(|p| (loads.total_heat() - src_out.iter().sum::<f64>()) / p.cop)
            .collect(),
    };

    // Net injection at every bus apart from line flows.
    let mut injection = vec![0.0; electric.n_buses()];
    for (b, bus) in electric.buses().iter().enumerate() {
        injection[b] = match bus.kind {
            BusKind::Inertial => -loads.bus[b] - bus.damping * omega,
            BusKind::Converter { .. } => 0.0,
        };
    }
    for (&bus, y) in electric.generators().iter().zip(&gen_out) {
        injection[bus] += y;
    }
    for (&bus, p) in electric.pump_buses().iter().zip(&pump_power) {
        injection[bus] -= p;
    }
    let eta = power_flow(system, &injection)?;

    let mut x = vec![0.0; layout.dim];
    x[layout.eta.clone()].copy_from_slice(&eta);
    for s in layout.omega.clone() {
        x[s] = omega;
    }
    for (r, b) in layout.generators.iter().zip(system.generator_blocks()) {
        x[r.clone()].copy_from_slice(&b.equilibrium_state(omega));
    }
    for (r, b) in layout.sources.iter().zip(system.source_blocks()) {
        x[r.clone()].copy_from_slice(&b.equilibrium_state(t_bar));
    }

    let ne = heat.n_edges();
    let nt = heat.n_temperatures();
    let mut rhs = DVector::zeros(nt);
    for j in 0..ne {
        rhs[j] = -loads.edge[j];
    }
    for (&e, h) in system.source_edges().iter().zip(&src_out) {
        rhs[e] += h;
    }
    for (p, pp) in pumps.iter().zip(&pump_power) {
        rhs[p.edge] += p.cop * pp;
    }
    let mut a: DMatrix<f64> = heat.ah().clone();
    // The rows of A_h sum to zero, so one row is redundant; swap it for the anchor.
    let volumes = heat.volumes();
    for (k, v) in volumes.iter().enumerate() {
        a[(nt - 1, k)] = *v;
    }
    rhs[nt - 1] = heat.total_volume() * t_bar;
    let temps = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DispatchError::Singular("anchored temperature system".into()))?;
    x[layout.temperatures()].copy_from_slice(temps.as_slice());

    let mut dx = vec![0.0; layout.dim];
    system
        .assemble_rhs(&x, loads, &mut dx)
        .map_err(|e| DispatchError::PowerFlow(e.to_string()))?;
    let residual = dx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(EquilibriumPoint {
        omega,
        t_bar,
        security: check_security(&eta),
        state: x,
        residual,
    })
}

/// Newton iteration for the line angles that carry the given bus injections.
fn power_flow(system: &System, injection: &[f64]) -> Result<Vec<f64>, DispatchError> {
    let electric = system.electric();
    let n = electric.n_buses();
    let lines = electric.lines();
    let mismatch: f64 = injection.iter().sum();
    if mismatch.abs() > 1e-10 {
        return Err(DispatchError::PowerFlow(format!(
            "bus injections do not balance (sum {mismatch:e})"
        )));
    }
    if n == 1 {
        return Ok(Vec::new());
    }
    let eta_of = |theta: &[f64]| -> Vec<f64> { lines.iter().map(|l| theta[l.from] - theta[l.to]).collect() };
    let residual = |theta: &[f64]| -> Vec<f64> {
        let mut r = injection.to_vec();
        for (l, eta) in lines.iter().zip(eta_of(theta)) {
            let f = l.susceptance * eta.sin() - l.nominal_flow;
            r[l.to] += f;
            r[l.from] -= f;
        }
        r
    };
    let norm = |r: &[f64]| r[1..].iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut theta = vec![0.0; n];
    let mut r = residual(&theta);
    for _ in 0..100 {
        if norm(&r) < 1e-14 {
            break;
        }
        // Jacobian of the non-reference residuals w.r.t. non-reference angles.
        let mut jac = vec![vec![0.0; n - 1]; n - 1];
        for (l, eta) in lines.iter().zip(eta_of(&theta)) {
            let g = l.susceptance * eta.cos();
            // df/dtheta_from = g, df/dtheta_to = -g; r_to += f, r_from -= f
            for (bus, sign_r) in [(l.to, 1.0), (l.from, -1.0)] {
                if bus == 0 {
                    continue;
                }
                if l.from != 0 {
                    jac[bus - 1][l.from - 1] += sign_r * g;
                }
                if l.to != 0 {
                    jac[bus - 1][l.to - 1] -= sign_r * g;
                }
            }
        }
        let step = solve_dense(jac, r[1..].iter().map(|v| -v).collect())
            .map_err(|e| DispatchError::PowerFlow(e.to_string()))?;
        let current = norm(&r);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain(theta[1..].iter().zip(&step).map(|(t, s)| t + alpha * s))
                .collect();
            let rt = residual(&trial);
            if norm(&rt) < current || alpha < 1e-6 {
                theta = trial;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    let final_norm = norm(&r);
    if final_norm > 1e-11 {
        return Err(DispatchError::PowerFlow(format!("residual {final_norm:e} after 100 iterations")));
    }
    Ok(eta_of(&theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn security_cases() {
        let s = check_security(&[0.0, 0.0]);
        assert!(s.secure);
        assert_eq!(s.margin, FRAC_PI_2);
        assert!(!check_security(&[0.1, FRAC_PI_2]).secure);
        let s = check_security(&[0.3, -1.2]);
        assert!(s.secure);
        assert!((s.margin - (FRAC_PI_2 - 1.2)).abs() < 1e-15);
    }
}
