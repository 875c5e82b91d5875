//! Generation and heat-source controllers.
//!
//! Every controller is a single-input single-output block `x' = f(x, u)`,
//! `y = g(x, u)`. Generators see the local bus frequency as `u` and produce
//! `p^G`; conventional heat sources see the average temperature and produce
//! `h^G`. The droop gain `1/Q` gives the steady-state map `y* = -u*/Q`.

use std::fmt;
use std::sync::Arc;

use crate::dynamics::integrate::Rk4;
use crate::error::ControlError;

/// Slack below which the integrated supply-rate inequality counts as violated.
pub const AUDIT_TOLERANCE: f64 = 1e-6;
/// `|x'|` threshold for declaring a block settled.
pub const SETTLE_THRESHOLD: f64 = 1e-10;
/// Step cap for [`static_characteristic`].
pub const SETTLE_MAX_STEPS: usize = 1_000_000;

/// A block that is passive from `-u` to `y` around its equilibria.
pub trait PassiveBlock: fmt::Debug + Send + Sync {
    /// State dimension.
    fn dim(&self) -> usize;

    /// Writes `x' = f(x, u)` into `dx`.
    fn drift(&self, x: &[f64], u: f64, dx: &mut [f64]);

    fn output(&self, x: &[f64], u: f64) -> f64;

    /// Declared static characteristic `K(u*)`, the settled output under
    /// constant input `u*`.
    fn characteristic(&self, u: f64) -> f64;

    /// State the block settles to under constant input `u`.
    fn equilibrium_state(&self, u: f64) -> Vec<f64>;

    /// Storage function relative to the equilibrium state `x_star`.
    fn storage(&self, _x: &[f64], _x_star: &[f64]) -> Option<f64> {
        None
    }

    /// Dissipation rate `phi` evaluated at the input deviation `-u + u*`.
    fn dissipation(&self, _input_deviation: f64) -> Option<f64> {
        None
    }

    /// Cost coefficient `Q` when the characteristic is the linear droop `-u/Q`.
    fn droop_cost(&self) -> Option<f64> {
        None
    }
}

/// First-order droop `y' = -y - u/Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderBlock {
    pub cost: f64,
}

impl FirstOrderBlock {
    pub fn new(cost: f64) -> Self {
        assert!(cost > 0.0, "cost coefficient must be positive");
        FirstOrderBlock { cost }
    }
}

/// `y' = -y - u/Q`; zero exactly at `y = -u/Q`.
pub fn first_order_rhs(block: &FirstOrderBlock, y: f64, u: f64) -> f64 {
    -y - u / block.cost
}

impl PassiveBlock for FirstOrderBlock {
    fn dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[0] = first_order_rhs(self, x[0], u);
    }

    fn output(&self, x: &[f64], _u: f64) -> f64 {
        x[0]
    }

    fn characteristic(&self, u: f64) -> f64 {
        -u / self.cost
    }

    fn equilibrium_state(&self, u: f64) -> Vec<f64> {
        vec![self.characteristic(u)]
    }

    fn storage(&self, x: &[f64], x_star: &[f64]) -> Option<f64> {
        let d = x[0] - x_star[0];
        Some(0.5 * self.cost * d * d)
    }

    fn droop_cost(&self) -> Option<f64> {
        Some(self.cost)
    }
}

pub fn wrap_first_order_as_passive(block: FirstOrderBlock) -> Arc<dyn PassiveBlock> {
    Arc::new(block)
}

/// Two parallel droop lags with time constants 1 and `slow_time_constant`,
/// mixed at the output:
///
/// ```text
/// x1' = -x1 - u/Q
/// x2' = (-x2 - u/Q) / tau
/// y   = a x1 + (1 - a) x2
/// ```
///
/// DC gain is `-1/Q`. A pure cascade of two lags has relative degree two and
/// cannot be passive, so the lags are combined in parallel, which keeps the
/// block positive real with storage `Q/2 (a dx1^2 + (1-a) tau dx2^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLagBlock {
    pub cost: f64,
    pub fast_weight: f64,
    pub slow_time_constant: f64,
}

impl TwoLagBlock {
    pub fn new(cost: f64, fast_weight: f64, slow_time_constant: f64) -> Self {
        assert!(cost > 0.0, "cost coefficient must be positive");
        assert!(
            fast_weight > 0.0 && fast_weight < 1.0,
            "fast weight must lie in (0, 1)"
        );
        assert!(slow_time_constant > 0.0, "time constant must be positive");
        TwoLagBlock {
            cost,
            fast_weight,
            slow_time_constant,
        }
    }
}

impl PassiveBlock for TwoLagBlock {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let target = -u / self.cost;
        dx[0] = target - x[0];
        dx[1] = (target - x[1]) / self.slow_time_constant;
    }

    fn output(&self, x: &[f64], _u: f64) -> f64 {
        self.fast_weight * x[0] + (1.0 - self.fast_weight) * x[1]
    }

    fn characteristic(&self, u: f64) -> f64 {
        -u / self.cost
    }

    fn equilibrium_state(&self, u: f64) -> Vec<f64> {
        let y = self.characteristic(u);
        vec![y, y]
    }

    fn storage(&self, x: &[f64], x_star: &[f64]) -> Option<f64> {
        let d1 = x[0] - x_star[0];
        let d2 = x[1] - x_star[1];
        let a = self.fast_weight;
        Some(0.5 * self.cost * (a * d1 * d1 + (1.0 - a) * self.slow_time_constant * d2 * d2))
    }

    fn droop_cost(&self) -> Option<f64> {
        Some(self.cost)
    }
}

/// Integrates the block under the frozen input `u` from the zero state until
/// `|x'| < SETTLE_THRESHOLD`, returning the settled state.
pub fn settle(block: &dyn PassiveBlock, u: f64, dt: f64) -> Result<Vec<f64>, ControlError> {
    const WINDOW: usize = 1000;
    const STALL_WINDOWS: usize = 20;

    let dim = block.dim();
    let mut x = vec![0.0; dim];
    let mut dx = vec![0.0; dim];
    let mut rk = Rk4::new(dim);
    let mut last_window_rate = f64::INFINITY;
    let mut stalled = 0;
    let non_settling = |reason: String| ControlError::NonSettling { input: u, reason };

    for step in 0..=SETTLE_MAX_STEPS {
        block.drift(&x, u, &mut dx);
        let rate = dx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !rate.is_finite() || x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(non_settling(format!("state diverged after {step} steps")));
        }
        if rate < SETTLE_THRESHOLD {
            return Ok(x);
        }
        if step % WINDOW == 0 {
            if rate >= last_window_rate {
                stalled += 1;
                if stalled >= STALL_WINDOWS {
                    return Err(non_settling(format!(
                        "derivative norm stopped decreasing ({rate:e}) after {step} steps"
                    )));
                }
            } else {
                stalled = 0;
            }
            last_window_rate = rate;
        }
        rk.step(
            |x, dx| {
                block.drift(x, u, dx);
                Ok(())
            },
            &mut x,
            dt,
        )
        .map_err(|e| non_settling(e.to_string()))?;
    }
    Err(non_settling(format!("not settled within {SETTLE_MAX_STEPS} steps")))
}

/// Returns the block's declared `K(u_star)` after confirming it against the
/// output of a settled simulation under the same constant input.
pub fn static_characteristic(block: &dyn PassiveBlock, u_star: f64) -> Result<f64, ControlError> {
    let x = settle(block, u_star, 1e-2)?;
    let settled = block.output(&x, u_star);
    let declared = block.characteristic(u_star);
    if (settled - declared).abs() > 1e-8 * declared.abs().max(1.0) {
        return Err(ControlError::CharacteristicMismatch { declared, settled });
    }
    Ok(declared)
}

/// Sampled Lipschitz constants `(L_f, L_g)` over a box of states and inputs.
///
/// Uses difference quotients between neighbouring points of a regular grid
/// with `points` samples per axis.
pub fn lipschitz_estimate(
    block: &dyn PassiveBlock,
    state_box: &[(f64, f64)],
    input_box: (f64, f64),
    points: usize,
) -> (f64, f64) {
    let dim = block.dim();
    assert_eq!(state_box.len(), dim);
    let points = points.max(2);
    let axes: Vec<(f64, f64)> = state_box.iter().copied().chain([input_box]).collect();
    let total = points.pow(axes.len() as u32);
    let coord = |idx: usize| -> Vec<f64> {
        let mut rem = idx;
        axes.iter()
            .map(|&(lo, hi)| {
                let i = rem % points;
                rem /= points;
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            })
            .collect()
    };
    let mut lf = 0.0_f64;
    let mut lg = 0.0_f64;
    let mut fa = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    for idx in 0..total {
        let a = coord(idx);
        let mut stride = 1;
        for axis in 0..axes.len() {
            if (idx / stride) % points + 1 < points {
                let b = coord(idx + stride);
                let h = (b[axis] - a[axis]).abs();
                if h > 0.0 {
                    let (xa, ua) = (&a[..dim], a[dim]);
                    let (xb, ub) = (&b[..dim], b[dim]);
                    block.drift(xa, ua, &mut fa);
                    block.drift(xb, ub, &mut fb);
                    let df = fa.iter().zip(&fb).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
                    lf = lf.max(df / h);
                    lg = lg.max((block.output(xa, ua) - block.output(xb, ub)).abs() / h);
                }
            }
            stride *= points;
        }
    }
    (lf, lg)
}

/// Operating point `(u*, x*, y*)` for an audit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEquilibrium {
    pub input: f64,
    pub state: Vec<f64>,
    pub output: f64,
}

impl BlockEquilibrium {
    pub fn of(block: &dyn PassiveBlock, input: f64) -> Self {
        let state = block.equilibrium_state(input);
        let output = block.output(&state, input);
        BlockEquilibrium {
            input,
            state,
            output,
        }
    }
}

/// Uniformly sampled block signals; `states` is row-major, `dim` per sample.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace<'a> {
    pub dt: f64,
    pub inputs: &'a [f64],
    pub states: &'a [f64],
    pub outputs: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AuditReport {
    /// Minimum over prefixes of `int supply - int phi - (V(t) - V(0))`.
    pub worst_slack: f64,
    pub worst_time: f64,
    pub passed: bool,
    /// False when the block declares no dissipation rate and the audit fell
    /// back to `phi = 0`.
    pub strict: bool,
    /// False when the block has no storage function and `V = 0` was used.
    pub storage_available: bool,
    pub samples: usize,
}

/// Checks `V(x(t)) - V(x(0)) <= int (-u + u*)(y - y*) - int phi(-u + u*)` on
/// every prefix of the trace, using trapezoidal quadrature.
pub fn passivity_audit(
    block: &dyn PassiveBlock,
    trace: BlockTrace<'_>,
    equilibrium: &BlockEquilibrium,
) -> Result<AuditReport, ControlError> {
    let n = trace.inputs.len();
    let dim = block.dim();
    if trace.outputs.len() != n {
        return Err(ControlError::GridMismatch {
            what: "output trace",
            got: trace.outputs.len(),
            expected: n,
        });
    }
    if trace.states.len() != n * dim {
        return Err(ControlError::GridMismatch {
            what: "state trace",
            got: trace.states.len(),
            expected: n * dim,
        });
    }
    if n < 2 {
        return Err(ControlError::TooShort);
    }
    let state = |i: usize| &trace.states[i * dim..(i + 1) * dim];
    let storage_available = block.storage(state(0), &equilibrium.state).is_some();
    let strict = block.dissipation(0.0).is_some();
    let storage = |i: usize| block.storage(state(i), &equilibrium.state).unwrap_or(0.0);
    let integrand = |i: usize| {
        let du = -trace.inputs[i] + equilibrium.input;
        let supply = du * (trace.outputs[i] - equilibrium.output);
        supply - block.dissipation(du).unwrap_or(0.0)
    };

    let v0 = storage(0);
    let mut integral = 0.0;
    let mut prev = integrand(0);
    let mut worst_slack = 0.0_f64;
    let mut worst_time = 0.0;
    for i in 1..n {
        let cur = integrand(i);
        integral += 0.5 * trace.dt * (prev + cur);
        prev = cur;
        let slack = integral - (storage(i) - v0);
        if slack < worst_slack {
            worst_slack = slack;
            worst_time = i as f64 * trace.dt;
        }
    }
    Ok(AuditReport {
        worst_slack,
        worst_time,
        passed: worst_slack >= -AUDIT_TOLERANCE,
        strict,
        storage_available,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_order_rhs_cases() {
        assert_eq!(first_order_rhs(&FirstOrderBlock::new(1.0), 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(first_order_rhs(&FirstOrderBlock::new(2.0), 0.0, 0.05), -0.025);
        assert_eq!(first_order_rhs(&FirstOrderBlock::new(1.0), -0.05, 0.05), 0.0);
    }

    #[test]
    fn wrapped_first_order_characteristic() {
        let b = wrap_first_order_as_passive(FirstOrderBlock::new(2.0));
        assert_eq!(b.dim(), 1);
        assert_eq!(b.characteristic(0.0), 0.0);
        let b = wrap_first_order_as_passive(FirstOrderBlock::new(0.5));
        assert_abs_diff_eq!(b.characteristic(-1.0), 2.0);
        let b = wrap_first_order_as_passive(FirstOrderBlock::new(1.0));
        let x = settle(b.as_ref(), 0.1, 1e-2).unwrap();
        assert_abs_diff_eq!(b.output(&x, 0.1), -0.1, epsilon = 1e-9);
    }

    #[test]
    fn static_characteristic_matches_settled_output() {
        let b = FirstOrderBlock::new(1.0);
        assert_abs_diff_eq!(static_characteristic(&b, 0.05).unwrap(), -0.05, epsilon = 1e-8);
        let demo = TwoLagBlock::new(2.0, 0.6, 5.0);
        assert_abs_diff_eq!(static_characteristic(&demo, 1.0).unwrap(), -0.5, epsilon = 1e-8);
        let eq = BlockEquilibrium::of(&demo, 0.3);
        assert_abs_diff_eq!(static_characteristic(&demo, 0.3).unwrap(), eq.output, epsilon = 1e-12);
    }

    #[derive(Debug)]
    struct Unstable;
    impl PassiveBlock for Unstable {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, x: &[f64], u: f64, dx: &mut [f64]) {
            dx[0] = x[0] - u;
        }
        fn output(&self, x: &[f64], _: f64) -> f64 {
            x[0]
        }
        fn characteristic(&self, u: f64) -> f64 {
            u
        }
        fn equilibrium_state(&self, u: f64) -> Vec<f64> {
            vec![u]
        }
    }

    #[derive(Debug)]
    struct Oscillator;
    impl PassiveBlock for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn drift(&self, x: &[f64], u: f64, dx: &mut [f64]) {
            dx[0] = x[1];
            dx[1] = -x[0] - u;
        }
        fn output(&self, x: &[f64], _: f64) -> f64 {
            x[0]
        }
        fn characteristic(&self, u: f64) -> f64 {
            -u
        }
        fn equilibrium_state(&self, u: f64) -> Vec<f64> {
            vec![-u, 0.0]
        }
    }

    #[test]
    fn diverging_block_is_reported() {
        let err = static_characteristic(&Unstable, 1.0).unwrap_err();
        assert!(matches!(err, ControlError::NonSettling { .. }), "{err}");
    }

    #[test]
    fn limit_cycle_is_reported() {
        let err = static_characteristic(&Oscillator, 1.0).unwrap_err();
        assert!(matches!(err, ControlError::NonSettling { .. }), "{err}");
    }

    #[test]
    fn lipschitz_of_first_order() {
        let b = FirstOrderBlock::new(0.5);
        let (lf, lg) = lipschitz_estimate(&b, &[(-1.0, 1.0)], (-1.0, 1.0), 5);
        // |df/dx| = 1, |df/du| = 1/Q = 2
        assert_abs_diff_eq!(lf, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lg, 1.0, epsilon = 1e-12);
    }

    fn simulate_block(block: &dyn PassiveBlock, input: impl Fn(f64) -> f64, dt: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dim = block.dim();
        let mut x = vec![0.0; dim];
        let mut rk = Rk4::new(dim);
        let (mut us, mut xs, mut ys) = (vec![], vec![], vec![]);
        for i in 0..n {
            let t = i as f64 * dt;
            let u = input(t);
            us.push(u);
            xs.extend_from_slice(&x);
            ys.push(block.output(&x, u));
            rk.step(|x, dx| { block.drift(x, input(t), dx); Ok(()) }, &mut x, dt).unwrap();
        }
        (us, xs, ys)
    }

    #[test]
    fn first_order_trajectory_passes_plain_audit() {
        let b = FirstOrderBlock::new(2.0);
        let dt = 1e-3;
        let (us, xs, ys) = simulate_block(&b, |t| -0.02 * (1.0 - (-t).exp()) + 0.01 * (3.0 * t).sin(), dt, 20_000);
        let eq = BlockEquilibrium::of(&b, -0.02);
        let report = passivity_audit(&b, BlockTrace { dt, inputs: &us, states: &xs, outputs: &ys }, &eq).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(!report.strict);
        assert!(report.storage_available);

        // every prefix passes as well
        let cut = 7_000;
        let prefix = passivity_audit(&b, BlockTrace { dt, inputs: &us[..cut], states: &xs[..cut], outputs: &ys[..cut] }, &eq).unwrap();
        assert!(prefix.passed);

        // flipping the sign of the output deviation must fail
        let flipped: Vec<f64> = ys.iter().map(|y| 2.0 * eq.output - y).collect();
        let bad = passivity_audit(&b, BlockTrace { dt, inputs: &us, states: &xs, outputs: &flipped }, &eq).unwrap();
        assert!(!bad.passed, "{bad:?}");
    }

    #[test]
    fn equilibrium_trace_has_zero_slack() {
        let b = TwoLagBlock::new(1.0, 0.5, 3.0);
        let eq = BlockEquilibrium::of(&b, 0.2);
        let n = 50;
        let us = vec![0.2; n];
        let xs: Vec<f64> = (0..n).flat_map(|_| eq.state.clone()).collect();
        let ys = vec![eq.output; n];
        let r = passivity_audit(&b, BlockTrace { dt: 0.1, inputs: &us, states: &xs, outputs: &ys }, &eq).unwrap();
        assert_eq!(r.worst_slack, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn two_lag_trajectory_passes() {
        let b = TwoLagBlock::new(1.0, 0.4, 6.0);
        let dt = 1e-3;
        let (us, xs, ys) = simulate_block(&b, |t| 0.05 * (0.7 * t).cos(), dt, 30_000);
        let eq = BlockEquilibrium::of(&b, 0.0);
        let r = passivity_audit(&b, BlockTrace { dt, inputs: &us, states: &xs, outputs: &ys }, &eq).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn audit_rejects_mismatched_grids() {
        let b = FirstOrderBlock::new(1.0);
        let eq = BlockEquilibrium::of(&b, 0.0);
        let err = passivity_audit(&b, BlockTrace { dt: 0.1, inputs: &[0.0; 3], states: &[0.0; 2], outputs: &[0.0; 3] }, &eq);
        assert!(matches!(err, Err(ControlError::GridMismatch { .. })));
    }
}
