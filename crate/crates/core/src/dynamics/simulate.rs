//! Time-domain runs and recorded trajectories.

use crate::error::SimulationError;

use super::integrate::Rk4;
use super::system::{apply, Disturbance, OutputLayout, StateLayout, System};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SimSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Abort once any state component exceeds this magnitude.
    pub blowup_bound: f64,
    /// Record every n-th step (the final step is always recorded).
    pub record_every: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: 1e-3,
            t_end: 200.0,
            blowup_bound: 1e6,
            record_every: 1,
        }
    }
}

impl SimSettings {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// A named recorded signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Eta(usize),
    Flow(usize),
    Omega(usize),
    OmegaDot(usize),
    PGen(usize),
    HSrc(usize),
    PPump(usize),
    HPump(usize),
    PDamping(usize),
    PLoad(usize),
    HLoad(usize),
    EdgeTemperature(usize),
    NodeTemperature(usize),
    TBar,
    State(usize),
}

/// States and derived outputs on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub sample_dt: f64,
    pub layout: StateLayout,
    pub output_layout: OutputLayout,
    pub disturbances: Vec<Disturbance>,
    states: Vec<f64>,
    outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.layout.dim;
        &self.states[i * d..(i + 1) * d]
    }

    pub fn outputs(&self, i: usize) -> &[f64] {
        let d = self.output_layout.dim;
        &self.outputs[i * d..(i + 1) * d]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    fn index(&self, signal: Signal) -> (bool, usize) {
        let o = &self.output_layout;
        let l = &self.layout;
        match signal {
            Signal::Eta(i) => (true, l.eta.start + i),
            Signal::Flow(i) => (false, o.flows.start + i),
            Signal::Omega(b) => (false, o.omega.start + b),
            Signal::OmegaDot(b) => (false, o.omega_dot.start + b),
            Signal::PGen(g) => (false, o.p_gen.start + g),
            Signal::HSrc(s) => (false, o.h_src.start + s),
            Signal::PPump(k) => (false, o.p_pump.start + k),
            Signal::HPump(k) => (false, o.h_pump.start + k),
            Signal::PDamping(b) => (false, o.p_damping.start + b),
            Signal::PLoad(b) => (false, o.p_load.start + b),
            Signal::HLoad(j) => (false, o.h_load.start + j),
            Signal::EdgeTemperature(j) => (true, l.edge_temperatures.start + j),
            Signal::NodeTemperature(k) => (true, l.node_temperatures.start + k),
            Signal::TBar => (false, o.t_bar),
            Signal::State(i) => (true, i),
        }
    }

    pub fn value(&self, i: usize, signal: Signal) -> f64 {
        match self.index(signal) {
            (true, c) => self.state(i)[c],
            (false, c) => self.outputs(i)[c],
        }
    }

    pub fn series(&self, signal: Signal) -> Vec<f64> {
        let (is_state, c) = self.index(signal);
        let (data, dim) = if is_state {
            (&self.states, self.layout.dim)
        } else {
            (&self.outputs, self.output_layout.dim)
        };
        data.iter().skip(c).step_by(dim).copied().collect()
    }

    /// Flat row-major copy of the states of block range `r` for every sample.
    pub fn state_block(&self, r: std::ops::Range<usize>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * r.len());
        for i in 0..self.len() {
            out.extend_from_slice(&self.state(i)[r.clone()]);
        }
        out
    }

    /// Index of the first sample at or after time `t`.
    pub fn first_index_at(&self, t: f64) -> usize {
        self.times
            .iter()
            .position(|&s| s >= t - 1e-9 * self.sample_dt)
            .unwrap_or(self.len())
    }
}

/// Integrates `system` from the nominal operating point.
pub fn simulate(
    system: &System,
    disturbances: &[Disturbance],
    settings: &SimSettings,
) -> Result<Trajectory, SimulationError> {
    simulate_from(system, disturbances, settings, &system.default_initial_state())
}

/// Integrates `system` from `initial` on the grid `k * dt`. A disturbance
/// scheduled at `t` takes effect at grid point `round(t / dt)`.
pub fn simulate_from(
    system: &System,
    disturbances: &[Disturbance],
    settings: &SimSettings,
    initial: &[f64],
) -> Result<Trajectory, SimulationError> {
    let dt = settings.dt;
    if dt.is_nan() || dt <= 0.0 {
        return Err(SimulationError::BadStep(dt));
    }
    let layout = system.layout().clone();
    if initial.len() != layout.dim {
        return Err(SimulationError::StateLength {
            got: initial.len(),
            expected: layout.dim,
        });
    }
    let steps = settings.steps();
    let stride = settings.record_every.max(1);
    let mut schedule: Vec<(usize, Disturbance)> = disturbances
        .iter()
        .map(|d| ((d.time / dt).round() as usize, *d))
        .collect();
    schedule.sort_by_key(|(k, _)| *k);
    let mut pending = schedule.into_iter().peekable();

    let mut loads = system.base_loads();
    let mut x = initial.to_vec();
    let mut rk = Rk4::new(layout.dim);
    let mut probe = vec![0.0; layout.dim];

    let capacity = steps / stride + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        sample_dt: dt * stride as f64,
        layout: layout.clone(),
        output_layout: system.output_layout().clone(),
        disturbances: disturbances.to_vec(),
        states: Vec::with_capacity(capacity * layout.dim),
        outputs: Vec::with_capacity(capacity * system.output_layout().dim),
    };

    let stamp = |e: SimulationError, t: f64| match e {
        SimulationError::NonFinite { component, .. } => SimulationError::NonFinite { component, time: t },
        other => other,
    };

    for n in 0..=steps {
        let t = n as f64 * dt;
        while let Some((_, d)) = pending.next_if(|(k, _)| *k <= n) {
            apply(&mut loads, &d);
        }
        if n % stride == 0 || n == steps {
            let mut out = vec![0.0; system.output_layout().dim];
            system
                .evaluate(&x, &loads, &mut probe, Some(&mut out))
                .map_err(|e| stamp(e, t))?;
            traj.times.push(t);
            traj.states.extend_from_slice(&x);
            traj.outputs.extend_from_slice(&out);
        }
        if n == steps {
            break;
        }
        rk.step(|x, dx| system.assemble_rhs(x, &loads, dx), &mut x, dt)
            .map_err(|e| stamp(e, t))?;
        if let Some((i, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > settings.blowup_bound)
        {
            let component = layout.component_name(i);
            let time = t + dt;
            if !v.is_finite() {
                return Err(SimulationError::NonFinite { component, time });
            }
            return Err(SimulationError::Blowup {
                component,
                magnitude: v.abs(),
                bound: settings.blowup_bound,
                time,
            });
        }
    }
    Ok(traj)
}
