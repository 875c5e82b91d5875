//! Fixed-step classical Runge–Kutta integration.

use crate::error::SimulationError;

/// Reusable stage buffers for [`Rk4::step`].
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    probe: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            probe: vec![0.0; dim],
        }
    }

    /// Advances `x` by one step of size `dt` in place.
    ///
    /// `rhs(x, dx)` writes the derivative at `x` into `dx`. Errors from `rhs`
    /// abort the step and leave `x` untouched.
    #[allow(clippy::needless_range_loop)]
    pub fn step<F>(&mut self, mut rhs: F, x: &mut [f64], dt: f64) -> Result<(), SimulationError>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<(), SimulationError>,
    {
        if dt.is_nan() || dt <= 0.0 {
            return Err(SimulationError::BadStep(dt));
        }
        let n = x.len();
        if self.k1.len() != n {
            *self = Rk4::new(n);
        }
        let half = 0.5 * dt;

        rhs(x, &mut self.k1)?;
        for i in 0..n {
            self.probe[i] = x[i] + half * self.k1[i];
        }
        rhs(&self.probe, &mut self.k2)?;
        for i in 0..n {
            self.probe[i] = x[i] + half * self.k2[i];
        }
        rhs(&self.probe, &mut self.k3)?;
        for i in 0..n {
            self.probe[i] = x[i] + dt * self.k3[i];
        }
        rhs(&self.probe, &mut self.k4)?;

        let sixth = dt / 6.0;
        for i in 0..n {
            x[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// One RK4 step returning the new state.
pub fn rk4_step<F>(rhs: F, state: &[f64], dt: f64) -> Result<Vec<f64>, SimulationError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), SimulationError>,
{
    let mut x = state.to_vec();
    Rk4::new(x.len()).step(rhs, &mut x, dt)?;
    Ok(x)
}
