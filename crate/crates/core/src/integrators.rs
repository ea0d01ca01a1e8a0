//! Fixed-step classical Runge–Kutta rollouts.
//!
//! The rollout is written against [`Var`], so when the field closes over
//! trainable parameters the whole unrolled solve is differentiable
//! (discretize-then-optimize).

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Observation schedule of a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub n_obs: usize,
    pub dt_obs: f64,
    /// Internal RK4 steps per observation interval.
    pub substeps: usize,
}

impl Schedule {
    pub fn new(t0: f64, n_obs: usize, dt_obs: f64, substeps: usize) -> Result<Self> {
        if n_obs == 0 || substeps == 0 || !(dt_obs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rollout needs n_obs >= 1, substeps >= 1, dt_obs > 0 (got {n_obs}, {substeps}, {dt_obs})"
            )));
        }
        Ok(Schedule { t0, n_obs, dt_obs, substeps })
    }
}

/// What to do when a state stops being finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnDivergence {
    /// Return [`Error::Divergence`] with the observation index.
    Fail,
    /// Keep integrating; callers inspect rows themselves.
    Continue,
}

/// Integrate `dy/dt = field(t, y)` from `y0`, returning the states at
/// `t0 + Δt, …, t0 + n_obs·Δt`.
pub fn rk4_rollout<F>(field: F, y0: &Var, schedule: Schedule, on_div: OnDivergence) -> Result<Vec<Var>>
where
    F: FnMut(f64, &Var) -> Result<Var>,
{
    let mut field = field;
    let h = schedule.dt_obs / schedule.substeps as f64;
    let mut y = y0.clone();
    let mut out = Vec::with_capacity(schedule.n_obs);
    for k in 0..schedule.n_obs {
        for s in 0..schedule.substeps {
            let t = schedule.t0 + k as f64 * schedule.dt_obs + s as f64 * h;
            y = rk4_step(&mut field, t, &y, h)?;
        }
        if on_div == OnDivergence::Fail && !y.value().is_finite() {
            return Err(Error::Divergence { step: k + 1 });
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// One classical RK4 step of size `h`.
pub fn rk4_step<F>(field: &mut F, t: f64, y: &Var, h: f64) -> Result<Var>
where
    F: FnMut(f64, &Var) -> Result<Var>,
{
    let k1 = field(t, y)?;
    let k2 = field(t + 0.5 * h, &(y + k1.scale(0.5 * h)))?;
    let k3 = field(t + 0.5 * h, &(y + k2.scale(0.5 * h)))?;
    let k4 = field(t + h, &(y + k3.scale(h)))?;
    let incr = k1 + k2.scale(2.0) + k3.scale(2.0) + k4;
    y.try_add(&incr.scale(h / 6.0))
}

/// Stack a rollout into a `[B, T, ...]` tensor.
pub fn stack_rollout(states: &[Var]) -> Result<Tensor> {
    let steps: Vec<Tensor> = states.iter().map(|v| v.value().clone()).collect();
    Tensor::stack_time(&steps)
}

/// Mean squared error between a rollout and a `[B, T, ...]` target,
/// averaged over batch, time and coordinates.
pub fn trajectory_mse(states: &[Var], target: &Tensor) -> Result<Var> {
    if target.ndim() < 2 || target.shape()[1] < states.len() {
        return Err(Error::shape("trajectory_mse", &[target.shape()]));
    }
    let mut total: Option<Var> = None;
    for (k, s) in states.iter().enumerate() {
        let t = Var::constant(target.time_step(k));
        let e = s.try_sub(&t)?.square().sum();
        total = Some(match total {
            Some(acc) => acc + e,
            None => e,
        });
    }
    let n = (states.len() * states[0].value().numel()) as f64;
    Ok(total.expect("non-empty rollout").scale(1.0 / n))
}
