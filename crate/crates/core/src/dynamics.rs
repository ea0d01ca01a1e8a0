//! Vector fields of the three benchmark systems.
//!
//! All fields act on batches: a pendulum or RLC state is `[B, 2]`, a
//! reaction–diffusion state is `[B, 2, G, G]` (channels `u`, `v`). Expert
//! parameters are `[B, d_e]` and true interaction parameters `[B, 1]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Pendulum,
    Rlc,
    ReactionDiffusion,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Pendulum => "pendulum",
            System::Rlc => "rlc",
            System::ReactionDiffusion => "reaction_diffusion",
        })
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(System::Pendulum),
            "rlc" => Ok(System::Rlc),
            "reaction_diffusion" | "diffusion" => Ok(System::ReactionDiffusion),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

/// Axis-aligned box of parameter values. Degenerate extents (`lo == hi`)
/// are allowed and denote a fixed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let b = ParamBox { lo: lo.to_vec(), hi: hi.to_vec() };
        b.validate()?;
        Ok(b)
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        ParamBox { lo: vec![lo], hi: vec![hi] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::Config(format!("malformed parameter box {self:?}")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config(format!("empty parameter box {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn width(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// One uniform draw per coordinate.
    pub fn sample(&self, rng: &mut crate::tensor::Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if l == h { l } else { l + (h - l) * rng.next_f64() })
            .collect()
    }

    /// Split coordinate `axis` into `n` equal-width bins.
    pub fn bins(&self, axis: usize, n: usize) -> Vec<ParamBox> {
        let (l, h) = (self.lo[axis], self.hi[axis]);
        (0..n)
            .map(|i| {
                let mut b = self.clone();
                b.lo[axis] = l + (h - l) * i as f64 / n as f64;
                b.hi[axis] = l + (h - l) * (i + 1) as f64 / n as f64;
                b
            })
            .collect()
    }
}

/// A benchmark system with its default parameter supports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: System,
    /// Grid side for reaction–diffusion; ignored otherwise.
    pub grid: usize,
    /// Expert-parameter support of the training and validation splits.
    pub ze_train: ParamBox,
    /// Shifted expert-parameter support of the OOD test split.
    pub ze_test: ParamBox,
    /// Widened support used for expert augmentation.
    pub ze_augment: ParamBox,
    /// Support of the true interaction parameter.
    pub za_true: ParamBox,
    pub t1: f64,
    pub t2: f64,
    pub dt: f64,
}

impl SystemSpec {
    pub fn new(system: System) -> Self {
        match system {
            System::Pendulum => SystemSpec {
                system,
                grid: 0,
                ze_train: ParamBox::interval(1.5, 3.1),
                ze_test: ParamBox::interval(0.5, 1.5),
                ze_augment: ParamBox::interval(0.5, 3.5),
                za_true: ParamBox::interval(0.0, 0.6),
                t1: 5.0,
                t2: 20.0,
                dt: 0.1,
            },
            System::Rlc => SystemSpec {
                system,
                grid: 0,
                ze_train: ParamBox { lo: vec![1.0, 0.5], hi: vec![3.0, 1.5] },
                ze_test: ParamBox { lo: vec![3.0, 1.0], hi: vec![5.0, 2.5] },
                ze_augment: ParamBox { lo: vec![1.0, 0.5], hi: vec![5.0, 2.5] },
                za_true: ParamBox::interval(1.0, 3.0),
                t1: 5.0,
                t2: 20.0,
                dt: 0.1,
            },
            System::ReactionDiffusion => SystemSpec {
                system,
                grid: 32,
                ze_train: ParamBox { lo: vec![0.001, 0.003], hi: vec![0.002, 0.007] },
                ze_test: ParamBox { lo: vec![0.002, 0.001], hi: vec![0.004, 0.1] },
                ze_augment: ParamBox { lo: vec![0.001, 0.001], hi: vec![0.004, 0.01] },
                za_true: ParamBox::interval(0.003, 0.005),
                t1: 1.0,
                t2: 5.0,
                dt: 0.1,
            },
        }
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    /// Per-sample state shape.
    pub fn state_shape(&self) -> Vec<usize> {
        match self.system {
            System::Pendulum | System::Rlc => vec![2],
            System::ReactionDiffusion => vec![2, self.grid, self.grid],
        }
    }

    pub fn state_len(&self) -> usize {
        self.state_shape().iter().product()
    }

    /// Batched state shape `[batch, ...]`.
    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(self.state_shape());
        s
    }

    pub fn d_e(&self) -> usize {
        match self.system {
            System::Pendulum => 1,
            System::Rlc | System::ReactionDiffusion => 2,
        }
    }

    pub fn d_a_true(&self) -> usize {
        1
    }

    pub fn steps_t1(&self) -> usize {
        (self.t1 / self.dt).round() as usize
    }

    pub fn steps_t2(&self) -> usize {
        (self.t2 / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for b in [&self.ze_train, &self.ze_test, &self.ze_augment] {
            b.validate()?;
            if b.dim() != self.d_e() {
                return Err(Error::Config(format!("{} expects {} expert parameters", self.system, self.d_e())));
            }
            if b.lo.iter().any(|&l| l <= 0.0) {
                return Err(Error::Config("expert parameters must be strictly positive".into()));
            }
        }
        self.za_true.validate()?;
        if self.system == System::ReactionDiffusion && self.grid < 3 {
            return Err(Error::Config(format!("grid must be at least 3, got {}", self.grid)));
        }
        if !(self.dt > 0.0 && self.t1 > 0.0 && self.t1 < self.t2) {
            return Err(Error::Config("horizons must satisfy 0 < t1 < t2 and dt > 0".into()));
        }
        Ok(())
    }

    pub fn expert_field(&self, t: f64, y: &Var, z_e: &Var) -> Result<Var> {
        expert_field(self.system, t, y, z_e)
    }

    pub fn true_interaction_field(&self, t: f64, y: &Var, z_e: &Var, z_a: &Var) -> Result<Var> {
        true_interaction_field(self.system, t, y, z_e, z_a)
    }

    pub fn full_field(&self, t: f64, y: &Var, z_e: &Var, z_a: &Var) -> Result<Var> {
        full_field(self.system, t, y, z_e, z_a)
    }
}

/// RLC source voltage: AC + DC.
pub fn rlc_voltage(t: f64) -> f64 {
    2.5 * (4.0 * PI * t).sin() + 1.0
}

fn col(x: &Var, i: usize) -> Result<Var> {
    x.slice(1, i, 1)
}

/// `[B, 1]` parameter column reshaped to broadcast over `[B, 1, G, G]`.
fn per_sample(p: &Var) -> Result<Var> {
    p.reshape(&[p.shape()[0], 1, 1, 1])
}

fn check_batch(op: &'static str, y: &Var, z: &Var, dim: usize) -> Result<()> {
    if z.value().ndim() != 2 || z.shape()[1] != dim || z.shape()[0] != y.shape()[0] {
        return Err(Error::shape(op, &[y.shape(), z.shape()]));
    }
    Ok(())
}

fn check_state(op: &'static str, system: System, y: &Var) -> Result<()> {
    let s = y.shape();
    let ok = match system {
        System::Pendulum | System::Rlc => s.len() == 2 && s[1] == 2,
        System::ReactionDiffusion => s.len() == 4 && s[1] == 2 && s[2] >= 3 && s[3] >= 3,
    };
    if ok { Ok(()) } else { Err(Error::shape(op, &[s])) }
}

/// Known physics `F_e(y; z_e)`.
pub fn expert_field(system: System, t: f64, y: &Var, z_e: &Var) -> Result<Var> {
    check_state("expert_field", system, y)?;
    match system {
        System::Pendulum => {
            check_batch("expert_field", y, z_e, 1)?;
            let (theta, omega) = (col(y, 0)?, col(y, 1)?);
            let accel = -(z_e.square() * theta.sin());
            Var::concat(&[omega, accel], 1)
        }
        System::Rlc => {
            check_batch("expert_field", y, z_e, 2)?;
            let (u, i) = (col(y, 0)?, col(y, 1)?);
            let (l, c) = (col(z_e, 0)?, col(z_e, 1)?);
            let du = &i / &c;
            let di = u.neg().add_scalar(rlc_voltage(t)) / l;
            Var::concat(&[du, di], 1)
        }
        System::ReactionDiffusion => {
            check_batch("expert_field", y, z_e, 2)?;
            let (u, v) = (col(y, 0)?, col(y, 1)?);
            let a = per_sample(&col(z_e, 0)?)?;
            let b = per_sample(&col(z_e, 1)?)?;
            Var::concat(&[a * u.laplacian()?, b * v.laplacian()?], 1)
        }
    }
}

/// Ground-truth interaction `F_a(y; z_a)` used to generate data.
///
/// The RLC residual `−(R/C)·I` involves the capacitance, so the expert
/// parameters are passed for every system.
pub fn true_interaction_field(system: System, _t: f64, y: &Var, z_e: &Var, z_a: &Var) -> Result<Var> {
    check_state("true_interaction_field", system, y)?;
    check_batch("true_interaction_field", y, z_a, 1)?;
    match system {
        System::Pendulum => {
            let omega = col(y, 1)?;
            let damp = -(z_a * &omega);
            Var::concat(&[Var::constant(Tensor::zeros(omega.shape())), damp], 1)
        }
        System::Rlc => {
            check_batch("true_interaction_field", y, z_e, 2)?;
            let i = col(y, 1)?;
            let c = col(z_e, 1)?;
            let di = -(z_a / c * &i);
            Var::concat(&[Var::constant(Tensor::zeros(i.shape())), di], 1)
        }
        System::ReactionDiffusion => {
            let (u, v) = (col(y, 0)?, col(y, 1)?);
            let k = per_sample(z_a)?;
            let ru = &u - u.powi(3) - k - &v;
            let rv = &u - &v;
            Var::concat(&[ru, rv], 1)
        }
    }
}

/// `F_e + F_a`, the data-generating field.
pub fn full_field(system: System, t: f64, y: &Var, z_e: &Var, z_a: &Var) -> Result<Var> {
    let fe = expert_field(system, t, y, z_e)?;
    let fa = true_interaction_field(system, t, y, z_e, z_a)?;
    fe.try_add(&fa)
}

/// Zero-flux five-point Laplacian of a single `G × G` field.
pub fn laplacian(field: &Tensor) -> Result<Tensor> {
    Ok(Var::constant(field.clone()).laplacian()?.value().clone())
}

/// Pendulum energy `½θ̇² − ω₀² cos θ` per batch row.
pub fn pendulum_energy(state: &[f64], omega0: f64) -> f64 {
    0.5 * state[1] * state[1] - omega0 * omega0 * state[0].cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn c(rows: &[&[f64]]) -> Var {
        Var::constant(Tensor::matrix(rows).unwrap())
    }

    #[test]
    fn pendulum_expert() {
        let y = c(&[&[PI / 2.0, 0.5]]);
        let f = expert_field(System::Pendulum, 0.0, &y, &c(&[&[2.0]])).unwrap();
        assert_eq!(f.value().data(), &[0.5, -4.0]);
    }

    #[test]
    fn rlc_expert() {
        let y = c(&[&[0.2, 0.5]]);
        let f = expert_field(System::Rlc, 0.25, &y, &c(&[&[2.0, 1.0]])).unwrap();
        let d = f.value().data();
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] - 0.4).abs() < 1e-12, "{}", d[1]);
    }

    #[test]
    fn diffusion_expert_on_constant_is_zero() {
        let y = Var::constant(Tensor::full(&[1, 2, 5, 5], 0.3));
        let f = expert_field(System::ReactionDiffusion, 0.0, &y, &c(&[&[0.002, 0.005]])).unwrap();
        assert!(f.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pendulum_damping() {
        let f = true_interaction_field(System::Pendulum, 0.0, &c(&[&[0.1, 2.0]]), &c(&[&[1.0]]), &c(&[&[0.3]]))
            .unwrap();
        let d = f.value().data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn diffusion_reaction_pointwise() {
        let mut y = Tensor::zeros(&[1, 2, 3, 3]);
        y.data_mut()[..9].fill(1.0);
        let z_e = c(&[&[0.001, 0.005]]);
        let f = true_interaction_field(System::ReactionDiffusion, 0.0, &Var::constant(y), &z_e, &c(&[&[0.005]]))
            .unwrap();
        let d = f.value().data();
        assert!(d[..9].iter().all(|&r| (r + 0.005).abs() < 1e-15));
        assert!(d[9..].iter().all(|&r| r == 1.0));
    }

    #[test]
    fn rlc_resistance_term() {
        let f = true_interaction_field(System::Rlc, 0.0, &c(&[&[0.0, 0.5]]), &c(&[&[1.0, 1.0]]), &c(&[&[2.0]]))
            .unwrap();
        assert_eq!(f.value().data(), &[0.0, -1.0]);
    }

    #[test]
    fn full_field_examples() {
        let z_e = c(&[&[2.0]]);
        let f = full_field(System::Pendulum, 0.0, &c(&[&[0.0, 1.0]]), &z_e, &c(&[&[0.1]])).unwrap();
        assert_eq!(f.value().data(), &[1.0, -0.1]);
        let f = full_field(System::Rlc, 0.0, &c(&[&[0.0, 0.0]]), &c(&[&[2.0, 1.0]]), &c(&[&[1.5]])).unwrap();
        assert_eq!(f.value().data(), &[0.0, 0.5]);
    }

    #[test]
    fn zero_damping_is_expert_only_bitwise() {
        let mut rng = Rng::new(1);
        let y = Var::constant(rng.uniform(-1.0, 1.0, &[8, 2]).unwrap());
        let z_e = Var::constant(rng.uniform(1.0, 3.0, &[8, 1]).unwrap());
        let z_a = Var::constant(Tensor::zeros(&[8, 1]));
        let full = full_field(System::Pendulum, 0.0, &y, &z_e, &z_a).unwrap();
        let fe = expert_field(System::Pendulum, 0.0, &y, &z_e).unwrap();
        assert_eq!(full.value(), fe.value());
    }

    #[test]
    fn full_field_is_additive_bitwise() {
        let mut rng = Rng::new(2);
        for system in [System::Pendulum, System::Rlc] {
            let y = Var::constant(rng.uniform(-1.0, 1.0, &[4, 2]).unwrap());
            let z_e = Var::constant(rng.uniform(0.5, 2.0, &[4, SystemSpec::new(system).d_e()]).unwrap());
            let z_a = Var::constant(rng.uniform(0.0, 1.0, &[4, 1]).unwrap());
            let full = full_field(system, 0.3, &y, &z_e, &z_a).unwrap();
            let sum = expert_field(system, 0.3, &y, &z_e).unwrap()
                + true_interaction_field(system, 0.3, &y, &z_e, &z_a).unwrap();
            assert_eq!(full.value(), sum.value());
        }
    }

    #[test]
    fn laplacian_sums_to_zero() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let f = rng.uniform(-10.0, 10.0, &[16, 16]).unwrap();
            let l = laplacian(&f).unwrap();
            assert!(l.sum().abs() < 1e-12, "{}", l.sum());
        }
    }

    #[test]
    fn laplacian_spike_and_small_grid() {
        let mut f = Tensor::zeros(&[3, 3]);
        f.data_mut()[4] = 1.0;
        let l = laplacian(&f).unwrap();
        assert_eq!(l.data(), &[0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(laplacian(&Tensor::zeros(&[2, 2])).is_err());
        assert!(laplacian(&Tensor::full(&[4, 4], 2.5)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_specs_validate() {
        for s in [System::Pendulum, System::Rlc, System::ReactionDiffusion] {
            let spec = SystemSpec::new(s);
            spec.validate().unwrap();
            assert_eq!(spec.ze_train.dim(), spec.d_e());
        }
        assert_eq!(SystemSpec::new(System::Pendulum).steps_t2(), 200);
        assert_eq!(SystemSpec::new(System::ReactionDiffusion).steps_t2(), 50);
    }
}
