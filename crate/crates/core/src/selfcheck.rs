//! Fast correctness suite shared by the `selfcheck` command and the
//! acceptance tests: gradient checks, physics invariants, solver order and
//! persistence round-trips.

use std::fmt;

use crate::aphynity::{AphynityModel, LagrangianConfig};
use crate::container::Container;
use crate::datasets::{generate_split, simulate, standard_splits, Dataset, SplitSpec};
use crate::dynamics::{expert_field, full_field, pendulum_energy, ParamBox, System, SystemSpec};
use crate::error::Result;
use crate::gradcheck::{check_inputs, check_store};
use crate::hvae::{default_arch, HvaeConfig, HvaeModel};
use crate::hybrid::{ArchConfig, Observation};
use crate::integrators::{rk4_rollout, OnDivergence, Schedule};
use crate::tensor::{Rng, Tensor, Var};

/// Finite-difference step shared by every gradient check.
pub const FD_STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-3;

/// One named check: `value` must stay strictly below `limit`, or inside
/// `[lo, hi]` for two-sided checks.
#[derive(Clone, Debug)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub limit: f64,
}

impl Check {
    fn below(group: &'static str, name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { group, name: name.into(), value, lo: None, limit }
    }

    pub fn passed(&self) -> bool {
        match self.lo {
            Some(lo) => self.value >= lo && self.value <= self.limit,
            None => self.value < self.limit,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = match self.lo {
            Some(lo) => format!("in [{lo}, {}]", self.limit),
            None => format!("< {:e}", self.limit),
        };
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict}  {:<9} {:<28} {:>12.3e}  {bound}", self.group, self.name, self.value)
    }
}

type Unary = fn(&Var) -> Result<Var>;
type Binary = fn(&Var, &Var) -> Result<Var>;

fn unary_ops() -> Vec<(&'static str, Unary)> {
    vec![
        ("neg", |x| Ok(x.neg())),
        ("scale", |x| Ok(x.scale(-1.7))),
        ("add_scalar", |x| Ok(x.add_scalar(0.3))),
        ("sin", |x| Ok(x.sin())),
        ("cos", |x| Ok(x.cos())),
        ("tanh", |x| Ok(x.tanh())),
        ("sigmoid", |x| Ok(x.sigmoid())),
        ("relu", |x| Ok(x.relu())),
        ("selu", |x| Ok(x.selu())),
        ("softplus", |x| Ok(x.softplus())),
        ("exp", |x| Ok(x.exp())),
        ("ln", |x| Ok(x.square().add_scalar(0.5).ln())),
        ("square", |x| Ok(x.square())),
        ("powi", |x| Ok(x.powi(3))),
        ("clamp", |x| Ok(x.clamp(-0.45, 0.55))),
        ("sum", |x| Ok(x.sum())),
        ("mean", |x| Ok(x.mean())),
        ("sum_axis", |x| x.sum_axis(1)),
        ("reshape", |x| x.reshape(&[4, 6])),
        ("slice", |x| x.slice(1, 1, 3)),
        ("laplacian", |x| x.reshape(&[2, 3, 4])?.laplacian()),
    ]
}

fn binary_ops() -> Vec<(&'static str, Binary)> {
    vec![
        ("add", |a, b| a.try_add(b)),
        ("sub", |a, b| a.try_sub(b)),
        ("mul", |a, b| a.try_mul(b)),
        ("div", |a, b| a.try_div(&b.square().add_scalar(0.5))),
        ("add_broadcast", |a, b| a.try_add(&b.slice(0, 0, 1)?)),
        ("mul_broadcast", |a, b| a.try_mul(&b.slice(1, 2, 1)?)),
        ("concat", |a, b| Var::concat(&[a.clone(), b.clone()], 1)),
        ("matmul", |a, b| a.matmul(&b.reshape(&[8, 3])?.slice(0, 0, 6)?)),
    ]
}

/// Entries kept at least this far from the kinks of relu and clamp.
const KINK_MARGIN: f64 = 0.02;

fn smooth_input(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = rng.uniform(-1.0, 1.0, shape).expect("valid range");
    for v in t.data_mut() {
        for kink in [0.0, -0.45, 0.55] {
            if (*v - kink).abs() < KINK_MARGIN {
                *v = kink + KINK_MARGIN.copysign(*v - kink);
            }
        }
    }
    t
}

/// `Σ w ⊙ out` with fixed pseudo-random weights, plus an optional term that
/// is invisible to finite differences but adds `perturb` to every analytic
/// gradient entry (a negative control for the checker itself).
fn weighted(out: Var, inputs: &[Var], perturb: f64) -> Result<Var> {
    let mut rng = Rng::new(out.value().numel() as u64);
    let w = Var::constant(rng.uniform(0.5, 1.5, out.shape())?);
    let mut loss = out.try_mul(&w)?.sum();
    if perturb != 0.0 {
        for x in inputs {
            loss = loss.try_add(&x.try_sub(&x.detach())?.sum().scale(perturb))?;
        }
    }
    Ok(loss)
}

/// Finite-difference checks of every differentiable primitive and of one
/// RK4 step, each on at most a few dozen scalars.
pub fn primitive_checks(perturb: f64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(11);
    let mut out = Vec::new();
    for (name, op) in unary_ops() {
        let x = smooth_input(&[4, 6], &mut rng);
        let r = check_inputs(|v| weighted(op(&v[0])?, v, perturb), &[x], FD_STEP, 100)?;
        out.push(Check::below("primitive", name, r.max_rel_err, PRIMITIVE_TOL));
    }
    for (name, op) in binary_ops() {
        let a = smooth_input(&[4, 6], &mut rng);
        let b = smooth_input(&[4, 6], &mut rng);
        let r = check_inputs(|v| weighted(op(&v[0], &v[1])?, v, perturb), &[a, b], FD_STEP, 100)?;
        out.push(Check::below("primitive", name, r.max_rel_err, PRIMITIVE_TOL));
    }
    let x = smooth_input(&[2, 4], &mut rng);
    let w = smooth_input(&[4, 3], &mut rng);
    let b = smooth_input(&[3], &mut rng);
    let r = check_inputs(|v| weighted(v[0].affine(&v[1], &v[2])?, v, perturb), &[x, w, b], FD_STEP, 100)?;
    out.push(Check::below("primitive", "affine", r.max_rel_err, PRIMITIVE_TOL));

    let img = smooth_input(&[1, 2, 5, 5], &mut rng);
    let k = smooth_input(&[3, 2, 3, 3], &mut rng);
    let kb = smooth_input(&[3], &mut rng);
    let r = check_inputs(|v| weighted(v[0].conv2d(&v[1], &v[2], 2, 1)?, v, perturb), &[img, k, kb], FD_STEP, 100)?;
    out.push(Check::below("primitive", "conv2d", r.max_rel_err, PRIMITIVE_TOL));

    let y0 = Tensor::matrix(&[&[0.8, -0.3], &[-1.1, 0.6]])?;
    let params = Tensor::matrix(&[&[2.0, 0.2], &[1.6, 0.4]])?;
    let r = check_inputs(
        |v| {
            let z_e = v[1].slice(1, 0, 1)?;
            let z_a = v[1].slice(1, 1, 1)?;
            let ys = rk4_rollout(
                |t, y| full_field(System::Pendulum, t, y, &z_e, &z_a),
                &v[0],
                Schedule::new(0.0, 10, 0.1, 2)?,
                OnDivergence::Fail,
            )?;
            weighted(Var::concat(&ys, 1)?, v, perturb)
        },
        &[y0, params],
        FD_STEP,
        100,
    )?;
    out.push(Check::below("primitive", "rk4_rollout", r.max_rel_err, PRIMITIVE_TOL));
    Ok(out)
}

fn toy_spec() -> SystemSpec {
    let mut s = SystemSpec::new(System::Pendulum);
    s.t1 = 1.0;
    s
}

fn toy_data(n: usize) -> Result<Dataset> {
    let mut s = standard_splits(&toy_spec(), (n, 1, 1), 0)[0].clone();
    s.count = n;
    generate_split(&s)
}

/// Full training objectives of both model flavours on 10-step rollouts.
pub fn loss_checks() -> Result<Vec<Check>> {
    let data = toy_data(3)?;
    let obs = Observation::from_dataset(&data, &[0, 1, 2], 10)?;
    let mut out = Vec::new();

    let arch = ArchConfig { hidden: 6, mlp_hidden: vec![6], ..ArchConfig::for_system(System::Pendulum) };
    let cfg = LagrangianConfig::default();
    let m = AphynityModel::new(toy_spec(), arch, &cfg, 1)?;
    let lambda = cfg.lambda0;
    let r = check_store(
        &m.store,
        |p| {
            let l = m.net.losses(p, &obs, 10)?;
            l.l_traj.scale(lambda).try_add(&l.l_res)
        },
        FD_STEP,
        400,
    )?;
    out.push(Check::below("loss", "aphynity_lagrangian", r.max_rel_err, LOSS_TOL));

    let arch = ArchConfig { hidden: 6, mlp_hidden: vec![6], ..default_arch(System::Pendulum) };
    let cfg = HvaeConfig::default();
    let m = HvaeModel::new(toy_spec(), arch, &cfg, 1)?;
    let r = check_store(&m.store, |p| m.net.terms(p, &obs, &mut Rng::new(5))?.objective(&cfg), FD_STEP, 400)?;
    out.push(Check::below("loss", "hvae_objective", r.max_rel_err, LOSS_TOL));
    Ok(out)
}

/// Worst relative energy change of undamped pendulums over 20 s at the
/// ground-truth step.
pub fn energy_drift() -> Result<f64> {
    let mut spec = SplitSpec { count: 8, ..standard_splits(&SystemSpec::new(System::Pendulum), (8, 1, 1), 3)[0].clone() };
    spec.za = ParamBox::interval(0.0, 0.0);
    let ds = generate_split(&spec)?;
    let mut worst = 0.0f64;
    for i in 0..ds.len() {
        let w = ds.z_e.row(i)[0];
        let e0 = pendulum_energy(ds.x.row(i), w);
        for s in ds.y.row(i).chunks(2) {
            worst = worst.max(((pendulum_energy(s, w) - e0) / e0.abs()).abs());
        }
    }
    Ok(worst)
}

/// Worst relative change of total mass of both fields under the pure
/// diffusion operator over 50 frames.
pub fn diffusion_mass_drift() -> Result<f64> {
    let spec = SystemSpec::new(System::ReactionDiffusion).with_grid(16);
    let mut rng = Rng::new(5);
    let y0 = Var::constant(rng.uniform(0.0, 1.0, &spec.batch_shape(2))?);
    let z_e = Var::constant(Tensor::matrix(&[&[0.004, 0.01], &[0.001, 0.005]])?);
    let ys = rk4_rollout(
        |t, y| expert_field(System::ReactionDiffusion, t, y, &z_e),
        &y0,
        Schedule::new(0.0, 50, spec.dt, 1)?,
        OnDivergence::Fail,
    )?;
    let plane = spec.grid * spec.grid;
    let masses = |t: &Tensor| -> Vec<f64> { t.data().chunks(plane).map(|c| c.iter().sum()).collect() };
    let m0 = masses(y0.value());
    let mut worst = 0.0f64;
    for y in &ys {
        for (m, m0) in masses(y.value()).iter().zip(&m0) {
            worst = worst.max(((m - m0) / m0).abs());
        }
    }
    Ok(worst)
}

/// Error ratio `e(h) / e(h/2)` of RK4 on a nonlinear pendulum against a
/// much finer reference solve; fourth order gives 16.
pub fn rk4_order_factor() -> Result<f64> {
    let x = Tensor::matrix(&[&[1.2, 0.0]])?;
    let z_e = Tensor::matrix(&[&[2.0]])?;
    let z_a = Tensor::matrix(&[&[0.3]])?;
    let end = |substeps: usize| -> Result<Vec<f64>> {
        let spec = SystemSpec::new(System::Pendulum);
        let y = simulate(&spec, &x, &z_e, &z_a, 20, substeps)?;
        Ok(y.data()[y.numel() - 2..].to_vec())
    };
    let reference = end(256)?;
    let err = |s: usize| -> Result<f64> {
        Ok(end(s)?.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    };
    Ok(err(1)? / err(2)?)
}

pub fn physics_checks() -> Result<Vec<Check>> {
    Ok(vec![
        Check::below("physics", "pendulum_energy_drift", energy_drift()?, 1e-4),
        Check::below("physics", "diffusion_mass_drift", diffusion_mass_drift()?, 1e-10),
        Check { group: "physics", name: "rk4_order_factor".into(), value: rk4_order_factor()?, lo: Some(12.0), limit: 20.0 },
    ])
}

/// Largest absolute difference after a dataset and a checkpoint pass
/// through bytes and back (zero when lossless).
pub fn roundtrip_checks() -> Result<Vec<Check>> {
    let data = toy_data(4)?;
    let back = Dataset::from_container(Container::from_bytes(&data.to_container()?.to_bytes()?)?)?;
    let ds_diff = if back == data { 0.0 } else { 1.0 };

    let arch = ArchConfig { hidden: 6, mlp_hidden: vec![6], ..ArchConfig::for_system(System::Pendulum) };
    let model = crate::checkpoint::HybridModel::Aphynity(AphynityModel::new(toy_spec(), arch, &LagrangianConfig::default(), 2)?);
    let bytes = model.to_container(serde_json::Value::Null)?.to_bytes()?;
    let loaded = crate::checkpoint::HybridModel::from_container(&Container::from_bytes(&bytes)?)?;
    let ck_same = loaded.store() == model.store() && loaded.to_container(serde_json::Value::Null)?.to_bytes()? == bytes;
    Ok(vec![
        Check::below("roundtrip", "dataset_bytes", ds_diff, 0.5),
        Check::below("roundtrip", "checkpoint_bytes", if ck_same { 0.0 } else { 1.0 }, 0.5),
    ])
}

/// Everything above; `perturb` feeds the primitive negative control.
pub fn run_all(perturb: f64) -> Result<Vec<Check>> {
    let mut all = primitive_checks(perturb)?;
    all.extend(loss_checks()?);
    all.extend(physics_checks()?);
    all.extend(roundtrip_checks()?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_and_perturbation_is_caught() {
        let clean = primitive_checks(0.0).unwrap();
        assert!(clean.iter().all(Check::passed), "{:#?}", clean.iter().filter(|c| !c.passed()).collect::<Vec<_>>());
        let bad = primitive_checks(1e-2).unwrap();
        assert!(bad.iter().all(|c| !c.passed()));
    }

    #[test]
    fn physics_invariants_hold() {
        for c in physics_checks().unwrap() {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn roundtrips_are_lossless() {
        for c in roundtrip_checks().unwrap() {
            assert!(c.passed(), "{c}");
        }
    }
}
