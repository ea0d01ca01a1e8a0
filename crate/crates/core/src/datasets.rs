//! Ground-truth split generation and dataset persistence.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::dynamics::{full_field, ParamBox, System, SystemSpec};
use crate::error::{Error, Result};
use crate::integrators::{rk4_rollout, OnDivergence, Schedule};
use crate::tensor::{Rng, Tensor, Var};

/// Integration substeps used for ground truth.
pub const TRUTH_SUBSTEPS: usize = 4;

/// Everything needed to regenerate one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub system: SystemSpec,
    pub count: usize,
    pub ze: ParamBox,
    pub za: ParamBox,
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    TRUTH_SUBSTEPS
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.ze.validate()?;
        self.za.validate()?;
        if self.count == 0 {
            return Err(Error::Config(format!("split `{}` needs at least one sample", self.name)));
        }
        if self.ze.dim() != self.system.d_e() || self.za.dim() != self.system.d_a_true() {
            return Err(Error::Config(format!("split `{}` has parameter boxes of the wrong dimension", self.name)));
        }
        if self.ze.lo.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("expert parameters must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.system.steps_t2()
    }
}

/// Default full-scale sample counts `(train, val, test)`.
pub fn default_counts(system: System) -> (usize, usize, usize) {
    match system {
        System::Pendulum => (1000, 100, 100),
        System::Rlc | System::ReactionDiffusion => (2000, 100, 100),
    }
}

/// Train / IID validation / OOD test specs. Seeds for the three splits
/// are derived from `seed` so that they never share streams.
pub fn standard_splits(system: &SystemSpec, counts: (usize, usize, usize), seed: u64) -> [SplitSpec; 3] {
    let mk = |name: &str, count, ze: &ParamBox, tag| SplitSpec {
        name: name.into(),
        system: system.clone(),
        count,
        ze: ze.clone(),
        za: system.za_true.clone(),
        seed: Rng::derive_seed(seed, tag),
        substeps: TRUTH_SUBSTEPS,
    };
    [
        mk("train", counts.0, &system.ze_train, 0),
        mk("val", counts.1, &system.ze_train, 1),
        mk("test", counts.2, &system.ze_test, 2),
    ]
}

/// `(train, shifted-test)` interaction supports of the z_a-shift experiment.
pub fn za_shift_boxes(system: System) -> (ParamBox, ParamBox) {
    match system {
        System::Pendulum => (ParamBox::interval(0.0, 0.3), ParamBox::interval(0.3, 0.6)),
        System::Rlc => (ParamBox::interval(1.0, 3.0), ParamBox::interval(3.0, 6.0)),
        System::ReactionDiffusion => (ParamBox::interval(0.003, 0.005), ParamBox::interval(0.005, 0.008)),
    }
}

/// Specs of the z_a-shift experiment: training over the in-distribution
/// expert box with the narrowed interaction support, testing with both
/// z_e and z_a shifted.
pub fn za_shift_splits(system: &SystemSpec, counts: (usize, usize), seed: u64) -> (SplitSpec, SplitSpec) {
    let (za_train, za_test) = za_shift_boxes(system.system);
    let train = SplitSpec {
        name: "za_train".into(),
        system: system.clone(),
        count: counts.0,
        ze: system.ze_train.clone(),
        za: za_train,
        seed: Rng::derive_seed(seed, 10),
        substeps: TRUTH_SUBSTEPS,
    };
    let test = SplitSpec {
        name: "za_test".into(),
        system: system.clone(),
        count: counts.1,
        ze: system.ze_test.clone(),
        za: za_test,
        seed: Rng::derive_seed(seed, 11),
        substeps: TRUTH_SUBSTEPS,
    };
    (train, test)
}

/// Shifted-test specs, one per equal-width bin of the shifted z_a range.
pub fn za_sweep_splits(system: &SystemSpec, bins: usize, count: usize, seed: u64) -> Vec<SplitSpec> {
    let (_, za_test) = za_shift_boxes(system.system);
    za_test
        .bins(0, bins)
        .into_iter()
        .enumerate()
        .map(|(i, za)| SplitSpec {
            name: format!("za_bin{i}"),
            system: system.clone(),
            count,
            ze: system.ze_test.clone(),
            za,
            seed: Rng::derive_seed(seed, 20 + i as u64),
            substeps: TRUTH_SUBSTEPS,
        })
        .collect()
}

/// Trajectories with their generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: serde_json::Value,
    /// `[N, S…]` initial states.
    pub x: Tensor,
    /// `[N, T, S…]` states at `Δt, 2Δt, …`.
    pub y: Tensor,
    /// `[N, d_e]`
    pub z_e: Tensor,
    /// `[N, d]` interaction parameters (true ones for generated splits,
    /// latent ones for augmented data).
    pub z_a: Tensor,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.y.shape()[1]
    }

    /// Rows `idx` of every array.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            manifest: self.manifest.clone(),
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            z_e: self.z_e.select_rows(idx),
            z_a: self.z_a.select_rows(idx),
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty (N = 0)".into()));
        }
        for (name, t) in [("y", &self.y), ("z_e", &self.z_e), ("z_a", &self.z_a)] {
            if t.shape()[0] != n {
                return Err(Error::Malformed(format!("array `{name}` has {} rows, expected {n}", t.shape()[0])));
            }
        }
        if !self.y.is_finite() || !self.x.is_finite() {
            return Err(Error::Malformed("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let mut c = Container::new(self.manifest.clone());
        c.push("x", self.x.clone());
        c.push("y", self.y.clone());
        c.push("z_e", self.z_e.clone());
        c.push("z_a", self.z_a.clone());
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Dataset> {
        let ds = Dataset {
            x: c.require("x")?.clone(),
            y: c.require("y")?.clone(),
            z_e: c.require("z_e")?.clone(),
            z_a: c.require("z_a")?.clone(),
            manifest: c.manifest,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_container(Container::load(path)?)
    }

    /// System spec recorded in the manifest.
    pub fn system_spec(&self) -> Result<SystemSpec> {
        let v = self.manifest.get("system").ok_or_else(|| Error::Malformed("manifest lacks `system`".into()))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

/// Initial state of one sample under the system's law.
pub fn initial_state(spec: &SystemSpec, rng: &mut Rng) -> Vec<f64> {
    match spec.system {
        System::Pendulum => vec![rng.uniform_scalar(-FRAC_PI_2, FRAC_PI_2).expect("valid bounds"), 0.0],
        System::Rlc => vec![rng.next_normal(), 0.0],
        System::ReactionDiffusion => (0..spec.state_len()).map(|_| rng.next_f64()).collect(),
    }
}

/// Integrate the true dynamics for a batch of samples, returning
/// `[B, T, S…]`.
pub fn simulate(spec: &SystemSpec, x: &Tensor, z_e: &Tensor, z_a: &Tensor, n_steps: usize, substeps: usize) -> Result<Tensor> {
    let (ze, za) = (Var::constant(z_e.clone()), Var::constant(z_a.clone()));
    let states = rk4_rollout(
        |t, y| full_field(spec.system, t, y, &ze, &za),
        &Var::constant(x.clone()),
        Schedule::new(0.0, n_steps, spec.dt, substeps)?,
        OnDivergence::Continue,
    )?;
    Tensor::stack_time(&states.iter().map(|s| s.value().clone()).collect::<Vec<_>>())
}

const CHUNK: usize = 50;

/// Draw every sample from its own child stream and integrate the full
/// field to `t2`. Chunks run in parallel; since each sample's arithmetic is
/// independent of its batch neighbours, the result is bitwise identical to
/// serial generation.
pub fn generate_split(spec: &SplitSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let sys = &spec.system;
    let mut x = Vec::with_capacity(spec.count * sys.state_len());
    let mut ze = Vec::with_capacity(spec.count * sys.d_e());
    let mut za = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = root.child(i as u64);
        ze.extend(spec.ze.sample(&mut rng));
        za.extend(spec.za.sample(&mut rng));
        x.extend(initial_state(sys, &mut rng));
    }
    let x = Tensor::new(sys.batch_shape(spec.count), x)?;
    let ze = Tensor::new(vec![spec.count, sys.d_e()], ze)?;
    let za = Tensor::new(vec![spec.count, 1], za)?;
    let n_steps = spec.n_steps();
    let starts: Vec<usize> = (0..spec.count).step_by(CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + CHUNK).min(spec.count)).collect();
            simulate(sys, &x.select_rows(&idx), &ze.select_rows(&idx), &za.select_rows(&idx), n_steps, spec.substeps)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = Vec::with_capacity(spec.count * n_steps * sys.state_len());
    for c in chunks {
        y.extend(c.into_data());
    }
    let mut shape = vec![spec.count, n_steps];
    shape.extend(sys.state_shape());
    let y = Tensor::new(shape, y)?;
    for i in 0..spec.count {
        if y.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::SampleDiverged { index: i, z_e: ze.row(i).to_vec(), z_a: za.row(i).to_vec() });
        }
    }
    let manifest = serde_json::json!({
        "kind": "dataset",
        "split": spec.name,
        "count": spec.count,
        "seed": spec.seed,
        "dt": sys.dt,
        "t0": 0.0,
        "t1": sys.t1,
        "t2": sys.t2,
        "ze_box": spec.ze,
        "za_box": spec.za,
        "substeps": spec.substeps,
        "system": sys,
    });
    Ok(Dataset { manifest, x, y, z_e: ze, z_a: za })
}
