//! Pieces shared by both hybrid model flavors: architecture config,
//! observation encoders, the learned residual field and hybrid rollouts.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::dynamics::{expert_field, System, SystemSpec};
use crate::error::{Error, Result};
use crate::integrators::{rk4_rollout, OnDivergence, Schedule};
use crate::neural::{broadcast_planes, Activation, ConvNet, GridEncoder, Gru, Mlp};
use crate::tensor::{Bound, ParamStore, Rng, Tensor, Var};

/// Architecture hyperparameters shared by APHYNITY and HVAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Latent interaction dimension.
    pub d_a: usize,
    /// Recurrent encoder width.
    pub hidden: usize,
    /// Hidden widths of MLP residual and filter networks.
    pub mlp_hidden: Vec<usize>,
    pub activation: Activation,
    /// Channels of the strided grid encoder.
    pub encoder_channels: Vec<usize>,
    /// Hidden channels of the convolutional residual.
    pub residual_channels: usize,
    /// RK4 steps per observation interval.
    pub substeps: usize,
    /// Per-coordinate scale of positive expert-parameter heads.
    pub ze_scale: Vec<f64>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::for_system(System::Pendulum)
    }
}

impl ArchConfig {
    pub fn for_system(system: System) -> Self {
        match system {
            System::Pendulum | System::Rlc => ArchConfig {
                d_a: 1,
                hidden: 128,
                mlp_hidden: vec![150, 150],
                activation: Activation::Relu,
                encoder_channels: vec![],
                residual_channels: 0,
                substeps: 2,
                ze_scale: vec![1.0; if system == System::Pendulum { 1 } else { 2 }],
            },
            System::ReactionDiffusion => ArchConfig {
                d_a: 10,
                hidden: 64,
                mlp_hidden: vec![],
                activation: Activation::Relu,
                encoder_channels: vec![16, 32, 64, 64],
                residual_channels: 16,
                substeps: 1,
                ze_scale: vec![1e-3, 1e-2],
            },
        }
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        if self.ze_scale.len() != spec.d_e() || self.ze_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!("ze_scale needs {} positive entries", spec.d_e())));
        }
        if self.d_a == 0 || self.substeps == 0 || self.hidden == 0 {
            return Err(Error::Config("d_a, hidden and substeps must be positive".into()));
        }
        if spec.system == System::ReactionDiffusion && (self.encoder_channels.is_empty() || self.residual_channels == 0) {
            return Err(Error::Config("grid systems need encoder_channels and residual_channels".into()));
        }
        Ok(())
    }
}

/// Conditioning pair: `x_o` is the first state, `y_o` the observed window.
#[derive(Clone, Debug)]
pub struct Observation {
    /// `[B, S…]`
    pub x_o: Tensor,
    /// `[B, T, S…]`
    pub y_o: Tensor,
    /// Generating parameters, read only by oracle predictors.
    pub truth: Option<(Tensor, Tensor)>,
}

impl Observation {
    /// Rows `idx` of `data`, observed over the first `steps` steps.
    pub fn from_dataset(data: &Dataset, idx: &[usize], steps: usize) -> Result<Self> {
        let sub = data.select(idx);
        Ok(Observation {
            x_o: sub.x,
            y_o: sub.y.narrow1(0, steps)?,
            truth: Some((sub.z_e, sub.z_a)),
        })
    }

    pub fn batch(&self) -> usize {
        self.x_o.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.y_o.shape()[1]
    }

    /// `[x_o, y_1, …, y_T]` as `T + 1` batched states.
    pub fn sequence(&self) -> Vec<Tensor> {
        let mut seq = Vec::with_capacity(self.steps() + 1);
        seq.push(self.x_o.clone());
        seq.extend((0..self.steps()).map(|k| self.y_o.time_step(k)));
        seq
    }
}

/// Encoder trunk mapping a state sequence to a feature vector.
#[derive(Clone, Debug)]
pub enum Trunk {
    Recurrent(Gru),
    /// Frames stacked channel-wise, then strided convolutions.
    Grid(GridEncoder),
}

impl Trunk {
    pub fn new(store: &mut ParamStore, name: &str, spec: &SystemSpec, arch: &ArchConfig, frames: usize, rng: &mut Rng) -> Self {
        match spec.system {
            System::ReactionDiffusion => {
                Trunk::Grid(GridEncoder::new(store, name, 2 * frames, &arch.encoder_channels, spec.grid, rng))
            }
            _ => Trunk::Recurrent(Gru::new(store, name, spec.state_len(), arch.hidden, rng)),
        }
    }

    pub fn features_width(&self) -> usize {
        match self {
            Trunk::Recurrent(g) => g.width,
            Trunk::Grid(e) => e.features,
        }
    }

    /// `seq`: `T + 1` batched states.
    pub fn forward(&self, p: &Bound, seq: &[Var]) -> Result<Var> {
        match self {
            Trunk::Recurrent(g) => g.encode(p, seq),
            Trunk::Grid(e) => {
                let frames = Var::concat(seq, 1)?;
                e.forward(p, &frames)
            }
        }
    }
}

/// Learned interaction field `F_a(y, z_a; θ)`.
#[derive(Clone, Debug)]
pub enum Residual {
    Mlp(Mlp),
    Conv(ConvNet),
}

impl Residual {
    pub fn new(store: &mut ParamStore, name: &str, spec: &SystemSpec, arch: &ArchConfig, rng: &mut Rng) -> Self {
        match spec.system {
            System::ReactionDiffusion => {
                let c = arch.residual_channels;
                Residual::Conv(ConvNet::new(store, name, &[2 + arch.d_a, c, c, 2], rng))
            }
            _ => {
                let s = spec.state_len();
                let mut widths = vec![s + arch.d_a];
                widths.extend(&arch.mlp_hidden);
                widths.push(s);
                Residual::Mlp(Mlp::new(store, name, &widths, arch.activation, rng))
            }
        }
    }

    pub fn forward(&self, p: &Bound, y: &Var, z_a: &Var) -> Result<Var> {
        match self {
            Residual::Mlp(m) => m.forward(p, &Var::concat(&[y.clone(), z_a.clone()], 1)?),
            Residual::Conv(c) => {
                let planes = broadcast_planes(z_a, y.shape()[2])?;
                c.forward(p, &Var::concat(&[y.clone(), planes], 1)?)
            }
        }
    }

    /// Make the residual the zero function.
    pub fn zero(&self, store: &mut ParamStore) {
        match self {
            Residual::Mlp(m) => m.zero_last(store),
            Residual::Conv(c) => c.zero_last(store),
        }
    }
}

/// Rollout of `F_e(·; z_e) + F_a(·, z_a)` from `x` at time `t0`.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_rollout(
    system: System,
    residual: &Residual,
    p: &Bound,
    x: &Var,
    z_e: &Var,
    z_a: &Var,
    t0: f64,
    n_obs: usize,
    dt: f64,
    substeps: usize,
    on_div: OnDivergence,
) -> Result<Vec<Var>> {
    let schedule = Schedule::new(t0, n_obs, dt, substeps)?;
    rk4_rollout(
        |t, y| expert_field(system, t, y, z_e)?.try_add(&residual.forward(p, y, z_a)?),
        x,
        schedule,
        on_div,
    )
}

/// Rollout of the expert field alone.
#[allow(clippy::too_many_arguments)]
pub fn expert_rollout(
    system: System,
    x: &Var,
    z_e: &Var,
    t0: f64,
    n_obs: usize,
    dt: f64,
    substeps: usize,
    on_div: OnDivergence,
) -> Result<Vec<Var>> {
    rk4_rollout(|t, y| expert_field(system, t, y, z_e), x, Schedule::new(t0, n_obs, dt, substeps)?, on_div)
}

/// Mean over batch, steps and coordinates of `F_a(ŷ_t, z_a)²`, evaluated
/// at `states` (all steps folded into one batch).
pub fn residual_norm(residual: &Residual, p: &Bound, states: &[Var], z_a: &Var) -> Result<Var> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("residual norm over an empty trajectory".into()));
    }
    let ys = Var::concat(states, 0)?;
    let zs = Var::concat(&vec![z_a.clone(); states.len()], 0)?;
    Ok(residual.forward(p, &ys, &zs)?.square().mean())
}

/// Mean over batch, steps and coordinates of squared distance between
/// two state sequences.
pub fn sequence_mse(a: &[Var], b: &[Var]) -> Result<Var> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!("sequence lengths {} and {} differ", a.len(), b.len())));
    }
    let x = Var::concat(a, 0)?;
    let y = Var::concat(b, 0)?;
    Ok(x.try_sub(&y)?.square().mean())
}

/// Target window `y[:, start..start + n]` as constant steps.
pub fn target_steps(y: &Tensor, start: usize, n: usize) -> Vec<Var> {
    (start..start + n).map(|k| Var::constant(y.time_step(k))).collect()
}

/// Divide `[B, d]` parameters by the per-coordinate scale.
pub fn normalize(z: &Var, scale: &[f64]) -> Result<Var> {
    z.try_div(&Var::constant(Tensor::vector(scale)))
}

pub fn denormalize(z: &Var, scale: &[f64]) -> Result<Var> {
    z.try_mul(&Var::constant(Tensor::vector(scale)))
}

/// Anything that forecasts trajectories from a conditioning window.
pub trait Predictor: Sync {
    /// `[B, n_obs, S…]` forecast from `x` at time `t0`.
    fn predict(&self, obs: &Observation, x: &Tensor, t0: f64, n_obs: usize, rng: &mut Rng) -> Result<Tensor>;

    /// Point estimate of the expert parameters, if the predictor has one.
    fn estimate_ze(&self, obs: &Observation, rng: &mut Rng) -> Result<Option<Tensor>>;
}

/// Shuffled minibatches for one epoch. The permutation depends only on
/// `(seed, epoch)`, so interrupted runs resume on the same schedule.
pub fn minibatches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).child(epoch as u64).shuffle(&mut idx);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Gradients of the trainable subset, refusing any that reach a frozen
/// parameter.
pub fn masked_gradients(
    store: &ParamStore,
    bound: &Bound,
    loss: &Var,
    trainable: impl Fn(&str) -> bool,
) -> Result<Vec<Option<Tensor>>> {
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss(format!("{}", loss.item())));
    }
    let grads = bound.gradients(&loss.backward()?);
    for id in store.ids() {
        if grads[id.0].is_some() && !trainable(store.name(id)) {
            return Err(Error::FrozenParameter(store.name(id).to_string()));
        }
    }
    Ok(grads)
}

/// Split `0..n` into chunks for parallel evaluation.
pub fn eval_chunks(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0..n).step_by(size.max(1)).map(|s| (s..(s + size).min(n)).collect()).collect()
}
