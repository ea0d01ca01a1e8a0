//! APHYNITY-style hybrid model: point-estimate encoder, additive neural
//! residual, and dual-ascent training that keeps the residual as small as
//! the trajectory fit allows.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::dynamics::{System, SystemSpec};
use crate::error::{Error, Result};
use crate::hybrid::{
    eval_chunks, hybrid_rollout, masked_gradients, minibatches, normalize, residual_norm, sequence_mse,
    target_steps, ArchConfig, Observation, Predictor, Residual, Trunk,
};
use crate::integrators::OnDivergence;
use crate::neural::Linear;
use crate::tensor::{Adam, Bound, ParamStore, Rng, Tensor, Var};

pub const ENCODER: &str = "encoder.";
pub const DECODER: &str = "decoder.";

/// Optimisation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagrangianConfig {
    /// Optimizer steps between multiplier updates.
    pub n_iter: usize,
    pub lambda0: f64,
    pub tau2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    /// Epochs over which the fitted horizon grows linearly from
    /// `warmup_steps` to the full window (0 disables the curriculum).
    pub warmup_epochs: usize,
    pub warmup_steps: usize,
}

impl Default for LagrangianConfig {
    fn default() -> Self {
        LagrangianConfig::for_system(System::Pendulum)
    }
}

impl LagrangianConfig {
    pub fn for_system(system: System) -> Self {
        let base = LagrangianConfig {
            n_iter: 5,
            lambda0: 10.0,
            tau2: 5.0,
            epochs: 50,
            lr: 5e-4,
            batch: 100,
            weight_decay: 0.0,
            warmup_epochs: 0,
            warmup_steps: 10,
        };
        match system {
            System::ReactionDiffusion => LagrangianConfig { n_iter: 1, epochs: 500, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.batch == 0 || !(self.lr > 0.0) || !(self.lambda0 >= 0.0) || !(self.tau2 >= 0.0) {
            return Err(Error::Config("lagrangian config needs n_iter, batch, lr > 0 and lambda0, tau2 >= 0".into()));
        }
        Ok(())
    }

    /// Fitted horizon (in observation steps) during `epoch`.
    pub fn horizon(&self, epoch: usize, full: usize) -> usize {
        if self.warmup_epochs == 0 || epoch >= self.warmup_epochs {
            return full;
        }
        let start = self.warmup_steps.clamp(1, full);
        start + (full - start) * epoch / self.warmup_epochs
    }
}

/// Midpoint of the augmentation box in head units; positive heads start there.
pub fn prior_center(spec: &SystemSpec, arch: &ArchConfig) -> Vec<f64> {
    spec.ze_augment.midpoint().iter().zip(&arch.ze_scale).map(|(m, s)| m / s).collect()
}

/// Dual ascent on the trajectory constraint.
pub fn dual_update(lambda: f64, l_traj: f64, tau2: f64) -> f64 {
    lambda + tau2 * l_traj
}

/// Per-epoch means of the training terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub terms: BTreeMap<String, f64>,
}

/// Network layout; parameters live in the model's [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AphynityNet {
    pub spec: SystemSpec,
    pub arch: ArchConfig,
    trunk: Trunk,
    ze_head: Linear,
    za_head: Linear,
    pub residual: Residual,
}

/// Resumable optimisation state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub lambda: f64,
    pub adam: Adam,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug)]
pub struct AphynityModel {
    pub net: AphynityNet,
    pub store: ParamStore,
    pub state: TrainState,
}

/// Training-loss pieces for one batch.
pub struct Losses {
    pub l_traj: Var,
    pub l_res: Var,
    pub z_e: Var,
}

impl AphynityNet {
    pub fn obs_steps(&self) -> usize {
        self.spec.steps_t1()
    }

    /// Point estimates `(z_e, z_a)`.
    pub fn encode(&self, p: &Bound, obs: &Observation) -> Result<(Var, Var)> {
        if obs.steps() != self.obs_steps() {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {} observed steps, got {}",
                self.obs_steps(),
                obs.steps()
            )));
        }
        let seq: Vec<Var> = obs.sequence().into_iter().map(Var::constant).collect();
        let h = self.trunk.forward(p, &seq)?;
        let z_e = self.ze_head.forward(p, &h)?.softplus().try_mul(&Var::constant(Tensor::vector(&self.arch.ze_scale)))?;
        let z_a = self.za_head.forward(p, &h)?;
        Ok((z_e, z_a))
    }

    pub fn rollout(&self, p: &Bound, x: &Var, z_e: &Var, z_a: &Var, t0: f64, n_obs: usize) -> Result<Vec<Var>> {
        hybrid_rollout(
            self.spec.system,
            &self.residual,
            p,
            x,
            z_e,
            z_a,
            t0,
            n_obs,
            self.spec.dt,
            self.arch.substeps,
            OnDivergence::Fail,
        )
    }

    /// Trajectory misfit and residual norm over the first `horizon` steps.
    pub fn losses(&self, p: &Bound, obs: &Observation, horizon: usize) -> Result<Losses> {
        let (z_e, z_a) = self.encode(p, obs)?;
        let x = Var::constant(obs.x_o.clone());
        let pred = self.rollout(p, &x, &z_e, &z_a, 0.0, horizon)?;
        let l_traj = sequence_mse(&pred, &target_steps(&obs.y_o, 0, horizon))?;
        let mut visited = vec![x];
        visited.extend(pred[..horizon - 1].iter().cloned());
        let l_res = residual_norm(&self.residual, p, &visited, &z_a)?;
        Ok(Losses { l_traj, l_res, z_e })
    }
}

impl AphynityModel {
    pub fn new(spec: SystemSpec, arch: ArchConfig, cfg: &LagrangianConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        arch.validate(&spec)?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let frames = spec.steps_t1() + 1;
        let trunk = Trunk::new(&mut store, "encoder.trunk", &spec, &arch, frames, &mut rng);
        let f = trunk.features_width();
        let ze_head = Linear::new(&mut store, "encoder.ze", f, spec.d_e(), &mut rng);
        ze_head.center_softplus(&mut store, &prior_center(&spec, &arch));
        let za_head = Linear::new(&mut store, "encoder.za", f, arch.d_a, &mut rng);
        let residual = Residual::new(&mut store, "decoder.residual", &spec, &arch, &mut rng);
        let net = AphynityNet { spec, arch, trunk, ze_head, za_head, residual };
        let state = TrainState { epoch: 0, lambda: cfg.lambda0, adam: Adam::new(cfg.lr, cfg.weight_decay), history: Vec::new() };
        Ok(AphynityModel { net, store, state })
    }

    pub fn decoder_hash(&self) -> String {
        self.store.hash(|n| n.starts_with(DECODER))
    }

    /// Zero the residual so the model starts as the expert model.
    pub fn zero_residual(&mut self) {
        self.net.residual.zero(&mut self.store);
    }

    /// Run epochs `state.epoch .. cfg.epochs` of Lagrangian training.
    /// `on_epoch` sees each finished epoch (for logging and checkpoints).
    pub fn train(
        &mut self,
        data: &Dataset,
        cfg: &LagrangianConfig,
        seed: u64,
        mut on_epoch: impl FnMut(&AphynityModel) -> Result<()>,
    ) -> Result<()> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let full = self.net.obs_steps();
        let all = |_: &str| true;
        while self.state.epoch < cfg.epochs {
            let epoch = self.state.epoch;
            let horizon = cfg.horizon(epoch, full);
            let (mut s_traj, mut s_res, mut s_loss, mut n) = (0.0, 0.0, 0.0, 0usize);
            for idx in minibatches(data.len(), cfg.batch, seed, epoch) {
                let obs = Observation::from_dataset(data, &idx, full)?;
                let p = self.store.bind(|_| true);
                let l = self.net.losses(&p, &obs, horizon)?;
                let loss = l.l_traj.scale(self.state.lambda).try_add(&l.l_res)?;
                let grads = masked_gradients(&self.store, &p, &loss, all)?;
                drop(p);
                self.state.adam.step_store(&mut self.store, &grads)?;
                let lt = l.l_traj.item();
                if self.state.adam.steps().is_multiple_of(cfg.n_iter as u64) {
                    self.state.lambda = dual_update(self.state.lambda, lt, cfg.tau2);
                }
                s_traj += lt;
                s_res += l.l_res.item();
                s_loss += loss.item();
                n += 1;
            }
            let k = n as f64;
            let terms = BTreeMap::from([
                ("l_traj".to_string(), s_traj / k),
                ("l_res".to_string(), s_res / k),
                ("loss".to_string(), s_loss / k),
                ("lambda".to_string(), self.state.lambda),
                ("horizon".to_string(), horizon as f64),
            ]);
            self.state.history.push(EpochStats { epoch, terms });
            self.state.epoch += 1;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// Encoder outputs for `obs` without building a graph.
    pub fn encode(&self, obs: &Observation) -> Result<(Tensor, Tensor)> {
        let (z_e, z_a) = self.net.encode(&self.store.bind_frozen(), obs)?;
        Ok((z_e.value().clone(), z_a.value().clone()))
    }

    /// Mean squared error of `ẑ_e` against `z_e` in scaled units.
    pub fn supervision(&self, p: &Bound, obs: &Observation, z_e_true: &Tensor) -> Result<Var> {
        let (z_e, _) = self.net.encode(p, obs)?;
        let s = &self.net.arch.ze_scale;
        Ok(normalize(&z_e, s)?.try_sub(&normalize(&Var::constant(z_e_true.clone()), s)?)?.square().mean())
    }
}

const EVAL_CHUNK: usize = 25;

impl Predictor for AphynityModel {
    fn predict(&self, obs: &Observation, x: &Tensor, t0: f64, n_obs: usize, _rng: &mut Rng) -> Result<Tensor> {
        let chunks = eval_chunks(obs.batch(), EVAL_CHUNK);
        let parts = chunks
            .par_iter()
            .map(|idx| {
                let sub = Observation {
                    x_o: obs.x_o.select_rows(idx),
                    y_o: obs.y_o.select_rows(idx),
                    truth: None,
                };
                let p = self.store.bind_frozen();
                let (z_e, z_a) = self.net.encode(&p, &sub)?;
                let states = self.net.rollout(&p, &Var::constant(x.select_rows(idx)), &z_e, &z_a, t0, n_obs)?;
                Tensor::stack_time(&states.iter().map(|s| s.value().clone()).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        concat_rows(&parts)
    }

    fn estimate_ze(&self, obs: &Observation, _rng: &mut Rng) -> Result<Option<Tensor>> {
        Ok(Some(self.encode(obs)?.0))
    }
}

/// Concatenate tensors along axis 0.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for t in parts {
        if t.shape()[1..] != first.shape()[1..] {
            return Err(Error::shape("concat_rows", &[first.shape(), t.shape()]));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_split, standard_splits};
    use crate::hybrid::expert_rollout;

    fn toy_arch() -> ArchConfig {
        ArchConfig { hidden: 16, mlp_hidden: vec![16], ..ArchConfig::for_system(System::Pendulum) }
    }

    fn pendulum_data(n: usize) -> Dataset {
        let sys = SystemSpec::new(System::Pendulum);
        let mut s = standard_splits(&sys, (n, 1, 1), 0)[0].clone();
        s.count = n;
        generate_split(&s).unwrap()
    }

    #[test]
    fn zero_heads_give_ln2() {
        let cfg = LagrangianConfig::default();
        let mut m = AphynityModel::new(SystemSpec::new(System::Pendulum), toy_arch(), &cfg, 0).unwrap();
        m.net.ze_head.zero(&mut m.store);
        let data = pendulum_data(3);
        let obs = Observation::from_dataset(&data, &[0, 1, 2], 50).unwrap();
        let (z_e, _) = m.encode(&obs).unwrap();
        assert!(z_e.data().iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
        let (again, _) = m.encode(&obs).unwrap();
        assert_eq!(z_e, again);
        let short = Observation::from_dataset(&data, &[0], 10).unwrap();
        assert!(m.encode(&short).is_err());
    }

    #[test]
    fn zero_residual_is_expert_rollout_bitwise() {
        let cfg = LagrangianConfig::default();
        let mut m = AphynityModel::new(SystemSpec::new(System::Pendulum), toy_arch(), &cfg, 0).unwrap();
        m.zero_residual();
        let p = m.store.bind_frozen();
        let x = Var::constant(Tensor::matrix(&[&[0.4, 0.0], &[-1.0, 0.5]]).unwrap());
        let z_e = Var::constant(Tensor::matrix(&[&[2.0], &[1.5]]).unwrap());
        let z_a = Var::constant(Tensor::matrix(&[&[0.3], &[-0.2]]).unwrap());
        let a = m.net.rollout(&p, &x, &z_e, &z_a, 0.0, 30).unwrap();
        let b = expert_rollout(System::Pendulum, &x, &z_e, 0.0, 30, 0.1, 2, OnDivergence::Fail).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!(u.value().data().iter().zip(v.value().data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let r = residual_norm(&m.net.residual, &p, &a, &z_a).unwrap();
        assert_eq!(r.item(), 0.0);
    }

    #[test]
    fn dual_update_rules() {
        assert_eq!(dual_update(10.0, 0.0, 5.0), 10.0);
        assert_eq!(dual_update(10.0, 0.2, 5.0), 11.0);
        let cfg = LagrangianConfig { warmup_epochs: 4, warmup_steps: 10, ..LagrangianConfig::default() };
        assert_eq!((cfg.horizon(0, 50), cfg.horizon(2, 50), cfg.horizon(4, 50)), (10, 30, 50));
    }

    #[test]
    fn toy_training_reduces_trajectory_loss() {
        // One-second windows: ten samples, five epochs.
        let mut spec = SystemSpec::new(System::Pendulum);
        spec.t1 = 1.0;
        let mut split = standard_splits(&spec, (10, 1, 1), 0)[0].clone();
        split.count = 10;
        let data = generate_split(&split).unwrap();
        let cfg = LagrangianConfig { epochs: 5, batch: 2, lr: 3e-3, ..LagrangianConfig::default() };
        let arch = ArchConfig { hidden: 64, mlp_hidden: vec![64, 64], ..ArchConfig::for_system(System::Pendulum) };
        let mut m = AphynityModel::new(spec, arch, &cfg, 0).unwrap();
        let obs = Observation::from_dataset(&data, &(0..10).collect::<Vec<_>>(), 10).unwrap();
        let before = m.net.losses(&m.store.bind_frozen(), &obs, 10).unwrap().l_traj.item();
        m.train(&data, &cfg, 0, |_| Ok(())).unwrap();
        let after = m.net.losses(&m.store.bind_frozen(), &obs, 10).unwrap().l_traj.item();
        assert!(after < before / 10.0, "{before} -> {after}");
        let lambdas: Vec<f64> = m.state.history.iter().map(|e| e.terms["lambda"]).collect();
        assert!(lambdas.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let data = pendulum_data(6);
        let cfg = LagrangianConfig { epochs: 2, batch: 3, ..LagrangianConfig::default() };
        let run = || {
            let mut m = AphynityModel::new(SystemSpec::new(System::Pendulum), toy_arch(), &cfg, 1).unwrap();
            m.train(&data, &cfg, 1, |_| Ok(())).unwrap();
            m
        };
        let (a, b) = (run(), run());
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.store, b.store);
    }

}
