//! HVAE-style hybrid model: a variational encoder that filters the
//! observations before identifying the expert parameters, a decoder
//! grounded in the expert field, and three grounding penalties.
//!
//! Expert parameters are handled in scaled units `z̃_e = z_e / ze_scale`
//! inside the encoder, the prior and every likelihood over `z_e`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aphynity::{concat_rows, prior_center, EpochStats, DECODER};
use crate::datasets::Dataset;
use crate::dynamics::{System, SystemSpec};
use crate::error::{Error, Result};
use crate::hybrid::{
    eval_chunks, expert_rollout, hybrid_rollout, masked_gradients, minibatches, sequence_mse, target_steps,
    ArchConfig, Observation, Predictor, Residual, Trunk,
};
use crate::integrators::OnDivergence;
use crate::neural::{
    broadcast_planes, gaussian_nll, gaussian_sample, kl_normal, kl_standard, noise_like, Activation, ConvNet,
    GaussianHead, Mlp, Positive, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::tensor::{Adam, Bound, ParamId, ParamStore, Rng, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvaeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Posterior samples averaged by the predictor.
    pub n_mc: usize,
}

impl Default for HvaeConfig {
    fn default() -> Self {
        HvaeConfig::for_system(System::Pendulum)
    }
}

impl HvaeConfig {
    pub fn for_system(system: System) -> Self {
        let base = HvaeConfig {
            alpha: 0.01,
            beta: 0.01,
            gamma: 1.0,
            epochs: 1000,
            lr: 5e-4,
            weight_decay: 1e-6,
            batch: 200,
            n_mc: 8,
        };
        match system {
            System::Pendulum => base,
            System::Rlc => HvaeConfig { batch: 100, ..base },
            System::ReactionDiffusion => HvaeConfig { batch: 100, weight_decay: 1e-5, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("regularizer weights must be non-negative".into()));
        }
        if self.batch == 0 || self.n_mc == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("hvae config needs batch, n_mc, lr > 0".into()));
        }
        Ok(())
    }
}

/// HVAE defaults: SELU networks, 64-unit residual.
pub fn default_arch(system: System) -> ArchConfig {
    let base = ArchConfig::for_system(system);
    match system {
        System::ReactionDiffusion => base,
        _ => ArchConfig { activation: Activation::Selu, mlp_hidden: vec![64, 64], ..base },
    }
}

/// Per-step filter `ŷ_e = y + g(y, z_a)`.
#[derive(Clone, Debug)]
pub enum Filter {
    Mlp(Mlp),
    Conv(ConvNet),
}

impl Filter {
    fn forward(&self, p: &Bound, y: &Var, z_a: &Var) -> Result<Var> {
        let delta = match self {
            Filter::Mlp(m) => m.forward(p, &Var::concat(&[y.clone(), z_a.clone()], 1)?)?,
            Filter::Conv(c) => {
                let planes = broadcast_planes(z_a, y.shape()[2])?;
                c.forward(p, &Var::concat(&[y.clone(), planes], 1)?)?
            }
        };
        y.try_add(&delta)
    }
}

#[derive(Clone, Debug)]
pub struct HvaeNet {
    pub spec: SystemSpec,
    pub arch: ArchConfig,
    ga_trunk: Trunk,
    ga_head: GaussianHead,
    filter: Filter,
    gp2_trunk: Trunk,
    gp2_head: GaussianHead,
    pub residual: Residual,
    log_var: ParamId,
}

/// One encoder pass.
pub struct Encoded {
    pub za_mu: Var,
    pub za_lv: Var,
    pub z_a: Var,
    /// Scaled units.
    pub ze_mu: Var,
    pub ze_lv: Var,
    pub ze_scaled: Var,
    /// Physical units.
    pub z_e: Var,
    /// Filtered `[x_o, y_1, …, y_T]`.
    pub filtered: Vec<Var>,
}

/// Objective pieces for one batch; all are per-sample means.
pub struct Terms {
    pub log_lik: Var,
    pub kl_a: Var,
    pub kl_e: Var,
    pub r_ppc: Var,
    pub r_da1: Var,
    pub r_da2: Var,
}

impl Terms {
    pub fn elbo(&self) -> Result<Var> {
        self.log_lik.try_sub(&self.kl_a)?.try_sub(&self.kl_e)
    }

    /// `−ELBO + α R_PPC + β R_DA1 + γ R_DA2`.
    pub fn objective(&self, cfg: &HvaeConfig) -> Result<Var> {
        let mut obj = self.elbo()?.neg();
        for (w, r) in [(cfg.alpha, &self.r_ppc), (cfg.beta, &self.r_da1), (cfg.gamma, &self.r_da2)] {
            if w != 0.0 {
                obj = obj.try_add(&r.scale(w))?;
            }
        }
        Ok(obj)
    }
}

/// Noise policy for an encoder pass.
pub enum Noise<'a> {
    /// ε = 0: posterior means.
    Zero,
    Draw(&'a mut Rng),
}

impl HvaeNet {
    pub fn obs_steps(&self) -> usize {
        self.spec.steps_t1()
    }

    fn scale(&self) -> Var {
        Var::constant(Tensor::vector(&self.arch.ze_scale))
    }

    /// `(mean, variance)` of the z_e prior in scaled units, moment-matched
    /// to the augmented support.
    pub fn ze_prior(&self) -> (Var, Var) {
        let b = &self.spec.ze_augment;
        let s = &self.arch.ze_scale;
        let mean: Vec<f64> = b.midpoint().iter().zip(s).map(|(m, s)| m / s).collect();
        let var: Vec<f64> = b.width().iter().zip(s).map(|(w, s)| (w / s).powi(2) / 12.0).collect();
        (Var::constant(Tensor::vector(&mean)), Var::constant(Tensor::vector(&var)))
    }

    fn sample(mu: &Var, lv: &Var, noise: &mut Noise) -> Result<Var> {
        match noise {
            Noise::Zero => Ok(mu.clone()),
            Noise::Draw(rng) => gaussian_sample(mu, lv, &noise_like(mu, rng)),
        }
    }

    pub fn encode(&self, p: &Bound, obs: &Observation, mut noise: Noise) -> Result<Encoded> {
        if obs.steps() != self.obs_steps() {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {} observed steps, got {}",
                self.obs_steps(),
                obs.steps()
            )));
        }
        let seq: Vec<Var> = obs.sequence().into_iter().map(Var::constant).collect();
        let (za_mu, za_lv) = self.ga_head.forward(p, &self.ga_trunk.forward(p, &seq)?)?;
        let z_a = Self::sample(&za_mu, &za_lv, &mut noise)?;
        let b = obs.batch();
        let stacked = Var::concat(&seq, 0)?;
        let za_rep = Var::concat(&vec![z_a.clone(); seq.len()], 0)?;
        let filt = self.filter.forward(p, &stacked, &za_rep)?;
        let filtered = (0..seq.len()).map(|k| filt.slice(0, k * b, b)).collect::<Result<Vec<_>>>()?;
        let (ze_mu, ze_lv) = self.gp2_head.forward(p, &self.gp2_trunk.forward(p, &filtered)?)?;
        let ze_scaled = Self::sample(&ze_mu, &ze_lv, &mut noise)?;
        let z_e = ze_scaled.try_mul(&self.scale())?;
        Ok(Encoded { za_mu, za_lv, z_a, ze_mu, ze_lv, ze_scaled, z_e, filtered })
    }

    pub fn decoder_log_var(&self, p: &Bound) -> Var {
        p.get(self.log_var).clamp(LOG_VAR_MIN, LOG_VAR_MAX)
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

    fn expert(&self, x: &Var, z_e: &Var, n: usize) -> Result<Vec<Var>> {
        expert_rollout(self.spec.system, x, z_e, 0.0, n, self.spec.dt, self.arch.substeps, OnDivergence::Fail)
    }

    /// ELBO pieces and regularizers for `obs` (which doubles as `(x, y)`).
    pub fn terms(&self, p: &Bound, obs: &Observation, rng: &mut Rng) -> Result<Terms> {
        let enc = self.encode(p, obs, Noise::Draw(rng))?;
        self.terms_from(p, obs, &enc, rng)
    }

    pub fn terms_from(&self, p: &Bound, obs: &Observation, enc: &Encoded, rng: &mut Rng) -> Result<Terms> {
        let b = obs.batch() as f64;
        let n = obs.steps();
        let x = Var::constant(obs.x_o.clone());
        let pred = self.rollout(p, &x, &enc.z_e, &enc.z_a, 0.0, n)?;
        let target = target_steps(&obs.y_o, 0, n);
        let lv = self.decoder_log_var(p);
        let log_lik = gaussian_nll(&Var::concat(&pred, 0)?, &lv, &Var::concat(&target, 0)?)?.neg().scale(1.0 / b);
        let kl_a = kl_standard(&enc.za_mu, &enc.za_lv)?.scale(1.0 / b);
        let (pm, pv) = self.ze_prior();
        let kl_e = kl_normal(&enc.ze_mu, &enc.ze_lv, &pm, &pv)?.scale(1.0 / b);
        let (r_ppc, r_da1, r_da2) = self.regularizers(p, obs, enc, &pred, rng)?;
        Ok(Terms { log_lik, kl_a, kl_e, r_ppc, r_da1, r_da2 })
    }

    /// `(R_PPC, R_DA1, R_DA2)`. The first two share one expert-only
    /// rollout driven by the sampled `z_e`.
    pub fn regularizers(
        &self,
        p: &Bound,
        obs: &Observation,
        enc: &Encoded,
        pred: &[Var],
        rng: &mut Rng,
    ) -> Result<(Var, Var, Var)> {
        let n = obs.steps();
        let x = Var::constant(obs.x_o.clone());
        let expert = self.expert(&x, &enc.z_e, n)?;
        let r_ppc = sequence_mse(pred, &expert)?;
        let r_da1 = sequence_mse(&enc.filtered[1..], &expert)?;
        // Fresh expert parameters over the augmented support.
        let bsz = obs.batch();
        let d = self.spec.d_e();
        let mut ze = Vec::with_capacity(bsz * d);
        for _ in 0..bsz {
            ze.extend(self.spec.ze_augment.sample(rng));
        }
        let ze = Tensor::new(vec![bsz, d], ze)?;
        let synth = self.expert(&x, &Var::constant(ze.clone()), n)?;
        let mut seq = vec![x];
        seq.extend(synth.iter().map(Var::detach));
        let (mu, lv) = self.gp2_head.forward(p, &self.gp2_trunk.forward(p, &seq)?)?;
        let target = Var::constant(ze).try_div(&self.scale())?;
        let r_da2 = gaussian_nll(&mu, &lv, &target)?.scale(1.0 / bsz as f64);
        Ok((r_ppc, r_da1, r_da2))
    }
}

/// Resumable optimisation state.
#[derive(Clone, Debug)]
pub struct HvaeState {
    pub epoch: usize,
    pub adam: Adam,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug)]
pub struct HvaeModel {
    pub net: HvaeNet,
    pub store: ParamStore,
    pub state: HvaeState,
    /// Objective weights and predictor settings used after training.
    pub cfg: HvaeConfig,
}

impl HvaeModel {
    pub fn new(spec: SystemSpec, arch: ArchConfig, cfg: &HvaeConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        arch.validate(&spec)?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let frames = spec.steps_t1() + 1;
        let s = spec.state_len();
        let ga_trunk = Trunk::new(&mut store, "encoder.ga.trunk", &spec, &arch, frames, &mut rng);
        let ga_head = GaussianHead::new(&mut store, "encoder.ga.head", ga_trunk.features_width(), arch.d_a, None, &mut rng);
        let filter = match spec.system {
            System::ReactionDiffusion => {
                let c = arch.residual_channels;
                Filter::Conv(ConvNet::new(&mut store, "encoder.gp1", &[2 + arch.d_a, c, c, 2], &mut rng))
            }
            _ => {
                let mut widths = vec![s + arch.d_a];
                widths.extend(&arch.mlp_hidden);
                widths.push(s);
                Filter::Mlp(Mlp::new(&mut store, "encoder.gp1", &widths, arch.activation, &mut rng))
            }
        };
        let gp2_trunk = Trunk::new(&mut store, "encoder.gp2.trunk", &spec, &arch, frames, &mut rng);
        let positive = Some(Positive { scale: vec![1.0; spec.d_e()] });
        let gp2_head =
            GaussianHead::new(&mut store, "encoder.gp2.head", gp2_trunk.features_width(), spec.d_e(), positive, &mut rng);
        gp2_head.mean_layer().center_softplus(&mut store, &prior_center(&spec, &arch));
        let residual = Residual::new(&mut store, "decoder.residual", &spec, &arch, &mut rng);
        let log_var = store.add("decoder.log_var", Tensor::vector(&[-2.0]));
        let net = HvaeNet { spec, arch, ga_trunk, ga_head, filter, gp2_trunk, gp2_head, residual, log_var };
        let state = HvaeState { epoch: 0, adam: Adam::new(cfg.lr, cfg.weight_decay), history: Vec::new() };
        Ok(HvaeModel { net, store, state, cfg: cfg.clone() })
    }

    pub fn decoder_hash(&self) -> String {
        self.store.hash(|n| n.starts_with(DECODER))
    }

    pub fn zero_residual(&mut self) {
        self.net.residual.zero(&mut self.store);
    }

    pub fn train(
        &mut self,
        data: &Dataset,
        cfg: &HvaeConfig,
        seed: u64,
        mut on_epoch: impl FnMut(&HvaeModel) -> Result<()>,
    ) -> Result<()> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        self.cfg = cfg.clone();
        let steps = self.net.obs_steps();
        while self.state.epoch < cfg.epochs {
            let epoch = self.state.epoch;
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            let mut n = 0usize;
            let noise_root = Rng::new(Rng::derive_seed(seed, 1_000_000 + epoch as u64));
            for (bi, idx) in minibatches(data.len(), cfg.batch, seed, epoch).into_iter().enumerate() {
                let obs = Observation::from_dataset(data, &idx, steps)?;
                let mut rng = noise_root.child(bi as u64);
                let p = self.store.bind(|_| true);
                let t = self.net.terms(&p, &obs, &mut rng)?;
                let obj = t.objective(cfg)?;
                let grads = masked_gradients(&self.store, &p, &obj, |_| true)?;
                drop(p);
                self.state.adam.step_store(&mut self.store, &grads)?;
                for (k, v) in [
                    ("objective", obj.item()),
                    ("elbo", t.elbo()?.item()),
                    ("log_lik", t.log_lik.item()),
                    ("kl_a", t.kl_a.item()),
                    ("kl_e", t.kl_e.item()),
                    ("r_ppc", t.r_ppc.item()),
                    ("r_da1", t.r_da1.item()),
                    ("r_da2", t.r_da2.item()),
                ] {
                    *sums.entry(k.to_string()).or_default() += v;
                }
                n += 1;
            }
            let terms = sums.into_iter().map(|(k, v)| (k, v / n as f64)).collect();
            self.state.history.push(EpochStats { epoch, terms });
            self.state.epoch += 1;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// Posterior-mean encoder outputs (physical units), no graph.
    pub fn encode_mean(&self, obs: &Observation) -> Result<Encoded> {
        self.net.encode(&self.store.bind_frozen(), obs, Noise::Zero)
    }

    /// Average of `n_mc` decoder rollouts under posterior draws; with
    /// `n_mc = 1` and no rng the posterior-mean rollout.
    pub fn predict_mc(
        &self,
        obs: &Observation,
        x: &Tensor,
        t0: f64,
        n_obs: usize,
        n_mc: usize,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor> {
        if n_mc == 0 {
            return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
        }
        let root = rng.map(|r| Rng::new(r.next_u64()));
        let chunks = eval_chunks(obs.batch(), EVAL_CHUNK);
        let parts = chunks
            .par_iter()
            .enumerate()
            .map(|(ci, idx)| {
                let sub = Observation { x_o: obs.x_o.select_rows(idx), y_o: obs.y_o.select_rows(idx), truth: None };
                let p = self.store.bind_frozen();
                let xv = Var::constant(x.select_rows(idx));
                let mut acc: Option<Tensor> = None;
                let mut crng = root.as_ref().map(|r| r.child(ci as u64));
                for _ in 0..n_mc {
                    let noise = match crng.as_mut() {
                        Some(r) => Noise::Draw(r),
                        None => Noise::Zero,
                    };
                    let enc = self.net.encode(&p, &sub, noise)?;
                    let states = self.net.rollout(&p, &xv, &enc.z_e, &enc.z_a, t0, n_obs)?;
                    let traj = Tensor::stack_time(&states.iter().map(|s| s.value().clone()).collect::<Vec<_>>())?;
                    acc = Some(match acc {
                        None => traj,
                        Some(mut a) => {
                            a.data_mut().iter_mut().zip(traj.data()).for_each(|(s, v)| *s += v);
                            a
                        }
                    });
                }
                Ok(acc.expect("n_mc >= 1").map(|v| v / n_mc as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        concat_rows(&parts)
    }

    /// Negative log posterior density of known expert parameters, per
    /// sample, in scaled units.
    pub fn supervision(&self, p: &Bound, obs: &Observation, z_e_true: &Tensor, rng: &mut Rng) -> Result<Var> {
        let enc = self.net.encode(p, obs, Noise::Draw(rng))?;
        let target = Var::constant(z_e_true.clone()).try_div(&self.net.scale())?;
        Ok(gaussian_nll(&enc.ze_mu, &enc.ze_lv, &target)?.scale(1.0 / obs.batch() as f64))
    }
}

const EVAL_CHUNK: usize = 25;

impl Predictor for HvaeModel {
    fn predict(&self, obs: &Observation, x: &Tensor, t0: f64, n_obs: usize, rng: &mut Rng) -> Result<Tensor> {
        self.predict_mc(obs, x, t0, n_obs, self.cfg.n_mc, Some(rng))
    }

    fn estimate_ze(&self, obs: &Observation, _rng: &mut Rng) -> Result<Option<Tensor>> {
        let enc = self.encode_mean(obs)?;
        Ok(Some(enc.z_e.value().clone()))
    }
}
