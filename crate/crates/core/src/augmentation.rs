//! Expert augmentation: sample the trained hybrid generative model over a
//! widened expert-parameter support, then fine-tune the encoder on the
//! synthetic set with the decoder frozen.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aphynity::{concat_rows, AphynityModel, EpochStats, DECODER, ENCODER};
use crate::datasets::Dataset;
use crate::dynamics::{ParamBox, SystemSpec};
use crate::error::{Error, Result};
use crate::hvae::{HvaeModel, Noise};
use crate::hybrid::{eval_chunks, expert_rollout, masked_gradients, minibatches, Observation, Predictor};
use crate::integrators::OnDivergence;
use crate::tensor::{Adam, Bound, ParamStore, Rng, Tensor, Var};

/// Largest tolerated fraction of skipped (divergent) samples.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

/// Values beyond this magnitude count as a diverged rollout.
const BLOWUP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Augmented expert support; the system default when absent.
    pub ze_box: Option<ParamBox>,
    /// Number of synthetic samples; the training-set size when absent.
    pub n_aug: Option<usize>,
    pub w_sup: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { ze_box: None, n_aug: None, w_sup: 1.0, epochs: 20, lr: 5e-4, batch: 20 }
    }
}

impl AugmentConfig {
    pub fn support(&self, spec: &SystemSpec) -> Result<ParamBox> {
        let b = self.ze_box.clone().unwrap_or_else(|| spec.ze_augment.clone());
        b.validate()?;
        if b.dim() != spec.d_e() {
            return Err(Error::Config(format!("ze_box has {} dims, system has {}", b.dim(), spec.d_e())));
        }
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(self.w_sup >= 0.0) {
            return Err(Error::Config("augment config needs batch > 0, lr > 0, w_sup >= 0".into()));
        }
        Ok(())
    }
}

/// What augmentation needs from a trained hybrid model.
pub trait Augmentable: Predictor + Clone {
    fn spec(&self) -> &SystemSpec;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Interaction latents for the pairs `picks` of `train`.
    fn draw_za(&self, train: &Dataset, picks: &[usize], rng: &mut Rng) -> Result<Tensor>;

    /// Decoder rollout without a graph, tolerating divergence.
    fn decode(&self, x: &Tensor, z_e: &Tensor, z_a: &Tensor, n_obs: usize) -> Result<Tensor>;

    /// Training loss plus `w_sup` times the expert-parameter supervision.
    fn finetune_loss(&self, p: &Bound, obs: &Observation, z_e: &Tensor, w_sup: f64, rng: &mut Rng) -> Result<Var>;

    /// Supervision error of the point estimate in scaled units.
    fn ze_mse(&self, obs: &Observation, z_e: &Tensor) -> Result<f64>;

    fn decoder_hash(&self) -> String {
        self.store().hash(|n| n.starts_with(DECODER))
    }
}

fn stack_states(states: &[Var]) -> Result<Tensor> {
    Tensor::stack_time(&states.iter().map(|s| s.value().clone()).collect::<Vec<_>>())
}

fn scaled_mse(est: &Tensor, truth: &Tensor, scale: &[f64]) -> f64 {
    let d = scale.len();
    let n = est.numel();
    est.data().iter().zip(truth.data()).enumerate().map(|(i, (a, b))| ((a - b) / scale[i % d]).powi(2)).sum::<f64>()
        / n as f64
}

impl Augmentable for AphynityModel {
    fn spec(&self) -> &SystemSpec {
        &self.net.spec
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Uniform draws from the encodings of the whole training set.
    fn draw_za(&self, train: &Dataset, picks: &[usize], rng: &mut Rng) -> Result<Tensor> {
        let parts = eval_chunks(train.len(), 50)
            .par_iter()
            .map(|idx| Ok(self.encode(&Observation::from_dataset(train, idx, self.net.obs_steps())?)?.1))
            .collect::<Result<Vec<_>>>()?;
        let pool = concat_rows(&parts)?;
        let rows: Vec<usize> = picks.iter().map(|_| rng.below(pool.rows())).collect();
        Ok(pool.select_rows(&rows))
    }

    fn decode(&self, x: &Tensor, z_e: &Tensor, z_a: &Tensor, n_obs: usize) -> Result<Tensor> {
        let p = self.store.bind_frozen();
        let states = crate::hybrid::hybrid_rollout(
            self.net.spec.system,
            &self.net.residual,
            &p,
            &Var::constant(x.clone()),
            &Var::constant(z_e.clone()),
            &Var::constant(z_a.clone()),
            0.0,
            n_obs,
            self.net.spec.dt,
            self.net.arch.substeps,
            OnDivergence::Continue,
        )?;
        stack_states(&states)
    }

    fn finetune_loss(&self, p: &Bound, obs: &Observation, z_e: &Tensor, w_sup: f64, _rng: &mut Rng) -> Result<Var> {
        let l = self.net.losses(p, obs, obs.steps())?;
        let loss = l.l_traj.scale(self.state.lambda).try_add(&l.l_res)?;
        if w_sup == 0.0 {
            return Ok(loss);
        }
        let s = &self.net.arch.ze_scale;
        let sup = crate::hybrid::normalize(&l.z_e, s)?
            .try_sub(&crate::hybrid::normalize(&Var::constant(z_e.clone()), s)?)?
            .square()
            .mean();
        loss.try_add(&sup.scale(w_sup))
    }

    fn ze_mse(&self, obs: &Observation, z_e: &Tensor) -> Result<f64> {
        Ok(scaled_mse(&self.encode(obs)?.0, z_e, &self.net.arch.ze_scale))
    }
}

impl Augmentable for HvaeModel {
    fn spec(&self) -> &SystemSpec {
        &self.net.spec
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// One posterior draw per picked pair.
    fn draw_za(&self, train: &Dataset, picks: &[usize], rng: &mut Rng) -> Result<Tensor> {
        let root = Rng::new(rng.next_u64());
        let steps = self.net.obs_steps();
        let parts = eval_chunks(picks.len(), 50)
            .par_iter()
            .enumerate()
            .map(|(ci, idx)| {
                let rows: Vec<usize> = idx.iter().map(|&i| picks[i]).collect();
                let obs = Observation::from_dataset(train, &rows, steps)?;
                let mut r = root.child(ci as u64);
                let enc = self.net.encode(&self.store.bind_frozen(), &obs, Noise::Draw(&mut r))?;
                Ok(enc.z_a.value().clone())
            })
            .collect::<Result<Vec<_>>>()?;
        concat_rows(&parts)
    }

    /// Decoder mean; no observation noise is added.
    fn decode(&self, x: &Tensor, z_e: &Tensor, z_a: &Tensor, n_obs: usize) -> Result<Tensor> {
        let p = self.store.bind_frozen();
        let states = crate::hybrid::hybrid_rollout(
            self.net.spec.system,
            &self.net.residual,
            &p,
            &Var::constant(x.clone()),
            &Var::constant(z_e.clone()),
            &Var::constant(z_a.clone()),
            0.0,
            n_obs,
            self.net.spec.dt,
            self.net.arch.substeps,
            OnDivergence::Continue,
        )?;
        stack_states(&states)
    }

    fn finetune_loss(&self, p: &Bound, obs: &Observation, z_e: &Tensor, w_sup: f64, rng: &mut Rng) -> Result<Var> {
        let enc = self.net.encode(p, obs, Noise::Draw(rng))?;
        let terms = self.net.terms_from(p, obs, &enc, rng)?;
        let loss = terms.objective(&self.cfg)?;
        if w_sup == 0.0 {
            return Ok(loss);
        }
        let target = Var::constant(z_e.clone()).try_div(&Var::constant(Tensor::vector(&self.net.arch.ze_scale)))?;
        let nll = crate::neural::gaussian_nll(&enc.ze_mu, &enc.ze_lv, &target)?.scale(1.0 / obs.batch() as f64);
        loss.try_add(&nll.scale(w_sup))
    }

    fn ze_mse(&self, obs: &Observation, z_e: &Tensor) -> Result<f64> {
        Ok(scaled_mse(self.encode_mean(obs)?.z_e.value(), z_e, &self.net.arch.ze_scale))
    }
}

/// A synthetic set plus how many draws were rejected.
#[derive(Clone, Debug)]
pub struct Augmented {
    pub data: Dataset,
    pub skipped: usize,
}

/// Sample `(x_o, y_o)` pairs, interaction latents and widened expert
/// parameters, and push them through the frozen decoder over the observed
/// window. `z_a` in the result holds the latents that were used.
pub fn build_augmented_dataset<M: Augmentable>(
    model: &M,
    train: &Dataset,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Augmented> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let spec = model.spec().clone();
    let support = cfg.support(&spec)?;
    let n = cfg.n_aug.unwrap_or(train.len());
    let steps = spec.steps_t1();
    let mut rng = Rng::new(seed);
    let picks: Vec<usize> = (0..n).map(|_| rng.below(train.len())).collect();
    let mut ze = Vec::with_capacity(n * spec.d_e());
    for _ in 0..n {
        ze.extend(support.sample(&mut rng));
    }
    let z_e = Tensor::new(vec![n, spec.d_e()], ze)?;
    let manifest = |count: usize, skipped: usize| {
        let mut sys = spec.clone();
        sys.t2 = sys.t1;
        serde_json::json!({
            "kind": "dataset",
            "split": "augmented",
            "count": count,
            "requested": n,
            "skipped": skipped,
            "seed": seed,
            "dt": spec.dt,
            "t0": 0.0,
            "t1": spec.t1,
            "t2": spec.t1,
            "ze_box": support,
            "system": sys,
        })
    };
    if n == 0 {
        let mut y_shape = vec![0, steps];
        y_shape.extend(spec.state_shape());
        let data = Dataset {
            manifest: manifest(0, 0),
            x: Tensor::zeros(&spec.batch_shape(0)),
            y: Tensor::zeros(&y_shape),
            z_e,
            z_a: Tensor::zeros(&[0, 1]),
        };
        return Ok(Augmented { data, skipped: 0 });
    }
    let z_a = model.draw_za(train, &picks, &mut rng)?;
    let x = train.x.select_rows(&picks);
    let parts = eval_chunks(n, 25)
        .par_iter()
        .map(|idx| model.decode(&x.select_rows(idx), &z_e.select_rows(idx), &z_a.select_rows(idx), steps))
        .collect::<Result<Vec<_>>>()?;
    let y = concat_rows(&parts)?;
    let keep: Vec<usize> =
        (0..n).filter(|&i| y.row(i).iter().all(|v| v.is_finite() && v.abs() < BLOWUP)).collect();
    let skipped = n - keep.len();
    if skipped as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(Error::TooManySkipped { skipped, requested: n });
    }
    let data = Dataset {
        manifest: manifest(keep.len(), skipped),
        x: x.select_rows(&keep),
        y: y.select_rows(&keep),
        z_e: z_e.select_rows(&keep),
        z_a: z_a.select_rows(&keep),
    };
    Ok(Augmented { data, skipped })
}

/// Expert-only rollouts matching an augmented set, `[N, T, S…]`.
pub fn expert_counterpart(spec: &SystemSpec, data: &Dataset, substeps: usize) -> Result<Tensor> {
    let states = expert_rollout(
        spec.system,
        &Var::constant(data.x.clone()),
        &Var::constant(data.z_e.clone()),
        0.0,
        data.steps(),
        spec.dt,
        substeps,
        OnDivergence::Continue,
    )?;
    stack_states(&states)
}

/// Train only encoder parameters on `aug`. The decoder hash is compared
/// before and after, and any gradient reaching a decoder parameter is an
/// error.
pub fn finetune_encoder<M: Augmentable>(
    model: &mut M,
    aug: &Dataset,
    cfg: &AugmentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if aug.is_empty() {
        return Err(Error::InvalidArgument("augmented set is empty".into()));
    }
    let before = model.decoder_hash();
    let steps = aug.steps();
    let encoder = |n: &str| n.starts_with(ENCODER);
    let mut adam = Adam::new(cfg.lr, 0.0);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let root = Rng::new(Rng::derive_seed(seed, epoch as u64));
        let (mut total, mut n) = (0.0, 0usize);
        for (bi, idx) in minibatches(aug.len(), cfg.batch, seed, epoch).into_iter().enumerate() {
            let obs = Observation::from_dataset(aug, &idx, steps)?;
            let z_e = aug.z_e.select_rows(&idx);
            let store = model.store();
            let p = store.bind(|id| encoder(store.name(id)));
            let loss = model.finetune_loss(&p, &obs, &z_e, cfg.w_sup, &mut root.child(bi as u64))?;
            let grads = masked_gradients(store, &p, &loss, encoder)?;
            drop(p);
            adam.step_store(model.store_mut(), &grads)?;
            total += loss.item();
            n += 1;
        }
        let stats = EpochStats { epoch, terms: [("finetune".to_string(), total / n as f64)].into() };
        on_epoch(&stats)?;
        history.push(stats);
    }
    if model.decoder_hash() != before {
        return Err(Error::FrozenParameter("decoder changed during fine-tuning".into()));
    }
    Ok(history)
}

/// Build the augmented set and fine-tune a copy of `model` on it.
pub fn augment_pipeline<M: Augmentable>(model: &M, train: &Dataset, cfg: &AugmentConfig, seed: u64) -> Result<(M, Augmented)> {
    let aug = build_augmented_dataset(model, train, cfg, Rng::derive_seed(seed, 0))?;
    let mut plus = model.clone();
    finetune_encoder(&mut plus, &aug.data, cfg, Rng::derive_seed(seed, 1), |_| Ok(()))?;
    Ok((plus, aug))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aphynity::LagrangianConfig;
    use crate::datasets::{generate_split, standard_splits};
    use crate::dynamics::System;
    use crate::hvae::{default_arch, HvaeConfig};
    use crate::hybrid::ArchConfig;

    fn spec() -> SystemSpec {
        let mut s = SystemSpec::new(System::Pendulum);
        s.t1 = 1.0;
        s
    }

    fn train(n: usize) -> Dataset {
        let mut s = standard_splits(&spec(), (n, 1, 1), 0)[0].clone();
        s.count = n;
        generate_split(&s).unwrap()
    }

    fn aph() -> AphynityModel {
        let arch = ArchConfig { hidden: 8, mlp_hidden: vec![8], ..ArchConfig::for_system(System::Pendulum) };
        AphynityModel::new(spec(), arch, &LagrangianConfig::default(), 0).unwrap()
    }

    #[test]
    fn zero_requested_samples_give_an_empty_set() {
        let cfg = AugmentConfig { n_aug: Some(0), ..AugmentConfig::default() };
        let a = build_augmented_dataset(&aph(), &train(4), &cfg, 0).unwrap();
        assert!(a.data.is_empty());
        assert_eq!(a.skipped, 0);
        assert!(build_augmented_dataset(&aph(), &train(4).head(0), &cfg, 0).is_err());
    }

    #[test]
    fn zero_residual_reproduces_expert_rollouts() {
        let mut m = aph();
        m.zero_residual();
        let cfg = AugmentConfig { n_aug: Some(12), ..AugmentConfig::default() };
        let a = build_augmented_dataset(&m, &train(5), &cfg, 3).unwrap();
        let expert = expert_counterpart(&spec(), &a.data, m.net.arch.substeps).unwrap();
        assert_eq!(a.data.y, expert);
    }

    #[test]
    fn sampled_expert_parameters_cover_the_support() {
        let cfg = AugmentConfig { n_aug: Some(1000), ..AugmentConfig::default() };
        let a = build_augmented_dataset(&aph(), &train(20), &cfg, 0).unwrap();
        let w = a.data.z_e.data();
        assert_eq!(w.len(), 1000);
        assert!(w.iter().all(|&v| (0.5..=3.5).contains(&v)));
        let mean = w.iter().sum::<f64>() / 1000.0;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
        // The pool only holds training encodings.
        let pool = aph().encode(&Observation::from_dataset(&train(20), &(0..20).collect::<Vec<_>>(), 10).unwrap()).unwrap().1;
        assert!(a.data.z_a.data().iter().all(|v| pool.data().contains(v)));
    }

    #[test]
    fn augmentation_is_deterministic() {
        let cfg = AugmentConfig { n_aug: Some(30), epochs: 2, ..AugmentConfig::default() };
        let t = train(10);
        let (p1, a1) = augment_pipeline(&aph(), &t, &cfg, 5).unwrap();
        let (p2, a2) = augment_pipeline(&aph(), &t, &cfg, 5).unwrap();
        assert_eq!(a1.data, a2.data);
        assert_eq!(p1.store, p2.store);
    }

    #[test]
    fn finetuning_leaves_the_decoder_bitwise_unchanged() {
        let m = aph();
        let t = train(10);
        let cfg = AugmentConfig { n_aug: Some(40), epochs: 3, ..AugmentConfig::default() };
        let (plus, _) = augment_pipeline(&m, &t, &cfg, 1).unwrap();
        for ((name, a), (_, b)) in m.store.iter().zip(plus.store.iter()) {
            if name.starts_with(DECODER) {
                assert_eq!(a, b, "{name}");
            }
        }
        assert_ne!(m.store, plus.store, "encoder should move");

        let h = HvaeModel::new(spec(), ArchConfig { hidden: 8, mlp_hidden: vec![8], ..default_arch(System::Pendulum) }, &HvaeConfig::default(), 0)
            .unwrap();
        let (hplus, _) = augment_pipeline(&h, &t, &cfg, 1).unwrap();
        assert_eq!(h.decoder_hash(), hplus.decoder_hash());
        assert_ne!(h.store, hplus.store);
    }

    #[test]
    fn finetuning_improves_expert_estimates_on_the_augmented_set() {
        let t = train(10);
        let m = aph();
        let cfg = AugmentConfig { n_aug: Some(60), epochs: 15, batch: 10, lr: 3e-3, ..AugmentConfig::default() };
        let (plus, aug) = augment_pipeline(&m, &t, &cfg, 2).unwrap();
        let obs = Observation::from_dataset(&aug.data, &(0..aug.data.len()).collect::<Vec<_>>(), 10).unwrap();
        let before = m.ze_mse(&obs, &aug.data.z_e).unwrap();
        let after = plus.ze_mse(&obs, &aug.data.z_e).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn runaway_decoder_aborts_generation() {
        let mut m = aph();
        if let crate::hybrid::Residual::Mlp(mlp) = &m.net.residual {
            let last = mlp.layers.last().unwrap();
            m.store.get_mut(last.bias).data_mut().fill(1e9);
        }
        let cfg = AugmentConfig { n_aug: Some(10), ..AugmentConfig::default() };
        let err = build_augmented_dataset(&m, &train(4), &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::TooManySkipped { skipped: 10, requested: 10 }), "{err}");
    }
}
