//! Function approximators built on [`Var`]: dense layers, MLPs, a gated
//! recurrent encoder, strided CNN encoders and Gaussian heads.
//!
//! Layers own [`ParamId`]s into a shared [`ParamStore`]; a forward pass takes
//! the store lifted onto the graph as a [`Bound`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Rng, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn uniform_init(rng: &mut Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    rng.uniform(-bound, bound, shape).expect("positive fan-in")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Selu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Var) -> Var {
        match self {
            Activation::Relu => x.relu(),
            Activation::Selu => x.selu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{name}.w"), uniform_init(rng, fan_in, &[fan_in, fan_out]));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        x.affine(p.get(self.weight), p.get(self.bias))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }

    /// Set the bias so that `softplus(bias) = target` (elementwise).
    pub fn center_softplus(&self, store: &mut ParamStore, target: &[f64]) {
        let b = store.get_mut(self.bias).data_mut();
        for (b, &t) in b.iter_mut().zip(target) {
            *b = if t > 30.0 { t } else { t.exp_m1().ln() };
        }
    }
}

/// Affine–activation chain with a linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, hidden…, out]`.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        if x.value().ndim() != 2 || x.shape()[1] != self.in_width() {
            return Err(Error::shape("mlp_forward", &[x.shape(), &[self.in_width()]]));
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, &h)?;
            if i < last {
                h = self.activation.apply(&h);
            }
        }
        Ok(h)
    }

    /// Zero the final layer so the network starts as the zero function.
    pub fn zero_last(&self, store: &mut ParamStore) {
        self.layers.last().expect("non-empty").zero(store);
    }
}

/// Gated recurrent cell; reads a sequence and returns the final hidden state.
#[derive(Clone, Debug)]
pub struct Gru {
    input: Linear,
    hidden: Linear,
    pub width: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, width: usize, rng: &mut Rng) -> Self {
        let input = Linear::new(store, &format!("{name}.x"), fan_in, 3 * width, rng);
        let hidden = Linear::new(store, &format!("{name}.h"), width, 3 * width, rng);
        Gru { input, hidden, width }
    }

    pub fn in_width(&self) -> usize {
        self.input.fan_in
    }

    pub fn step(&self, p: &Bound, x: &Var, h: &Var) -> Result<Var> {
        let gx = self.input.forward(p, x)?;
        let gh = self.hidden.forward(p, h)?;
        let w = self.width;
        let r = gx.slice(1, 0, w)?.try_add(&gh.slice(1, 0, w)?)?.sigmoid();
        let z = gx.slice(1, w, w)?.try_add(&gh.slice(1, w, w)?)?.sigmoid();
        let n = gx.slice(1, 2 * w, w)?.try_add(&r.try_mul(&gh.slice(1, 2 * w, w)?)?)?.tanh();
        // h' = n + z ⊙ (h − n)
        n.try_add(&z.try_mul(&h.try_sub(&n)?)?)
    }

    /// Each element of `seq` is a `[B, in]` step.
    pub fn encode(&self, p: &Bound, seq: &[Var]) -> Result<Var> {
        let first = seq.first().ok_or_else(|| Error::InvalidArgument("cannot encode an empty sequence".into()))?;
        let mut h = Var::constant(Tensor::zeros(&[first.shape()[0], self.width]));
        for x in seq {
            h = self.step(p, x, &h)?;
        }
        Ok(h)
    }
}

/// One 3×3 convolution.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{name}.w"), uniform_init(rng, c_in * 9, &[c_out, c_in, 3, 3]));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv { weight, bias, stride }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        x.conv2d(p.get(self.weight), p.get(self.bias), self.stride, 1)
    }
}

/// Stride-2 convolution blocks with ReLU, flattened to `[B, features]`.
#[derive(Clone, Debug)]
pub struct GridEncoder {
    blocks: Vec<Conv>,
    pub grid: usize,
    pub features: usize,
}

impl GridEncoder {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, channels: &[usize], grid: usize, rng: &mut Rng) -> Self {
        let mut blocks = Vec::new();
        let mut c = c_in;
        let mut side = grid;
        for (i, &co) in channels.iter().enumerate() {
            blocks.push(Conv::new(store, &format!("{name}.{i}"), c, co, 2, rng));
            c = co;
            side = side.div_ceil(2);
        }
        GridEncoder { blocks, grid, features: c * side * side }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(p, &h)?.relu();
        }
        let n = h.shape()[0];
        h.reshape(&[n, self.features])
    }
}

/// Same-resolution convolution stack mapping `[B, c_in, G, G]` to
/// `[B, c_out, G, G]`; ReLU between layers, linear output.
#[derive(Clone, Debug)]
pub struct ConvNet {
    layers: Vec<Conv>,
}

impl ConvNet {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv::new(store, &format!("{name}.{i}"), w[0], w[1], 1, rng))
            .collect();
        ConvNet { layers }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn zero_last(&self, store: &mut ParamStore) {
        let l = self.layers.last().expect("non-empty");
        store.get_mut(l.weight).data_mut().fill(0.0);
        store.get_mut(l.bias).data_mut().fill(0.0);
    }
}

/// Broadcast `[B, d]` conditioning vectors to `[B, d, G, G]` planes.
pub fn broadcast_planes(z: &Var, grid: usize) -> Result<Var> {
    let (b, d) = (z.shape()[0], z.shape()[1]);
    z.reshape(&[b, d, 1, 1])?.try_add(&Var::constant(Tensor::zeros(&[b, d, grid, grid])))
}

/// Positivity transform for a head's mean: `scale ⊙ softplus(raw)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Positive {
    pub scale: Vec<f64>,
}

/// Affine maps to a mean and a clamped log-variance.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    mean: Linear,
    log_var: Linear,
    pub positive: Option<Positive>,
}

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

impl GaussianHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        dim: usize,
        positive: Option<Positive>,
        rng: &mut Rng,
    ) -> Self {
        let mean = Linear::new(store, &format!("{name}.mu"), fan_in, dim, rng);
        let log_var = Linear::new(store, &format!("{name}.logvar"), fan_in, dim, rng);
        GaussianHead { mean, log_var, positive }
    }

    pub fn dim(&self) -> usize {
        self.mean.fan_out
    }

    /// Mean only; the variance branch is not evaluated.
    pub fn mean(&self, p: &Bound, h: &Var) -> Result<Var> {
        let raw = self.mean.forward(p, h)?;
        match &self.positive {
            Some(pos) => raw.softplus().try_mul(&Var::constant(Tensor::vector(&pos.scale))),
            None => Ok(raw),
        }
    }

    /// `(μ, log σ²)` with `log σ²` clamped to `[−10, 10]`.
    pub fn forward(&self, p: &Bound, h: &Var) -> Result<(Var, Var)> {
        let mu = self.mean(p, h)?;
        let lv = self.log_var.forward(p, h)?.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        Ok((mu, lv))
    }

    pub fn mean_layer(&self) -> &Linear {
        &self.mean
    }

    pub fn log_var_layer(&self) -> &Linear {
        &self.log_var
    }
}

/// `½ Σ [(t − μ)²/σ² + log σ² + log 2π]` over all coordinates.
pub fn gaussian_nll(mu: &Var, log_var: &Var, target: &Var) -> Result<Var> {
    let sq = target.try_sub(mu)?.square();
    let inv_var = log_var.neg().exp();
    let term = sq.try_mul(&inv_var)?.try_add(log_var)?.add_scalar(LN_2PI);
    let n = mu.value().numel().max(target.value().numel()) as f64;
    // The constant is added per coordinate of the broadcast result.
    debug_assert_eq!(term.value().numel() as f64, n);
    Ok(term.sum().scale(0.5))
}

/// Reparameterised draw `μ + exp(½ log σ²) ⊙ ε`.
pub fn gaussian_sample(mu: &Var, log_var: &Var, eps: &Tensor) -> Result<Var> {
    log_var.scale(0.5).exp().try_mul(&Var::constant(eps.clone()))?.try_add(mu)
}

/// Standard-normal noise shaped like `like`.
pub fn noise_like(like: &Var, rng: &mut Rng) -> Tensor {
    rng.normal(0.0, 1.0, like.shape()).expect("unit std")
}

/// `KL(N(μ, σ²) ‖ N(m, s²))` summed over coordinates; `m` and `s²` broadcast.
pub fn kl_normal(mu: &Var, log_var: &Var, prior_mean: &Var, prior_var: &Var) -> Result<Var> {
    let var_ratio = log_var.exp().try_div(prior_var)?;
    let mean_term = mu.try_sub(prior_mean)?.square().try_div(prior_var)?;
    let log_ratio = prior_var.ln().try_sub(log_var)?;
    Ok(var_ratio.try_add(&mean_term)?.try_add(&log_ratio)?.add_scalar(-1.0).sum().scale(0.5))
}

/// `KL(N(μ, σ²) ‖ N(0, I))`.
pub fn kl_standard(mu: &Var, log_var: &Var) -> Result<Var> {
    kl_normal(mu, log_var, &Var::scalar(0.0), &Var::scalar(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, check_store};

    fn c(t: Tensor) -> Var {
        Var::constant(t)
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", &[3, 8, 2], Activation::Relu, &mut Rng::new(0));
        mlp.zero_last(&mut s);
        let y = mlp.forward(&s.bind_frozen(), &c(Tensor::matrix(&[&[1.0, -2.0, 3.0]]).unwrap())).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", &[2, 2], Activation::Relu, &mut Rng::new(0));
        *s.get_mut(mlp.layers[0].weight) = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let x = Tensor::matrix(&[&[0.25, -4.0]]).unwrap();
        let y = mlp.forward(&s.bind_frozen(), &c(x.clone())).unwrap();
        assert_eq!(y.value(), &x);
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", &[3, 2], Activation::Relu, &mut Rng::new(0));
        assert!(mlp.forward(&s.bind_frozen(), &c(Tensor::zeros(&[1, 2]))).is_err());
    }

    #[test]
    fn mlp_golden_output() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", &[3, 4, 2], Activation::Relu, &mut Rng::new(0));
        let y = mlp.forward(&s.bind_frozen(), &c(Tensor::matrix(&[&[0.5, -1.0, 2.0]]).unwrap())).unwrap();
        let golden = [MLP_GOLDEN[0], MLP_GOLDEN[1]];
        for (a, b) in y.value().data().iter().zip(golden) {
            assert!((a - b).abs() < 1e-14, "{:?}", y.value().data());
        }
    }

    // Cross-checked against a NumPy re-implementation using the same weights.
    const MLP_GOLDEN: [f64; 2] = [-0.181_413_706_269_433_7, -0.099_871_293_825_545_05];

    #[test]
    fn gru_zero_weights_give_zero_features() {
        let mut s = ParamStore::new();
        let gru = Gru::new(&mut s, "g", 2, 5, &mut Rng::new(0));
        for id in s.ids().collect::<Vec<_>>() {
            s.get_mut(id).data_mut().fill(0.0);
        }
        let seq = vec![c(Tensor::matrix(&[&[1.0, 2.0]]).unwrap()); 3];
        let h = gru.encode(&s.bind_frozen(), &seq).unwrap();
        assert!(h.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_consumes_every_step() {
        let mut s = ParamStore::new();
        let gru = Gru::new(&mut s, "g", 2, 5, &mut Rng::new(0));
        let x = c(Tensor::matrix(&[&[1.0, 2.0]]).unwrap());
        let p = s.bind_frozen();
        let one = gru.encode(&p, std::slice::from_ref(&x)).unwrap();
        let two = gru.encode(&p, &[x.clone(), x]).unwrap();
        assert!(one.value().max_abs_diff(two.value()) > 1e-6);
        assert!(gru.encode(&p, &[]).is_err());
    }

    #[test]
    fn gru_golden_features() {
        let mut s = ParamStore::new();
        let gru = Gru::new(&mut s, "g", 2, 3, &mut Rng::new(0));
        let seq: Vec<Var> = (0..4).map(|k| c(Tensor::matrix(&[&[0.1 * k as f64, 1.0 - 0.2 * k as f64]]).unwrap())).collect();
        let h = gru.encode(&s.bind_frozen(), &seq).unwrap();
        for (a, b) in h.value().data().iter().zip(GRU_GOLDEN) {
            assert!((a - b).abs() < 1e-14, "{:?}", h.value().data());
        }
    }

    const GRU_GOLDEN: [f64; 3] = [0.282_073_321_197_198_63, -0.109_610_722_821_304_1, 0.128_064_644_765_860_16];

    #[test]
    fn nll_and_sampling_identities() {
        let mu = c(Tensor::vector(&[0.3]));
        let lv = c(Tensor::vector(&[0.0]));
        let nll = gaussian_nll(&mu, &lv, &mu).unwrap().item();
        assert!((nll - 0.5 * LN_2PI).abs() < 1e-15);
        assert!((0.5 * LN_2PI - 0.9189).abs() < 1e-4);
        let s = gaussian_sample(&mu, &lv, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.item(), 0.3);
        let m = Var::param(Tensor::vector(&[0.0]));
        let g = gaussian_nll(&m, &lv, &c(Tensor::vector(&[1.0]))).unwrap().backward().unwrap();
        assert_eq!(g.get(&m).item(), -1.0);
    }

    #[test]
    fn kl_zero_at_prior_and_nonnegative() {
        let mu = c(Tensor::vector(&[0.0, 0.0]));
        let lv = c(Tensor::vector(&[0.0, 0.0]));
        assert_eq!(kl_standard(&mu, &lv).unwrap().item(), 0.0);
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let mu = c(rng.normal(0.0, 2.0, &[3]).unwrap());
            let lv = c(rng.normal(0.0, 2.0, &[3]).unwrap());
            let pm = c(rng.normal(0.0, 1.0, &[3]).unwrap());
            let pv = c(rng.uniform(0.1, 3.0, &[3]).unwrap());
            assert!(kl_normal(&mu, &lv, &pm, &pv).unwrap().item() >= -1e-12);
        }
    }

    #[test]
    fn positive_head_is_positive_and_ln2_at_zero() {
        let mut s = ParamStore::new();
        let head = GaussianHead::new(&mut s, "h", 4, 2, Some(Positive { scale: vec![1.0, 1.0] }), &mut Rng::new(0));
        let mut rng = Rng::new(1);
        let x = c(rng.normal(0.0, 30.0, &[64, 4]).unwrap());
        let (mu, lv) = head.forward(&s.bind_frozen(), &x).unwrap();
        assert!(mu.value().data().iter().all(|&v| v > 0.0));
        assert!(lv.value().data().iter().all(|&v| (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&v)));
        head.mean_layer().zero(&mut s);
        let mu = head.mean(&s.bind_frozen(), &x).unwrap();
        assert!(mu.value().data().iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut s = ParamStore::new();
        let mut rng = Rng::new(2);
        let gru = Gru::new(&mut s, "g", 2, 6, &mut rng);
        let head = GaussianHead::new(&mut s, "h", 6, 2, Some(Positive { scale: vec![1.0, 2.0] }), &mut rng);
        let mlp = Mlp::new(&mut s, "m", &[4, 7, 2], Activation::Selu, &mut rng);
        let seq: Vec<Var> = (0..5).map(|_| c(rng.normal(0.0, 1.0, &[3, 2]).unwrap())).collect();
        let eps = rng.normal(0.0, 1.0, &[3, 2]).unwrap();
        let target = c(rng.normal(0.0, 1.0, &[3, 2]).unwrap());
        let r = check_store(
            &s,
            |p| {
                let h = gru.encode(p, &seq)?;
                let (mu, lv) = head.forward(p, &h)?;
                let z = gaussian_sample(&mu, &lv, &eps)?;
                let out = mlp.forward(p, &Var::concat(&[z, seq[0].clone()], 1)?)?;
                gaussian_nll(&out, &Var::scalar(0.0), &target)?.try_add(&kl_standard(&mu, &lv)?)
            },
            1e-5,
            1000,
        )
        .unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let mut s = ParamStore::new();
        let mut rng = Rng::new(3);
        let enc = GridEncoder::new(&mut s, "e", 3, &[4, 5], 6, &mut rng);
        assert_eq!(enc.features, 5 * 2 * 2);
        let net = ConvNet::new(&mut s, "n", &[3, 4, 2], &mut rng);
        let x = rng.normal(0.0, 1.0, &[2, 2, 6, 6]).unwrap();
        let z = rng.normal(0.0, 1.0, &[2, 1]).unwrap();
        let r = check_store(
            &s,
            |p| {
                let zin = broadcast_planes(&c(z.clone()), 6)?;
                let xin = Var::concat(&[c(x.clone()), zin], 1)?;
                enc.forward(p, &xin)?.square().sum().try_add(&net.forward(p, &xin)?.sin().sum())
            },
            1e-5,
            1000,
        )
        .unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        let xin = rng.normal(0.0, 1.0, &[2, 3, 6, 6]).unwrap();
        let r = check_inputs(|v| Ok(net.forward(&s.bind_frozen(), &v[0])?.square().sum()), &[xin], 1e-5, 200).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
}
