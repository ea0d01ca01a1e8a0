//! Central finite-difference checks of reverse-mode gradients.

use crate::error::Result;
use crate::tensor::{Bound, ParamStore, Tensor, Var};

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over the checked inputs.
    pub max_rel_err: f64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`, the error measure used by every check.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied())).max(1e-10);
    diff / scale
}

/// Compare the gradient of `f` with respect to each of `inputs` against
/// central differences with step `h`. At most `max_coords` coordinates per
/// input are perturbed (evenly strided) to bound cost on large tensors.
pub fn check_inputs<F>(f: F, inputs: &[Tensor], h: f64, max_coords: usize) -> Result<GradCheck>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let grads = f(&vars)?.backward()?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic_full = grads.get(&vars[i]);
        let coords = strided(x.numel(), max_coords);
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
                let mut t = inputs[i].clone();
                t.data_mut()[c] += delta;
                shifted[i] = Var::constant(t);
                Ok(f(&shifted)?.item())
            };
            numeric.push((eval(h)? - eval(-h)?) / (2.0 * h));
            analytic.push(analytic_full.data()[c]);
        }
        checked += coords.len();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { max_rel_err: worst, checked })
}

/// Same check over the trainable entries of a parameter store, all
/// parameters compared jointly as one vector.
pub fn check_store<F>(store: &ParamStore, f: F, h: f64, max_coords: usize) -> Result<GradCheck>
where
    F: Fn(&Bound) -> Result<Var>,
{
    let bound = store.bind(|_| true);
    let grads = bound.gradients(&f(&bound)?.backward()?);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).numel();
        for c in strided(n, max_coords) {
            let base = store.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = base + h;
            let up = f(&work.bind_frozen())?.item();
            work.get_mut(id).data_mut()[c] = base - h;
            let down = f(&work.bind_frozen())?.item();
            work.get_mut(id).data_mut()[c] = base;
            numeric.push((up - down) / (2.0 * h));
            analytic.push(grads[id.0].as_ref().map_or(0.0, |g| g.data()[c]));
        }
    }
    Ok(GradCheck { max_rel_err: relative_error(&analytic, &numeric), checked: numeric.len() })
}

fn strided(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::vector(&[0.3, -0.7, 1.1]);
        let ok = check_inputs(|v| Ok(v[0].sin().sum()), std::slice::from_ref(&x), 1e-5, 10).unwrap();
        assert!(ok.passes(1e-8), "{ok:?}");
        // A deliberately wrong derivative must be caught.
        let bad = check_inputs(|v| Ok(v[0].map_elementwise(f64::sin, |x, _| 1.1 * x.cos()).sum()), &[x], 1e-5, 10)
            .unwrap();
        assert!(!bad.passes(1e-3));
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let a = relative_error(&[1.0, 0.0], &[1.1, 0.0]);
        let b = relative_error(&[1e3, 0.0], &[1.1e3, 0.0]);
        assert!((a - b).abs() < 1e-12);
    }
}
