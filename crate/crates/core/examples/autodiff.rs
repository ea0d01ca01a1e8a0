//! Reverse-mode gradients on the tape, checked against central differences.

use hybrid_aug::gradcheck::check_inputs;
use hybrid_aug::tensor::{Tensor, Var};

fn main() -> hybrid_aug::Result<()> {
    let x = Var::param(Tensor::matrix(&[&[0.5, -1.0], &[2.0, 0.3]])?);
    let w = Var::param(Tensor::matrix(&[&[1.0, 0.2, -0.4], &[0.7, -1.1, 0.9]])?);
    let b = Var::param(Tensor::vector(&[0.1, 0.0, -0.2]));

    // loss = mean(tanh(x·w + b)²)
    let loss = x.affine(&w, &b)?.tanh().square().mean();
    let grads = loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dw = {:?}", grads.get(&w).data());
    println!("dL/db = {:?}", grads.get(&b).data());

    let inputs = [x.value().clone(), w.value().clone(), b.value().clone()];
    let r = check_inputs(|v| Ok(v[0].affine(&v[1], &v[2])?.tanh().square().mean()), &inputs, 1e-5, 100)?;
    println!("finite-difference check: max relative error {:.2e} over {} coordinates", r.max_rel_err, r.checked);
    Ok(())
}
