//! Randomised invariants of the solver, the physics, the tape and the
//! persistence layer.

use hybrid_aug::container::Container;
use hybrid_aug::datasets::simulate;
use hybrid_aug::dynamics::{expert_field, pendulum_energy, System, SystemSpec};
use hybrid_aug::evaluation::log_mse;
use hybrid_aug::gradcheck::check_inputs;
use hybrid_aug::hybrid::minibatches;
use hybrid_aug::integrators::{rk4_rollout, OnDivergence, Schedule};
use hybrid_aug::tensor::{Rng, Tensor, Var};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn undamped_pendulum_conserves_energy(theta0 in -1.5f64..1.5, rate0 in -1.0f64..1.0, omega in 0.5f64..3.5) {
        let spec = SystemSpec::new(System::Pendulum);
        let x = Tensor::matrix(&[&[theta0, rate0]]).unwrap();
        let y = simulate(&spec, &x, &Tensor::matrix(&[&[omega]]).unwrap(), &Tensor::matrix(&[&[0.0]]).unwrap(), 200, 4).unwrap();
        let e0 = pendulum_energy(x.data(), omega);
        let drift = y.data().chunks(2).map(|s| ((pendulum_energy(s, omega) - e0) / e0.abs()).abs()).fold(0.0, f64::max);
        prop_assert!(drift < 1e-4, "drift {drift}");
    }

    #[test]
    fn pure_diffusion_conserves_mass(seed in 0u64..1000, a in 1e-3f64..4e-3, b in 1e-3f64..1e-2) {
        let spec = SystemSpec::new(System::ReactionDiffusion).with_grid(8);
        let y0 = Var::constant(Rng::new(seed).uniform(-1.0, 1.0, &spec.batch_shape(1)).unwrap());
        let z_e = Var::constant(Tensor::matrix(&[&[a, b]]).unwrap());
        let ys = rk4_rollout(
            |t, y| expert_field(System::ReactionDiffusion, t, y, &z_e),
            &y0,
            Schedule::new(0.0, 50, 0.1, 1).unwrap(),
            OnDivergence::Fail,
        )
        .unwrap();
        let mass = |t: &Tensor| -> Vec<f64> { t.data().chunks(64).map(|c| c.iter().sum()).collect() };
        let m0 = mass(y0.value());
        let m1 = mass(ys.last().unwrap().value());
        for (p, q) in m0.iter().zip(&m1) {
            prop_assert!((p - q).abs() < 1e-10 * (1.0 + p.abs()), "{p} vs {q}");
        }
    }

    #[test]
    fn rk4_halving_gains_a_factor_near_sixteen(rate in 0.5f64..2.0, y0 in 0.5f64..2.0) {
        let end = |substeps: usize| {
            let ys = rk4_rollout(
                |_, y| Ok(y.scale(-rate)),
                &Var::constant(Tensor::scalar(y0)),
                Schedule::new(0.0, 5, 0.2, substeps).unwrap(),
                OnDivergence::Fail,
            )
            .unwrap();
            ys.last().unwrap().item()
        };
        let exact = y0 * (-rate).exp();
        let factor = (end(1) - exact).abs() / (end(2) - exact).abs();
        prop_assert!((12.0..=20.0).contains(&factor), "factor {factor}");
    }

    #[test]
    fn composite_gradients_match_differences(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let x = rng.uniform(-1.0, 1.0, &[3, 4]).unwrap();
        let w = rng.uniform(-1.0, 1.0, &[4, 2]).unwrap();
        let b = rng.uniform(-1.0, 1.0, &[2]).unwrap();
        let r = check_inputs(
            |v| Ok(v[0].affine(&v[1], &v[2])?.tanh().softplus().try_mul(&v[0].slice(1, 0, 2)?.sin())?.mean()),
            &[x, w, b],
            1e-5,
            50,
        )
        .unwrap();
        prop_assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn container_round_trip_is_bitwise(values in prop::collection::vec(prop::num::f64::ANY, 1..40), tag in "[a-z]{1,8}") {
        let mut c = Container::new(serde_json::json!({ "tag": tag }));
        c.push("values", Tensor::vector(&values));
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        let got = back.require("values").unwrap().data();
        prop_assert_eq!(got.len(), values.len());
        for (g, v) in got.iter().zip(&values) {
            prop_assert_eq!(g.to_bits(), v.to_bits());
        }
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn log_mse_shifts_by_twice_log_scale(seed in 0u64..1000, c in 0.1f64..10.0) {
        let mut rng = Rng::new(seed);
        let target = rng.uniform(-1.0, 1.0, &[4, 5, 2]).unwrap();
        let err = rng.uniform(0.1, 1.0, &[4, 5, 2]).unwrap();
        let shifted = |k: f64| Tensor::new(target.shape().to_vec(), target.data().iter().zip(err.data()).map(|(t, e)| t + k * e).collect()).unwrap();
        let base = log_mse(&shifted(1.0), &target).unwrap().value;
        let scaled = log_mse(&shifted(c), &target).unwrap().value;
        prop_assert!((scaled - base - 2.0 * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn minibatches_partition_the_indices(n in 1usize..200, batch in 1usize..50, seed in 0u64..100, epoch in 0usize..10) {
        let mut seen: Vec<usize> = minibatches(n, batch, seed, epoch).into_iter().flatten().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
