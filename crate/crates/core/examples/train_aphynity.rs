//! Train an APHYNITY hybrid model on a small pendulum set and evaluate it
//! on the in-distribution and shifted splits.

use hybrid_aug::aphynity::{AphynityModel, LagrangianConfig};
use hybrid_aug::datasets::{generate_split, standard_splits};
use hybrid_aug::dynamics::{System, SystemSpec};
use hybrid_aug::evaluation::{evaluate_model, MeanBaseline};
use hybrid_aug::hybrid::ArchConfig;

fn main() -> hybrid_aug::Result<()> {
    let spec = SystemSpec::new(System::Pendulum);
    let [train, val, test] = standard_splits(&spec, (100, 50, 50), 0);
    let (train, val, test) = (generate_split(&train)?, generate_split(&val)?, generate_split(&test)?);

    let arch = ArchConfig { hidden: 32, mlp_hidden: vec![32, 32], ..ArchConfig::for_system(System::Pendulum) };
    let cfg = LagrangianConfig { epochs: 10, batch: 20, lr: 1e-3, ..LagrangianConfig::for_system(System::Pendulum) };
    let mut model = AphynityModel::new(spec, arch, &cfg, 0)?;
    model.train(&train, &cfg, 0, |m| {
        let h = m.state.history.last().expect("one epoch done");
        println!("epoch {:>2}  L_traj {:.5}  ‖F_a‖² {:.5}  λ {:.2}", h.epoch, h.terms["l_traj"], h.terms["l_res"], m.state.lambda);
        Ok(())
    })?;

    let mean = MeanBaseline::fit(&train)?;
    for (name, data) in [("val", &val), ("shifted test", &test)] {
        let m = evaluate_model(&model, data, 0)?;
        let b = evaluate_model(&mean, data, 0)?;
        println!(
            "{name:<13} log-MSE {:.3} (training mean {:.3}), ω₀ error {:.1}%",
            m.log_mse.value,
            b.log_mse.value,
            m.ze_error.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
