//! Train the hybrid VAE on a small pendulum set and report its ELBO terms
//! and grounding regularizers.

use hybrid_aug::datasets::{generate_split, standard_splits};
use hybrid_aug::dynamics::{System, SystemSpec};
use hybrid_aug::evaluation::evaluate_model;
use hybrid_aug::hvae::{default_arch, HvaeConfig, HvaeModel};
use hybrid_aug::hybrid::ArchConfig;

fn main() -> hybrid_aug::Result<()> {
    let spec = SystemSpec::new(System::Pendulum);
    let [train, val, test] = standard_splits(&spec, (100, 50, 50), 0);
    let (train, val, test) = (generate_split(&train)?, generate_split(&val)?, generate_split(&test)?);

    let arch = ArchConfig { hidden: 32, mlp_hidden: vec![32, 32], ..default_arch(System::Pendulum) };
    let cfg = HvaeConfig { epochs: 15, batch: 20, lr: 1e-3, alpha: 10.0, beta: 10.0, ..HvaeConfig::for_system(System::Pendulum) };
    let mut model = HvaeModel::new(spec, arch, &cfg, 0)?;
    model.train(&train, &cfg, 0, |m| {
        let t = &m.state.history.last().expect("one epoch done").terms;
        println!(
            "epoch {:>2}  -ELBO {:>9.3}  KL(z_a) {:.3}  KL(z_e) {:.3}  R_PPC {:.4}  R_DA1 {:.4}  R_DA2 {:.3}",
            m.state.epoch - 1,
            -t["elbo"],
            t["kl_a"],
            t["kl_e"],
            t["r_ppc"],
            t["r_da1"],
            t["r_da2"]
        );
        Ok(())
    })?;
    for (name, data) in [("val", &val), ("shifted test", &test)] {
        let m = evaluate_model(&model, data, 0)?;
        println!("{name:<13} log-MSE {:.3}, ω₀ error {:.1}%", m.log_mse.value, m.ze_error.unwrap_or(f64::NAN));
    }
    Ok(())
}
