//! Expert augmentation: sample widened expert parameters, decode them with
//! the frozen interaction model, fine-tune the encoder and compare the
//! base and augmented models on the shifted test split.

use hybrid_aug::aphynity::{AphynityModel, LagrangianConfig};
use hybrid_aug::augmentation::{build_augmented_dataset, finetune_encoder, AugmentConfig};
use hybrid_aug::datasets::{generate_split, standard_splits};
use hybrid_aug::dynamics::{System, SystemSpec};
use hybrid_aug::evaluation::evaluate_model;
use hybrid_aug::hybrid::ArchConfig;

fn main() -> hybrid_aug::Result<()> {
    let spec = SystemSpec::new(System::Pendulum);
    let [train, val, test] = standard_splits(&spec, (100, 50, 50), 0);
    let (train, val, test) = (generate_split(&train)?, generate_split(&val)?, generate_split(&test)?);

    let arch = ArchConfig { hidden: 32, mlp_hidden: vec![32, 32], ..ArchConfig::for_system(System::Pendulum) };
    let cfg = LagrangianConfig { epochs: 10, batch: 20, lr: 1e-3, ..LagrangianConfig::for_system(System::Pendulum) };
    let mut base = AphynityModel::new(spec.clone(), arch, &cfg, 0)?;
    base.train(&train, &cfg, 0, |_| Ok(()))?;

    let aug_cfg = AugmentConfig { n_aug: Some(200), epochs: 10, lr: 1e-3, batch: 20, ..AugmentConfig::default() };
    let aug = build_augmented_dataset(&base, &train, &aug_cfg, 1)?;
    let support = aug_cfg.support(&spec)?;
    println!("augmented {} trajectories with ω₀ in [{}, {}] ({} skipped)", aug.data.len(), support.lo[0], support.hi[0], aug.skipped);

    let mut plus = base.clone();
    finetune_encoder(&mut plus, &aug.data, &aug_cfg, 2, |s| {
        println!("fine-tune epoch {:>2}  loss {:.4}", s.epoch, s.terms["finetune"]);
        Ok(())
    })?;
    assert_eq!(plus.decoder_hash(), base.decoder_hash(), "the decoder stays frozen");

    for (name, data) in [("val", &val), ("shifted test", &test)] {
        let a = evaluate_model(&base, data, 0)?;
        let p = evaluate_model(&plus, data, 0)?;
        println!(
            "{name:<13} APHYNITY {:.3} ({:.1}%)   APHYNITY+ {:.3} ({:.1}%)",
            a.log_mse.value,
            a.ze_error.unwrap_or(f64::NAN),
            p.log_mse.value,
            p.ze_error.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
