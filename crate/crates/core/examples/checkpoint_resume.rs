//! Interrupt training, checkpoint, reload and resume: the result matches an
//! uninterrupted run bit for bit.

use hybrid_aug::aphynity::{AphynityModel, LagrangianConfig};
use hybrid_aug::checkpoint::HybridModel;
use hybrid_aug::datasets::{generate_split, standard_splits};
use hybrid_aug::dynamics::{System, SystemSpec};
use hybrid_aug::hybrid::ArchConfig;

fn main() -> hybrid_aug::Result<()> {
    let spec = SystemSpec::new(System::Pendulum);
    let train = generate_split(&standard_splits(&spec, (40, 1, 1), 0)[0])?;
    let arch = ArchConfig { hidden: 16, mlp_hidden: vec![16], ..ArchConfig::for_system(System::Pendulum) };
    let cfg = LagrangianConfig { epochs: 4, batch: 10, lr: 1e-3, ..LagrangianConfig::for_system(System::Pendulum) };

    let mut straight = AphynityModel::new(spec.clone(), arch.clone(), &cfg, 0)?;
    straight.train(&train, &cfg, 0, |_| Ok(()))?;

    let mut first = AphynityModel::new(spec, arch, &cfg, 0)?;
    first.train(&train, &LagrangianConfig { epochs: 2, ..cfg.clone() }, 0, |_| Ok(()))?;
    let path = std::env::temp_dir().join("hybrid-aug-resume.ckpt");
    HybridModel::Aphynity(first).save(&path, serde_json::json!({ "stopped_at": 2 }))?;

    let (loaded, manifest) = HybridModel::load(&path)?;
    println!("loaded {} checkpoint at epoch {}, notes {}", loaded.flavor().name(), loaded.epoch(), manifest["notes"]);
    let HybridModel::Aphynity(mut resumed) = loaded else { unreachable!("saved an APHYNITY model") };
    resumed.train(&train, &cfg, 0, |_| Ok(()))?;

    println!("identical parameters: {}", resumed.store == straight.store);
    println!("identical loss history: {}", resumed.state.history == straight.state.history);
    println!("decoder hash {}", resumed.decoder_hash());
    Ok(())
}
