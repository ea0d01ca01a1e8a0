//! Generate the three benchmark systems, check the physics and persist a
//! split in the container format.

use hybrid_aug::datasets::{generate_split, standard_splits, Dataset};
use hybrid_aug::dynamics::{pendulum_energy, ParamBox, System, SystemSpec};

fn main() -> hybrid_aug::Result<()> {
    for system in [System::Pendulum, System::Rlc, System::ReactionDiffusion] {
        let spec = match system {
            System::ReactionDiffusion => SystemSpec::new(system).with_grid(16),
            _ => SystemSpec::new(system),
        };
        let [train, _, test] = standard_splits(&spec, (8, 1, 8), 0);
        let (train, test) = (generate_split(&train)?, generate_split(&test)?);
        println!(
            "{:<18} y {:?}  train z_e in {:?}..{:?}  test z_e in {:?}..{:?}",
            system.to_string(),
            train.y.shape(),
            spec.ze_train.lo,
            spec.ze_train.hi,
            spec.ze_test.lo,
            spec.ze_test.hi
        );
        assert!(test.y.is_finite());
    }

    // Without friction the pendulum conserves energy.
    let spec = SystemSpec::new(System::Pendulum);
    let mut split = standard_splits(&spec, (4, 1, 1), 1)[0].clone();
    split.za = ParamBox::interval(0.0, 0.0);
    let data = generate_split(&split)?;
    let w = data.z_e.row(0)[0];
    let e0 = pendulum_energy(data.x.row(0), w);
    let drift = data.y.row(0).chunks(2).map(|s| ((pendulum_energy(s, w) - e0) / e0).abs()).fold(0.0, f64::max);
    println!("undamped pendulum, ω₀ = {w:.3}: worst relative energy drift over 20 s = {drift:.2e}");

    let dir = std::env::temp_dir().join("hybrid-aug-simulate");
    std::fs::create_dir_all(&dir).map_err(|e| hybrid_aug::Error::InvalidArgument(e.to_string()))?;
    let path = dir.join("pendulum.hyad");
    data.save(&path)?;
    assert_eq!(Dataset::load(&path)?, data);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
