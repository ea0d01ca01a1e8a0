//! The fast correctness suite behind `hybrid-aug selfcheck`.

fn main() -> hybrid_aug::Result<()> {
    let checks = hybrid_aug::selfcheck::run_all(0.0)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} passed, {failed} failed", checks.len() - failed);
    Ok(())
}
