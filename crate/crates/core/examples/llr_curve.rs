//! Conditional versus unconditional likelihood ratio across diffusion steps.
//! Trains both models on the given config first if they are missing.

use ldtts::config::RunConfig;
use ldtts::pipeline::*;

fn main() -> ldtts::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let a = Artifacts::new(&cfg.out_dir);
    if !a.tts().is_file() {
        cmd_gen_data(&cfg)?;
        cmd_train_vae(&cfg)?;
        cmd_train_tts(&cfg)?;
    }
    let curve = cmd_llr(&cfg)?;
    for p in curve.points.iter().filter(|p| p.t == 1 || p.t % 10 == 0) {
        println!("t={:>3} ratio {:.3} +- {:.3}", p.t, p.ratio.unwrap_or(f64::NAN), p.stderr);
    }
    let (lo, hi) = curve.quartile_means();
    println!("bottom quartile {:.3}, top quartile {:.3}", lo.unwrap_or(f64::NAN), hi.unwrap_or(f64::NAN));
    Ok(())
}
