//! Runs every stage from a config file, e.g.
//! `cargo run --release --example pipeline -- crates/core/examples/configs/quick.json`.

use ldtts::config::RunConfig;
use ldtts::pipeline::*;

fn main() -> ldtts::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let corpus = cmd_gen_data(&cfg)?;
    println!("corpus {} train / {} test", corpus.train.len(), corpus.test.len());
    println!("vae done, prior mismatch {:.2e}", cmd_train_vae(&cfg)?);
    cmd_train_tts(&cfg)?;
    let syn = cmd_synth(&cfg, &corpus.test[0].tokens, None)?;
    println!("synthesized {} frames for test utterance 0", syn.features.frames());
    let r = cmd_eval(&cfg)?;
    println!("held-out feature rms {:.4}, duration mae {:.3}", r.mean_feature_rms(), r.mean_duration_mae());
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
