use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldtts::alignment::DurationTable;
use ldtts::config::RunConfig;
use ldtts::corpus::TokenSeq;
use ldtts::pipeline;

#[derive(Parser)]
#[command(name = "ldtts", about = "Latent diffusion TTS on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    GenData(Common),
    TrainVae(Common),
    TrainTts(Common),
    Synth {
        #[command(flatten)]
        common: Common,
        /// Comma-separated token ids, e.g. `0,3,5`.
        #[arg(long)]
        tokens: String,
        /// Comma-separated frames per token; the duration model is used when omitted.
        #[arg(long)]
        durations: Option<String>,
    },
    Eval(Common),
    Llr(Common),
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad list entry {p:?}: {e}")))
        .collect()
}

fn load(common: &Common) -> ldtts::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), String> {
    let err = |e: ldtts::Error| e.to_string();
    match cli.command {
        Command::GenData(c) => {
            let corpus = pipeline::cmd_gen_data(&load(&c).map_err(err)?).map_err(err)?;
            println!("corpus: {} train, {} test utterances", corpus.train.len(), corpus.test.len());
        }
        Command::TrainVae(c) => {
            let lt = pipeline::cmd_train_vae(&load(&c).map_err(err)?).map_err(err)?;
            println!("vae trained; L_T diagnostic {lt:.6}");
        }
        Command::TrainTts(c) => {
            let d = pipeline::cmd_train_tts(&load(&c).map_err(err)?).map_err(err)?;
            println!("tts trained on {} utterances", d.len());
        }
        Command::Synth {
            common,
            tokens,
            durations,
        } => {
            let cfg = load(&common).map_err(err)?;
            let tokens = TokenSeq(parse_list(&tokens)?);
            let durations = durations
                .map(|d| parse_list(&d).and_then(|v| DurationTable::new(v).map_err(|e| e.to_string())))
                .transpose()?;
            let syn = pipeline::cmd_synth(&cfg, &tokens, durations.as_ref()).map_err(err)?;
            println!("synthesized {} frames", syn.features.frames());
        }
        Command::Eval(c) => {
            let r = pipeline::cmd_eval(&load(&c).map_err(err)?).map_err(err)?;
            println!(
                "feature rms mean {:.4} median {:.4}; duration mae mean {:.4} median {:.4}",
                r.mean_feature_rms(),
                r.median_feature_rms(),
                r.mean_duration_mae(),
                r.median_duration_mae()
            );
        }
        Command::Llr(c) => {
            let curve = pipeline::cmd_llr(&load(&c).map_err(err)?).map_err(err)?;
            let (lo, hi) = curve.quartile_means();
            println!("llr bottom quartile {lo:?}, top quartile {hi:?}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
