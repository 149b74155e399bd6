//! Stage-wise commands over an output directory.
//!
//! Artifacts, all under `out_dir`:
//!
//! | file | written by |
//! |---|---|
//! | `config.json`, `corpus.json` | gen-data |
//! | `vae.json`, `vae_loss.csv` | train-vae |
//! | `tts.json`, `tts_loss.csv`, `alignment.csv` | train-tts |
//! | `synth.csv` | synth |
//! | `eval.csv` | eval |
//! | `tts_uncond.json`, `llr.csv` | llr |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::acoustic::Objective;
use crate::alignment::{alignments_csv, DurationTable};
use crate::analysis::{evaluate_synthesis, llr_curve, lt_diagnostic_for, EvalReport, LlrCurve, LlrModels};
use crate::config::RunConfig;
use crate::corpus::{Corpus, TokenSeq};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{substream, ANALYSIS_STREAM, SAMPLING_STREAM, TTS_STREAM, UNCOND_STREAM, VAE_STREAM};
use crate::schedule::DiffusionSchedule;
use crate::system::{train_tts, Synthesis, TtsModel, TtsSystem};
use crate::vae::{train_vae, Vae};

/// File locations inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }
    pub fn corpus(&self) -> PathBuf {
        self.path("corpus.json")
    }
    pub fn vae(&self) -> PathBuf {
        self.path("vae.json")
    }
    pub fn tts(&self) -> PathBuf {
        self.path("tts.json")
    }
    pub fn tts_uncond(&self) -> PathBuf {
        self.path("tts_uncond.json")
    }

    fn require(&self, path: PathBuf, producer: &str) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::StageOrder(format!("{} not found; run {producer} first", path.display())))
        }
    }

    fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    out
}

/// Everything loaded from earlier stages.
struct Loaded {
    corpus: Corpus,
    schedule: DiffusionSchedule,
    vae: Vae,
    vae_params: ParamStore,
    model: TtsModel,
    params: ParamStore,
}

fn load_trained(config: &RunConfig, art: &Artifacts) -> Result<Loaded> {
    let corpus = Corpus::load(art.require(art.corpus(), "gen-data")?)?;
    let vae_params = ParamStore::load(art.require(art.vae(), "train-vae")?)?;
    let params = ParamStore::load(art.require(art.tts(), "train-tts")?)?;
    Ok(Loaded {
        corpus,
        schedule: config.schedule.build()?,
        vae: Vae::new(config.vae_dims),
        vae_params,
        model: TtsModel::new(config.model, config.tts.parameterization),
        params,
    })
}

impl Loaded {
    fn system<'a>(&'a self, config: &RunConfig) -> TtsSystem<'a> {
        TtsSystem {
            vae: &self.vae,
            vae_params: &self.vae_params,
            model: &self.model,
            params: &self.params,
            schedule: &self.schedule,
            objective: config.tts.objective,
            final_step: config.final_step,
        }
    }
}

/// Generates the synthetic corpus.
pub fn cmd_gen_data(config: &RunConfig) -> Result<Corpus> {
    let art = Artifacts::new(&config.out_dir);
    art.ensure_dir()?;
    let corpus = config.generate_corpus()?;
    write(&art.config(), &config.to_json())?;
    corpus.save(art.corpus())?;
    Ok(corpus)
}

/// Trains the VAE; returns the final-stage diagnostic value on the training split.
pub fn cmd_train_vae(config: &RunConfig) -> Result<f64> {
    let art = Artifacts::new(&config.out_dir);
    let corpus = Corpus::load(art.require(art.corpus(), "gen-data")?)?;
    let vae = Vae::new(config.vae_dims);
    let mut rng = substream(config.seed, VAE_STREAM);
    let trained = train_vae(&vae, &corpus.train, &config.vae, &mut rng)?;
    trained.params.save(art.vae())?;
    write(&art.path("vae_loss.csv"), &loss_csv(&trained.history))?;
    lt_diagnostic_for(&vae, &trained.params, &corpus.train, &config.schedule.build()?)
}

/// Trains the acoustic, alignment and duration models with the VAE fixed.
pub fn cmd_train_tts(config: &RunConfig) -> Result<Vec<DurationTable>> {
    let art = Artifacts::new(&config.out_dir);
    let vae_path = art.require(art.vae(), "train-vae")?;
    let corpus = Corpus::load(art.require(art.corpus(), "gen-data")?)?;
    let vae = Vae::new(config.vae_dims);
    let vae_params = ParamStore::load(vae_path)?;
    let schedule = config.schedule.build()?;
    let model = TtsModel::new(config.model, config.tts.parameterization);
    let mut rng = substream(config.seed, TTS_STREAM);
    let trained = train_tts(&model, &vae, &vae_params, &corpus.train, &schedule, &config.tts, true, &mut rng)?;
    trained.params.save(art.tts())?;
    write(&art.path("tts_loss.csv"), &loss_csv(&trained.acoustic_history))?;
    let rows = corpus.train.iter().map(|u| u.id).zip(&trained.durations);
    write(&art.path("alignment.csv"), &alignments_csv(rows))?;
    Ok(trained.durations)
}

/// Synthesizes one token sequence and writes `synth.csv`.
pub fn cmd_synth(config: &RunConfig, tokens: &TokenSeq, durations: Option<&DurationTable>) -> Result<Synthesis> {
    let art = Artifacts::new(&config.out_dir);
    let loaded = load_trained(config, &art)?;
    let tokens = TokenSeq::new(tokens.0.clone(), config.corpus.alphabet_size)?;
    let mut rng = substream(config.seed, SAMPLING_STREAM);
    let syn = loaded.system(config).synthesize(&tokens, durations, &mut rng)?;
    let mut out = String::from("frame,token_index");
    for j in 0..syn.features.dim() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for (f, (row, tok)) in syn.features.0.outer_iter().zip(syn.durations.to_path().assign).enumerate() {
        write!(out, "{f},{tok}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    write(&art.path("synth.csv"), &out)?;
    Ok(syn)
}

/// Scores held-out synthesis and writes `eval.csv`.
///
/// Durations come from ground truth in `ground_truth_both` mode and from the
/// duration model otherwise.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport> {
    let art = Artifacts::new(&config.out_dir);
    let loaded = load_trained(config, &art)?;
    let mut rng = substream(config.seed, SAMPLING_STREAM);
    let report = evaluate_synthesis(
        &loaded.system(config),
        &loaded.corpus.spec,
        &loaded.corpus.test,
        config.tts.alignment.infers_with_ground_truth(),
        &mut rng,
    )?;
    report.save(art.path("eval.csv"))?;
    Ok(report)
}

/// Likelihood-ratio curve; trains the unconditional model first if needed.
pub fn cmd_llr(config: &RunConfig) -> Result<LlrCurve> {
    if config.tts.objective != Objective::Diffusion {
        return Err(Error::Config("llr needs the diffusion objective".into()));
    }
    let art = Artifacts::new(&config.out_dir);
    let loaded = load_trained(config, &art)?;
    let uncond = if art.tts_uncond().is_file() {
        ParamStore::load(art.tts_uncond())?
    } else {
        let mut rng = substream(config.seed, UNCOND_STREAM);
        let trained = train_tts(
            &loaded.model,
            &loaded.vae,
            &loaded.vae_params,
            &loaded.corpus.train,
            &loaded.schedule,
            &config.tts,
            false,
            &mut rng,
        )?;
        trained.params.save(art.tts_uncond())?;
        trained.params
    };
    let mut rng = substream(config.seed, ANALYSIS_STREAM);
    let models = LlrModels {
        model: &loaded.model,
        cond_params: &loaded.params,
        uncond_params: &uncond,
    };
    let curve = llr_curve(
        models,
        &loaded.vae,
        &loaded.vae_params,
        &loaded.corpus.test,
        &loaded.schedule,
        config.llr_samples,
        &mut rng,
    )?;
    curve.save(art.path("llr.csv"))?;
    Ok(curve)
}
