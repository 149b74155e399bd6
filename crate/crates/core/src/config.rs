//! Run configuration, read from a strict JSON document.
//!
//! Every section has defaults, so `{}` is a complete config. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::FinalStep;
use crate::corpus::{Corpus, SynthCorpusSpec};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::system::{TtsDims, TtsTrainConfig};
use crate::vae::{VaeDims, VaeTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub alphabet_size: usize,
    pub feat_dim: usize,
    pub variants: usize,
    pub duration_range: (usize, usize),
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Inclusive tokens-per-utterance range.
    pub len_range: (usize, usize),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 8,
            feat_dim: 8,
            variants: 2,
            duration_range: (2, 6),
            noise_std: 0.1,
            n_train: 450,
            n_test: 50,
            len_range: (4, 10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub schedule: ScheduleConfig,
    pub vae_dims: VaeDims,
    pub vae: VaeTrainConfig,
    pub model: TtsDims,
    pub tts: TtsTrainConfig,
    pub final_step: FinalStep,
    /// Noise draws per test utterance and step for the likelihood-ratio curve.
    pub llr_samples: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            schedule: ScheduleConfig::default(),
            vae_dims: VaeDims::default(),
            vae: VaeTrainConfig::default(),
            model: TtsDims::default(),
            tts: TtsTrainConfig::default(),
            final_step: FinalStep::default(),
            llr_samples: 4,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cross-section consistency checks.
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        let a = &self.model.acoustic;
        if self.vae_dims.feat_dim != c.feat_dim {
            return Err(Error::Config(format!(
                "vae_dims.feat_dim {} differs from corpus.feat_dim {}",
                self.vae_dims.feat_dim, c.feat_dim
            )));
        }
        if a.latent_dim != self.vae_dims.latent_dim {
            return Err(Error::Config(format!(
                "model latent_dim {} differs from vae_dims.latent_dim {}",
                a.latent_dim, self.vae_dims.latent_dim
            )));
        }
        if a.alphabet_size != c.alphabet_size {
            return Err(Error::Config(format!(
                "model alphabet_size {} differs from corpus.alphabet_size {}",
                a.alphabet_size, c.alphabet_size
            )));
        }
        if c.n_train == 0 || c.n_test == 0 {
            return Err(Error::Config("corpus needs non-empty train and test splits".into()));
        }
        if self.llr_samples == 0 {
            return Err(Error::Config("llr_samples must be positive".into()));
        }
        self.schedule.build()?;
        self.corpus_spec()?;
        Ok(())
    }

    pub fn corpus_spec(&self) -> Result<SynthCorpusSpec> {
        let c = &self.corpus;
        SynthCorpusSpec::new(c.alphabet_size, c.feat_dim, c.variants, c.duration_range, c.noise_std, self.seed)
    }

    pub fn generate_corpus(&self) -> Result<Corpus> {
        Corpus::generate(self.corpus_spec()?, self.corpus.n_train, self.corpus.n_test, self.corpus.len_range)
    }
}
