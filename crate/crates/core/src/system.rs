//! Second training stage and end-to-end synthesis.
//!
//! With the VAE frozen, each epoch re-derives durations (from monotonic
//! alignment search or from ground truth), trains the alignment projection,
//! trains the acoustic model together with the linguistic encoder, and trains
//! the duration model on the current durations.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticDims, AcousticModel, FinalStep, LinguisticEncoder, Objective, Parameterization};
use crate::alignment::{
    build_trellis, durations_from_path, monotonic_alignment_search, uniform_durations, upsample,
    upsample_backward, ConditionSeq, DurationModel, DurationTable, DurationTrainConfig, Projector,
};
use crate::corpus::{FeatureSeq, TokenSeq, Utterance};
use crate::diffusion::{DiagGaussianSeq, LatentSeq};
use crate::error::{Error, Result};
use crate::nn::Momentum;
use crate::params::ParamStore;
use crate::rng::normal_matrix;
use crate::schedule::DiffusionSchedule;
use crate::vae::Vae;

/// Where training and inference durations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Alignment search for training, duration model at inference.
    #[default]
    Predicted,
    /// Ground truth for training, duration model at inference.
    GroundTruth,
    /// Ground truth for training and inference.
    GroundTruthBoth,
}

impl AlignmentMode {
    pub fn trains_on_ground_truth(self) -> bool {
        !matches!(self, AlignmentMode::Predicted)
    }

    pub fn infers_with_ground_truth(self) -> bool {
        matches!(self, AlignmentMode::GroundTruthBoth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtsTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub objective: Objective,
    pub parameterization: Parameterization,
    pub alignment: AlignmentMode,
    /// Alignment passes on uniform durations before the first search.
    pub align_warmup_epochs: usize,
    pub align_lr: f64,
    pub duration: DurationTrainConfig,
}

impl Default for TtsTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            clip_norm: Some(5.0),
            objective: Objective::Diffusion,
            parameterization: Parameterization::Data,
            alignment: AlignmentMode::Predicted,
            align_warmup_epochs: 5,
            align_lr: 1e-2,
            duration: DurationTrainConfig {
                epochs: 1,
                ..DurationTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtsDims {
    pub acoustic: AcousticDims,
    pub align_hidden: usize,
    pub duration_hidden: usize,
}

impl Default for TtsDims {
    fn default() -> Self {
        Self {
            acoustic: AcousticDims::default(),
            align_hidden: 32,
            duration_hidden: 16,
        }
    }
}

/// Linguistic encoder, acoustic model, alignment projection and duration model.
#[derive(Debug, Clone, PartialEq)]
pub struct TtsModel {
    pub dims: TtsDims,
    pub encoder: LinguisticEncoder,
    pub acoustic: AcousticModel,
    pub projector: Projector,
    pub duration: DurationModel,
}

impl TtsModel {
    pub fn new(dims: TtsDims, parameterization: Parameterization) -> Self {
        let a = dims.acoustic;
        Self {
            dims,
            encoder: LinguisticEncoder::new(&a),
            acoustic: AcousticModel::new(a, parameterization),
            projector: Projector::new(a.latent_dim, dims.align_hidden, a.cond_dim),
            duration: DurationModel::new(a.cond_dim, dims.duration_hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, rng);
        self.acoustic.init(&mut store, rng);
        self.projector.init(&mut store, rng);
        self.duration.init(&mut store, rng);
        store
    }

    /// Upsampled condition, or zeros of the right shape for an unconditional model.
    pub fn condition(&self, params: &ParamStore, tokens: &TokenSeq, durations: &DurationTable, conditional: bool) -> Result<ConditionSeq> {
        if conditional {
            let zy = self.encoder.encode(params, tokens)?;
            upsample(zy.view(), durations)
        } else {
            Ok(ConditionSeq(Array2::zeros((durations.total(), self.dims.acoustic.cond_dim))))
        }
    }

    /// Durations from alignment search between `zy` and the projected encoder means.
    pub fn align(&self, params: &ParamStore, zy: &LatentSeq, zx: &LatentSeq) -> Result<DurationTable> {
        let gzx = self.projector.project(params, zx)?;
        let path = monotonic_alignment_search(&build_trellis(zy.view(), gzx.view()))?;
        Ok(durations_from_path(&path))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTts {
    pub params: ParamStore,
    pub acoustic_history: Vec<f64>,
    pub align_history: Vec<f64>,
    pub duration_history: Vec<f64>,
    /// Durations used in the final epoch, per training utterance.
    pub durations: Vec<DurationTable>,
}

fn encode_all(vae: &Vae, vae_params: &ParamStore, utts: &[Utterance]) -> Result<Vec<DiagGaussianSeq>> {
    utts.iter().map(|u| vae.encode(vae_params, &u.features)).collect()
}

fn ground_truth(u: &Utterance) -> Result<DurationTable> {
    DurationTable::new(u.durations.clone())
}

/// Stage-two training with the VAE parameters held fixed.
///
/// With `conditional = false` the acoustic model sees an all-zero condition and
/// the alignment, duration and encoder parameters are left at initialization.
#[allow(clippy::too_many_arguments)]
pub fn train_tts<R: Rng + ?Sized>(
    model: &TtsModel,
    vae: &Vae,
    vae_params: &ParamStore,
    corpus: &[Utterance],
    schedule: &DiffusionSchedule,
    config: &TtsTrainConfig,
    conditional: bool,
    rng: &mut R,
) -> Result<TrainedTts> {
    if corpus.is_empty() {
        return Err(Error::Corpus("cannot train on an empty corpus".into()));
    }
    if vae.dims.latent_dim != model.dims.acoustic.latent_dim {
        return Err(Error::Config(format!(
            "VAE latent dim {} differs from acoustic latent dim {}",
            vae.dims.latent_dim, model.dims.acoustic.latent_dim
        )));
    }
    let mut params = model.init(rng);
    let encoded = encode_all(vae, vae_params, corpus)?;
    let zx: Vec<LatentSeq> = encoded.iter().map(|e| LatentSeq(e.mean.clone())).collect();

    let mut acoustic_opt = Momentum::new(config.lr, config.momentum, config.clip_norm);
    let mut align_opt = Momentum::new(config.align_lr, config.momentum, config.clip_norm);
    let mut acoustic_history = Vec::new();
    let mut align_history = Vec::new();
    let mut duration_history = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    let mut durations: Vec<DurationTable> = if config.alignment.trains_on_ground_truth() {
        corpus.iter().map(ground_truth).collect::<Result<_>>()?
    } else {
        corpus
            .iter()
            .map(|u| uniform_durations(u.tokens.len(), u.features.frames()))
            .collect::<Result<_>>()?
    };

    if conditional {
        for _ in 0..config.align_warmup_epochs {
            order.shuffle(rng);
            align_epoch(model, &mut params, &mut align_opt, corpus, &zx, &durations, &order, config.batch_size, &mut align_history)?;
        }
    }

    for _ in 0..config.epochs {
        if conditional && !config.alignment.trains_on_ground_truth() {
            for (i, u) in corpus.iter().enumerate() {
                let zy = model.encoder.encode(&params, &u.tokens)?;
                durations[i] = model.align(&params, &zy, &zx[i])?;
            }
        }
        if conditional {
            order.shuffle(rng);
            align_epoch(model, &mut params, &mut align_opt, corpus, &zx, &durations, &order, config.batch_size, &mut align_history)?;
        }

        order.shuffle(rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let frames: usize = batch.iter().map(|&i| corpus[i].features.frames()).sum();
            let scale = frames as f64;
            let mut grads = ParamStore::new();
            let mut loss = 0.0;
            for &i in batch {
                let u = &corpus[i];
                let (cond, enc_cache) = if conditional {
                    let (zy, cache) = model.encoder.forward(&params, &u.tokens)?;
                    (upsample(zy.view(), &durations[i])?, Some(cache))
                } else {
                    (model.condition(&params, &u.tokens, &durations[i], false)?, None)
                };
                let (l, d_cond) = match config.objective {
                    Objective::Diffusion => {
                        let t = rng.random_range(1..=schedule.steps());
                        let (f, d) = encoded[i].mean.dim();
                        let na = LatentSeq(normal_matrix(rng, f, d));
                        let nb = LatentSeq(normal_matrix(rng, f, d));
                        model.acoustic.diffusion_loss_and_grad(&params, &encoded[i], &cond, schedule, t, &na, &nb, scale, &mut grads)?
                    }
                    Objective::Mse => model.acoustic.mse_loss_and_grad(&params, &encoded[i], &cond, schedule, scale, &mut grads)?,
                };
                loss += l;
                if let Some(cache) = enc_cache {
                    let d_zy = upsample_backward(d_cond.view(), &durations[i]);
                    model.encoder.backward(&params, &cache, d_zy.view(), &mut grads)?;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: acoustic_history.len(),
                    loss,
                });
            }
            acoustic_history.push(loss);
            acoustic_opt.step(&mut params, &grads)?;
        }

        if conditional {
            let pairs = corpus
                .iter()
                .zip(&durations)
                .map(|(u, d)| Ok((model.encoder.encode(&params, &u.tokens)?.0, d.clone())))
                .collect::<Result<Vec<_>>>()?;
            let mut dur_params = params.subset("dur.");
            let hist = model.duration.train(&mut dur_params, &pairs, &config.duration, rng)?;
            duration_history.extend(hist);
            params.extend(dur_params);
        }
    }

    Ok(TrainedTts {
        params,
        acoustic_history,
        align_history,
        duration_history,
        durations,
    })
}

#[allow(clippy::too_many_arguments)]
fn align_epoch(
    model: &TtsModel,
    params: &mut ParamStore,
    opt: &mut Momentum,
    corpus: &[Utterance],
    zx: &[LatentSeq],
    durations: &[DurationTable],
    order: &[usize],
    batch_size: usize,
    history: &mut Vec<f64>,
) -> Result<()> {
    for batch in order.chunks(batch_size.max(1)) {
        let mut grads = ParamStore::new();
        let mut loss = 0.0;
        let n = batch.len() as f64;
        for &i in batch {
            let zy = model.encoder.encode(params, &corpus[i].tokens)?;
            let (l, g) = model.projector.loss_and_grad(params, &zy, &zx[i], &durations[i].to_path())?;
            loss += l / n;
            if grads.is_empty() {
                grads = g.zeros_like();
            }
            grads.add_scaled(&g, 1.0 / n);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: history.len(),
                loss,
            });
        }
        history.push(loss);
        opt.step(params, &grads)?;
    }
    Ok(())
}

/// A trained system ready for synthesis.
#[derive(Debug, Clone, Copy)]
pub struct TtsSystem<'a> {
    pub vae: &'a Vae,
    pub vae_params: &'a ParamStore,
    pub model: &'a TtsModel,
    pub params: &'a ParamStore,
    pub schedule: &'a DiffusionSchedule,
    pub objective: Objective,
    pub final_step: FinalStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub features: FeatureSeq,
    pub latents: LatentSeq,
    pub durations: DurationTable,
}

impl TtsSystem<'_> {
    pub fn predict_durations(&self, tokens: &TokenSeq) -> Result<DurationTable> {
        let zy = self.model.encoder.encode(self.params, tokens)?;
        self.model.duration.predict(self.params, zy.view())
    }

    /// Tokens to feature frames. Uses `durations` when given, the duration model otherwise.
    pub fn synthesize<R: Rng + ?Sized>(&self, tokens: &TokenSeq, durations: Option<&DurationTable>, rng: &mut R) -> Result<Synthesis> {
        let zy = self.model.encoder.encode(self.params, tokens)?;
        let durations = match durations {
            Some(d) => d.clone(),
            None => self.model.duration.predict(self.params, zy.view())?,
        };
        if durations.total() == 0 {
            return Err(Error::Duration("total duration is zero".into()));
        }
        let cond = upsample(zy.view(), &durations)?;
        let latents = self
            .model
            .acoustic
            .generate(self.params, &cond, self.schedule, self.objective, self.final_step, rng)?;
        let features = self.vae.decode(self.vae_params, &latents)?;
        Ok(Synthesis {
            features,
            latents,
            durations,
        })
    }
}

/// Mean of `history` over consecutive windows of `window` entries.
pub fn windowed_means(history: &[f64], window: usize) -> Vec<f64> {
    history
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Stacked frames of several matrices.
pub fn stack_rows(mats: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("column counts agree")
}
