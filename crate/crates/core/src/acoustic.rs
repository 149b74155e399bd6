//! Conditional diffusion model over VAE latents.
//!
//! The model function sees `[x_t | condition | time embedding]` per frame and
//! predicts a mean head and a log-variance head. Under data prediction the mean
//! head estimates the encoder mean, under noise prediction it estimates the
//! injected noise. The training target at step `t` is the approximate posterior
//! with the encoder mean in place of `x_0` and the interpolated encoder variance,
//! and the loss is the closed-form KL from that target to the model.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::ConditionSeq;
use crate::corpus::TokenSeq;
use crate::diffusion::{
    check_same, gaussian_log_density, kl_diag_gaussian, kl_scalar, noise_prediction_coefficients,
    posterior_latent_target, sample_forward, DiagGaussianSeq, LatentSeq,
};
use crate::error::{Error, Result};
use crate::nn::{time_embedding, Mlp, MlpCache, Network, NetworkCache, NetworkKind};
use crate::params::{ParamStore, Tensor};
use crate::schedule::DiffusionSchedule;

/// Log-variance predictions are clamped to this range before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Diffusion,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    Data,
    Noise,
}

/// What the last reverse step (`t = 1`) returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStep {
    /// The model mean, with no noise injected.
    #[default]
    Mean,
    /// A draw from the model distribution at `t = 1`.
    Sample,
}

impl Parameterization {
    /// `(a, b)` such that the model mean is `a * head + b * x_t`.
    pub fn mean_coefficients(self, schedule: &DiffusionSchedule, t: usize) -> (f64, f64) {
        match self {
            Parameterization::Data => schedule.posterior_coefficients(t),
            Parameterization::Noise => noise_prediction_coefficients(schedule, t),
        }
    }
}

#[inline]
fn clamped_var(logvar: f64) -> f64 {
    logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP).exp()
}

#[inline]
fn clamped_var_grad(logvar: f64) -> f64 {
    if logvar.abs() < LOGVAR_CLAMP {
        logvar.exp()
    } else {
        0.0
    }
}

/// Raw model-function heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFunctionOutput {
    pub mu_pred: Array2<f64>,
    pub logvar_pred: Array2<f64>,
}

impl ModelFunctionOutput {
    pub fn variance(&self) -> Array2<f64> {
        self.logvar_pred.mapv(clamped_var)
    }

    /// The model distribution `p(x_{t-1} | x_t)` implied by these heads.
    pub fn reverse_distribution(
        &self,
        schedule: &DiffusionSchedule,
        parameterization: Parameterization,
        xt: &LatentSeq,
        t: usize,
    ) -> Result<DiagGaussianSeq> {
        schedule.check_step(t)?;
        check_same(xt.0.dim(), self.mu_pred.dim())?;
        let (a, b) = parameterization.mean_coefficients(schedule, t);
        let mut mean = &self.mu_pred * a;
        mean.scaled_add(b, &xt.0);
        let var = self.logvar_pred.mapv(|lv| schedule.interpolate(clamped_var(lv), t));
        Ok(DiagGaussianSeq { mean, var })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticDims {
    pub alphabet_size: usize,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub model_hidden: usize,
    pub time_embed_dim: usize,
    pub network: NetworkKind,
}

impl Default for AcousticDims {
    fn default() -> Self {
        Self {
            alphabet_size: 8,
            latent_dim: 4,
            cond_dim: 8,
            embed_dim: 8,
            encoder_hidden: 32,
            model_hidden: 64,
            time_embed_dim: 8,
            network: NetworkKind::Frame,
        }
    }
}

/// Embedding lookup followed by a frame-wise MLP; one output row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticEncoder {
    alphabet: usize,
    embed_dim: usize,
    mlp: Mlp,
}

pub struct EncoderCache {
    tokens: Vec<usize>,
    mlp: MlpCache,
}

const EMBED: &str = "ling.embed";

impl LinguisticEncoder {
    pub fn new(dims: &AcousticDims) -> Self {
        Self {
            alphabet: dims.alphabet_size,
            embed_dim: dims.embed_dim,
            mlp: Mlp::new("ling.mlp", dims.embed_dim, dims.encoder_hidden, dims.cond_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.insert(EMBED, Tensor::randn(&[self.alphabet, self.embed_dim], 1.0, rng));
        self.mlp.init(store, false, rng);
    }

    pub fn encode(&self, params: &ParamStore, tokens: &TokenSeq) -> Result<LatentSeq> {
        Ok(LatentSeq(self.forward(params, tokens)?.0))
    }

    pub fn forward(&self, params: &ParamStore, tokens: &TokenSeq) -> Result<(Array2<f64>, EncoderCache)> {
        if let Some(&id) = tokens.0.iter().find(|&&id| id >= self.alphabet) {
            return Err(Error::Token {
                id,
                alphabet: self.alphabet,
            });
        }
        let table = params.get(EMBED)?.as_matrix();
        let emb = Array2::from_shape_fn((tokens.len(), self.embed_dim), |(i, j)| table[[tokens.0[i], j]]);
        let (out, mlp) = self.mlp.forward(params, emb.view())?;
        Ok((
            out,
            EncoderCache {
                tokens: tokens.0.clone(),
                mlp,
            },
        ))
    }

    pub fn backward(&self, params: &ParamStore, cache: &EncoderCache, d_out: ArrayView2<f64>, grads: &mut ParamStore) -> Result<()> {
        let d_emb = self.mlp.backward(params, &cache.mlp, d_out, grads)?;
        let g = grads.entry(EMBED, &[self.alphabet, self.embed_dim]);
        let mut gm = g.as_matrix_mut();
        for (row, &tok) in d_emb.outer_iter().zip(&cache.tokens) {
            let mut dst = gm.row_mut(tok);
            dst += &row;
        }
        Ok(())
    }
}

/// The model function network.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub dims: AcousticDims,
    pub parameterization: Parameterization,
    net: Network,
}

pub struct ModelCache {
    net: NetworkCache,
}

impl AcousticModel {
    pub fn new(dims: AcousticDims, parameterization: Parameterization) -> Self {
        let input = dims.latent_dim + dims.cond_dim + dims.time_embed_dim;
        Self {
            dims,
            parameterization,
            net: Network::new(dims.network, "acoustic.net", input, dims.model_hidden, 2 * dims.latent_dim),
        }
    }

    /// Output layer starts at zero: heads predict mean 0 and variance 1.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.net.init(store, true, rng);
    }

    fn input(&self, xt: &LatentSeq, t: usize, cond: &ConditionSeq) -> Result<Array2<f64>> {
        if cond.frames() != xt.frames() {
            return Err(Error::Shape {
                expected: (xt.frames(), self.dims.cond_dim),
                got: cond.0.dim(),
            });
        }
        if xt.dim() != self.dims.latent_dim || cond.0.ncols() != self.dims.cond_dim {
            return Err(Error::Shape {
                expected: (xt.frames(), self.dims.latent_dim + self.dims.cond_dim),
                got: (xt.frames(), xt.dim() + cond.0.ncols()),
            });
        }
        let temb = time_embedding(t, self.dims.time_embed_dim);
        let temb = temb.broadcast((xt.frames(), self.dims.time_embed_dim)).expect("broadcast");
        Ok(concatenate![Axis(1), xt.0, cond.0, temb])
    }

    fn split(&self, out: &Array2<f64>) -> ModelFunctionOutput {
        let l = self.dims.latent_dim;
        ModelFunctionOutput {
            mu_pred: out.slice(s![.., 0..l]).to_owned(),
            logvar_pred: out.slice(s![.., l..2 * l]).to_owned(),
        }
    }

    pub fn model_fn(&self, params: &ParamStore, xt: &LatentSeq, t: usize, cond: &ConditionSeq) -> Result<ModelFunctionOutput> {
        Ok(self.forward(params, xt, t, cond)?.0)
    }

    pub fn forward(
        &self,
        params: &ParamStore,
        xt: &LatentSeq,
        t: usize,
        cond: &ConditionSeq,
    ) -> Result<(ModelFunctionOutput, ModelCache)> {
        let input = self.input(xt, t, cond)?;
        let (out, net) = self.net.forward(params, input.view())?;
        Ok((self.split(&out), ModelCache { net }))
    }

    /// Accumulates parameter gradients and returns the condition gradient.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &ModelCache,
        d_mu: ArrayView2<f64>,
        d_logvar: ArrayView2<f64>,
        grads: &mut ParamStore,
    ) -> Result<Array2<f64>> {
        let d_out = concatenate![Axis(1), d_mu, d_logvar];
        let d_in = self.net.backward(params, &cache.net, d_out.view(), grads)?;
        let l = self.dims.latent_dim;
        Ok(d_in.slice(s![.., l..l + self.dims.cond_dim]).to_owned())
    }

    /// One-term KL objective, summed over frames and dimensions.
    #[allow(clippy::too_many_arguments)]
    pub fn diffusion_step_loss(
        &self,
        params: &ParamStore,
        vae_out: &DiagGaussianSeq,
        cond: &ConditionSeq,
        schedule: &DiffusionSchedule,
        t: usize,
        noise_latent: &LatentSeq,
        noise_forward: &LatentSeq,
    ) -> Result<f64> {
        let (target, xt) = latent_target(vae_out, schedule, t, noise_latent, noise_forward)?;
        let out = self.model_fn(params, &xt, t, cond)?;
        let model = out.reverse_distribution(schedule, self.parameterization, &xt, t)?;
        kl_diag_gaussian(&target, &model)
    }

    /// [`diffusion_step_loss`](Self::diffusion_step_loss) divided by `scale`,
    /// with gradients for the model parameters and the condition.
    #[allow(clippy::too_many_arguments)]
    pub fn diffusion_loss_and_grad(
        &self,
        params: &ParamStore,
        vae_out: &DiagGaussianSeq,
        cond: &ConditionSeq,
        schedule: &DiffusionSchedule,
        t: usize,
        noise_latent: &LatentSeq,
        noise_forward: &LatentSeq,
        scale: f64,
        grads: &mut ParamStore,
    ) -> Result<(f64, Array2<f64>)> {
        let (target, xt) = latent_target(vae_out, schedule, t, noise_latent, noise_forward)?;
        let (out, cache) = self.forward(params, &xt, t, cond)?;
        let (a, b) = self.parameterization.mean_coefficients(schedule, t);
        let bb = schedule.beta_bar(t);
        let mut d_mu = Array2::zeros(out.mu_pred.dim());
        let mut d_lv = Array2::zeros(out.mu_pred.dim());
        let mut loss = 0.0;
        for ((f, j), &head) in out.mu_pred.indexed_iter() {
            let lv = out.logvar_pred[[f, j]];
            let m_model = a * head + b * xt.0[[f, j]];
            let v_model = bb + (1.0 - bb) * clamped_var(lv);
            let m_tgt = target.mean[[f, j]];
            let v_tgt = target.var[[f, j]];
            loss += kl_scalar(m_tgt, v_tgt, m_model, v_model);
            let diff = m_model - m_tgt;
            d_mu[[f, j]] = a * diff / v_model / scale;
            let dkl_dv = 0.5 * (1.0 / v_model - (v_tgt + diff * diff) / (v_model * v_model));
            d_lv[[f, j]] = dkl_dv * (1.0 - bb) * clamped_var_grad(lv) / scale;
        }
        let d_cond = self.backward(params, &cache, d_mu.view(), d_lv.view(), grads)?;
        Ok((loss / scale, d_cond))
    }

    /// Squared error of the mean head at the fixed pseudo-input `x_T = 0`, `t = T`,
    /// summed over frames and dimensions.
    pub fn mse_step_loss(&self, params: &ParamStore, vae_out: &DiagGaussianSeq, cond: &ConditionSeq, schedule: &DiffusionSchedule) -> Result<f64> {
        let xt = LatentSeq::zeros(vae_out.frames(), vae_out.dim());
        let out = self.model_fn(params, &xt, schedule.steps(), cond)?;
        check_same(out.mu_pred.dim(), vae_out.mean.dim())?;
        Ok((&out.mu_pred - &vae_out.mean).mapv(|d| d * d).sum())
    }

    pub fn mse_loss_and_grad(
        &self,
        params: &ParamStore,
        vae_out: &DiagGaussianSeq,
        cond: &ConditionSeq,
        schedule: &DiffusionSchedule,
        scale: f64,
        grads: &mut ParamStore,
    ) -> Result<(f64, Array2<f64>)> {
        let xt = LatentSeq::zeros(vae_out.frames(), vae_out.dim());
        let (out, cache) = self.forward(params, &xt, schedule.steps(), cond)?;
        check_same(out.mu_pred.dim(), vae_out.mean.dim())?;
        let diff = &out.mu_pred - &vae_out.mean;
        let loss = diff.mapv(|d| d * d).sum() / scale;
        let d_mu = diff.mapv(|d| 2.0 * d / scale);
        let d_lv = Array2::zeros(d_mu.dim());
        let d_cond = self.backward(params, &cache, d_mu.view(), d_lv.view(), grads)?;
        Ok((loss, d_cond))
    }

    /// Latents for a condition: ancestral sampling for the diffusion objective,
    /// or the direct mean prediction for the MSE objective.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        cond: &ConditionSeq,
        schedule: &DiffusionSchedule,
        objective: Objective,
        final_step: FinalStep,
        rng: &mut R,
    ) -> Result<LatentSeq> {
        match objective {
            Objective::Diffusion => self.sample_latents(params, cond, schedule, final_step, rng),
            Objective::Mse => {
                let xt = LatentSeq::zeros(cond.frames(), self.dims.latent_dim);
                Ok(LatentSeq(self.model_fn(params, &xt, schedule.steps(), cond)?.mu_pred))
            }
        }
    }

    pub fn sample_latents<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        cond: &ConditionSeq,
        schedule: &DiffusionSchedule,
        final_step: FinalStep,
        rng: &mut R,
    ) -> Result<LatentSeq> {
        sample_latents_with(
            |xt, t| self.model_fn(params, xt, t, cond),
            cond.frames(),
            self.dims.latent_dim,
            schedule,
            self.parameterization,
            final_step,
            rng,
        )
    }
}

/// Draws `z = mu + sigma * noise_latent`, diffuses it to `x_t`, and returns the
/// latent training target together with `x_t`.
pub fn latent_target(
    vae_out: &DiagGaussianSeq,
    schedule: &DiffusionSchedule,
    t: usize,
    noise_latent: &LatentSeq,
    noise_forward: &LatentSeq,
) -> Result<(DiagGaussianSeq, LatentSeq)> {
    let z = vae_out.sample(noise_latent.view())?;
    let xt = sample_forward(schedule, &z, t, noise_forward)?;
    let target = posterior_latent_target(schedule, vae_out.mean.view(), vae_out.var.view(), &xt, t)?;
    Ok((target, xt))
}

/// Ancestral sampling from `x_T ~ N(0, I)` with any model function.
///
/// Steps `T..=2` draw from the model distribution; step 1 either returns its
/// mean or draws from it, per `final_step`.
pub fn sample_latents_with<F, R>(
    mut model_fn: F,
    frames: usize,
    latent_dim: usize,
    schedule: &DiffusionSchedule,
    parameterization: Parameterization,
    final_step: FinalStep,
    rng: &mut R,
) -> Result<LatentSeq>
where
    F: FnMut(&LatentSeq, usize) -> Result<ModelFunctionOutput>,
    R: Rng + ?Sized,
{
    let mut x = LatentSeq(crate::rng::normal_matrix(rng, frames, latent_dim));
    for t in (1..=schedule.steps()).rev() {
        let out = model_fn(&x, t)?;
        let dist = out.reverse_distribution(schedule, parameterization, &x, t)?;
        x = if t == 1 && final_step == FinalStep::Mean {
            LatentSeq(dist.mean)
        } else {
            let noise = Array2::from_shape_simple_fn((frames, latent_dim), || rng.sample(StandardNormal));
            dist.sample(noise.view())?
        };
    }
    Ok(x)
}

/// Per-element mean log-density of `x_prev` under the model's reverse step.
pub fn reverse_step_log_density(
    out: &ModelFunctionOutput,
    schedule: &DiffusionSchedule,
    parameterization: Parameterization,
    xt: &LatentSeq,
    x_prev: &LatentSeq,
    t: usize,
) -> Result<f64> {
    let dist = out.reverse_distribution(schedule, parameterization, xt, t)?;
    let n = x_prev.0.len().max(1) as f64;
    let mut acc = 0.0;
    for ((m, v), x) in dist.mean.iter().zip(dist.var.iter()).zip(x_prev.0.iter()) {
        acc += gaussian_log_density(*x, *m, *v);
    }
    Ok(acc / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (AcousticModel, LinguisticEncoder, ParamStore) {
        let dims = AcousticDims {
            alphabet_size: 3,
            latent_dim: 2,
            cond_dim: 3,
            embed_dim: 2,
            encoder_hidden: 4,
            model_hidden: 5,
            time_embed_dim: 4,
            network: NetworkKind::Frame,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let model = AcousticModel::new(dims, Parameterization::Data);
        let enc = LinguisticEncoder::new(&dims);
        model.init(&mut store, &mut rng);
        enc.init(&mut store, &mut rng);
        (model, enc, store)
    }

    #[test]
    fn encoder_rows_follow_tokens() {
        let (_, enc, store) = tiny();
        let z = enc.encode(&store, &TokenSeq(vec![1, 0, 1])).unwrap();
        assert_eq!(z.frames(), 3);
        assert_eq!(z.0.row(0), z.0.row(2));
        assert!(enc.encode(&store, &TokenSeq(vec![3])).is_err());
    }

    #[test]
    fn fresh_model_predicts_standard_normal() {
        let (model, _, store) = tiny();
        let cond = ConditionSeq(Array2::ones((4, 3)));
        let out = model.model_fn(&store, &LatentSeq::zeros(4, 2), 7, &cond).unwrap();
        assert_eq!(out.mu_pred, Array2::<f64>::zeros((4, 2)));
        assert_eq!(out.variance(), Array2::<f64>::ones((4, 2)));
        assert!(model.model_fn(&store, &LatentSeq::zeros(3, 2), 7, &cond).is_err());
    }

    #[test]
    fn mse_loss_scales_quadratically() {
        let (model, _, store) = tiny();
        let s = DiffusionSchedule::linear(10, 1e-3, 0.05).unwrap();
        let cond = ConditionSeq(Array2::zeros((2, 3)));
        let target = |m: f64| DiagGaussianSeq {
            mean: array![[m, 0.0], [0.0, m]],
            var: Array2::ones((2, 2)),
        };
        let l1 = model.mse_step_loss(&store, &target(0.5), &cond, &s).unwrap();
        let l2 = model.mse_step_loss(&store, &target(1.0), &cond, &s).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        assert_eq!(model.mse_step_loss(&store, &target(0.0), &cond, &s).unwrap(), 0.0);
    }

    #[test]
    fn loss_and_grad_value_matches_loss() {
        let (model, _, store) = tiny();
        let s = DiffusionSchedule::linear(10, 1e-3, 0.05).unwrap();
        let vae_out = DiagGaussianSeq {
            mean: array![[0.3, -0.2], [1.0, 0.5]],
            var: array![[0.2, 0.1], [0.4, 0.3]],
        };
        let cond = ConditionSeq(array![[0.1, 0.2, 0.3], [0.0, -1.0, 1.0]]);
        let na = LatentSeq(array![[0.5, -1.0], [0.2, 0.1]]);
        let nb = LatentSeq(array![[-0.3, 0.4], [1.1, -0.6]]);
        for t in [1, 4, 10] {
            let a = model.diffusion_step_loss(&store, &vae_out, &cond, &s, t, &na, &nb).unwrap();
            let mut g = ParamStore::new();
            let (b, _) = model
                .diffusion_loss_and_grad(&store, &vae_out, &cond, &s, t, &na, &nb, 1.0, &mut g)
                .unwrap();
            assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn sampler_is_deterministic_and_shaped() {
        let (model, _, store) = tiny();
        let s = DiffusionSchedule::linear(10, 1e-3, 0.05).unwrap();
        let cond = ConditionSeq(Array2::zeros((5, 3)));
        let a = model
            .sample_latents(&store, &cond, &s, FinalStep::Mean, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let b = model
            .sample_latents(&store, &cond, &s, FinalStep::Mean, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(a.0.dim(), (5, 2));
        assert_eq!(a, b);
    }
}
