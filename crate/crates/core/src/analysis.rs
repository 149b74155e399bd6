//! Evaluation metrics and diagnostics.
//!
//! The log-likelihood ratio curve compares an unconditional model (trained on an
//! all-zero condition) with the conditional one. At each step `t` both models
//! score the same posterior-target sample `x_{t-1}` given the same `x_t`. The
//! score is the excess negative log-likelihood of that sample,
//!
//! ```text
//! E(t) = log q(x_{t-1} | x_t, target) - log p(x_{t-1} | x_t, model)
//! ```
//!
//! as a per-element mean. It is a one-sample estimate of the per-step KL, so it
//! is nonnegative in expectation regardless of whether the densities exceed one.
//! The reported ratio is
//!
//! ```text
//! ratio(t) = mean E_uncond(t) / mean E_cond(t)
//! ```
//!
//! with means over test utterances and noise draws, so `ratio > 1` means the
//! conditional model assigns the higher likelihood.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::acoustic::{reverse_step_log_density, AcousticModel};
use crate::alignment::{upsample, ConditionSeq, DurationTable};
use crate::corpus::{SynthCorpusSpec, Utterance};
use crate::diffusion::{kl_scalar, DiagGaussianSeq, LatentSeq};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::normal_matrix;
use crate::schedule::DiffusionSchedule;
use crate::system::{TtsModel, TtsSystem};
use crate::vae::Vae;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrPoint {
    pub t: usize,
    /// `None` when the conditional mean score is exactly zero.
    pub ratio: Option<f64>,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlrCurve {
    pub points: Vec<LlrPoint>,
}

impl LlrCurve {
    /// Mean ratio over steps `lo..=hi`, skipping undefined points.
    pub fn mean_ratio(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.t >= lo && p.t <= hi)
            .filter_map(|p| p.ratio)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean ratios over the bottom and top quartiles of `1..=T`.
    pub fn quartile_means(&self) -> (Option<f64>, Option<f64>) {
        let steps = self.points.len();
        let q = (steps / 4).max(1);
        (self.mean_ratio(1, q), self.mean_ratio(steps + 1 - q, steps))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,ratio,stderr,n\n");
        for p in &self.points {
            let r = p.ratio.map_or_else(|| "nan".to_string(), |r| r.to_string());
            writeln!(out, "{},{},{},{}", p.t, r, p.stderr, p.n).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Ratio of means with a delta-method standard error.
fn ratio_of_means(u: &[f64], c: &[f64]) -> (Option<f64>, f64) {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mc = c.iter().sum::<f64>() / n;
    if mc == 0.0 {
        return (None, f64::NAN);
    }
    let r = mu / mc;
    if u.len() < 2 {
        return (Some(r), 0.0);
    }
    let (mut vu, mut vc, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(c) {
        vu += (a - mu) * (a - mu);
        vc += (b - mc) * (b - mc);
        cov += (a - mu) * (b - mc);
    }
    let d = n - 1.0;
    let (vu, vc, cov) = (vu / d, vc / d, cov / d);
    let var = (vu / (mc * mc) + mu * mu * vc / mc.powi(4) - 2.0 * mu * cov / mc.powi(3)) / n;
    (Some(r), var.max(0.0).sqrt())
}

/// The two models compared by [`llr_curve`].
#[derive(Debug, Clone, Copy)]
pub struct LlrModels<'a> {
    pub model: &'a TtsModel,
    pub cond_params: &'a ParamStore,
    pub uncond_params: &'a ParamStore,
}

/// Ratio of unconditional to conditional excess negative log-likelihood at every step.
///
/// The conditional model is driven by the encoder output upsampled with the
/// ground-truth durations; the unconditional one sees zeros of the same shape.
pub fn llr_curve<R: Rng + ?Sized>(
    models: LlrModels<'_>,
    vae: &Vae,
    vae_params: &ParamStore,
    test: &[Utterance],
    schedule: &DiffusionSchedule,
    n_samples: usize,
    rng: &mut R,
) -> Result<LlrCurve> {
    if test.is_empty() || n_samples == 0 {
        return Err(Error::Corpus("LLR needs at least one test item and one sample".into()));
    }
    let acoustic: &AcousticModel = &models.model.acoustic;
    let mut prepared = Vec::with_capacity(test.len());
    for u in test {
        let enc = vae.encode(vae_params, &u.features)?;
        let durations = DurationTable::new(u.durations.clone())?;
        let zy = models.model.encoder.encode(models.cond_params, &u.tokens)?;
        let cond = upsample(zy.view(), &durations)?;
        let zero = ConditionSeq(Array2::zeros(cond.0.dim()));
        prepared.push((enc, cond, zero));
    }

    let mut points = Vec::with_capacity(schedule.steps());
    for t in 1..=schedule.steps() {
        let mut lu = Vec::with_capacity(test.len() * n_samples);
        let mut lc = Vec::with_capacity(test.len() * n_samples);
        for (enc, cond, zero) in &prepared {
            let (f, d) = enc.mean.dim();
            for _ in 0..n_samples {
                let na = LatentSeq(normal_matrix(rng, f, d));
                let nb = LatentSeq(normal_matrix(rng, f, d));
                let nc = normal_matrix(rng, f, d);
                let (target, xt) = crate::acoustic::latent_target(enc, schedule, t, &na, &nb)?;
                let x_prev = target.sample(nc.view())?;
                let lq = target.log_density(x_prev.view())? / x_prev.0.len().max(1) as f64;
                let oc = acoustic.model_fn(models.cond_params, &xt, t, cond)?;
                let ou = acoustic.model_fn(models.uncond_params, &xt, t, zero)?;
                let p = acoustic.parameterization;
                lc.push(lq - reverse_step_log_density(&oc, schedule, p, &xt, &x_prev, t)?);
                lu.push(lq - reverse_step_log_density(&ou, schedule, p, &xt, &x_prev, t)?);
            }
        }
        let (ratio, stderr) = ratio_of_means(&lu, &lc);
        points.push(LlrPoint {
            t,
            ratio,
            stderr,
            n: lu.len(),
        });
    }
    Ok(LlrCurve { points })
}

/// Root mean square distance from each frame to the nearest template variant of
/// the token that frame is assigned to by `durations`.
pub fn feature_rms(spec: &SynthCorpusSpec, tokens: &[usize], durations: &DurationTable, features: &Array2<f64>) -> Result<f64> {
    if tokens.len() != durations.0.len() {
        return Err(Error::Duration(format!(
            "{} durations for {} tokens",
            durations.0.len(),
            tokens.len()
        )));
    }
    if features.nrows() != durations.total() || features.ncols() != spec.feat_dim {
        return Err(Error::Shape {
            expected: (durations.total(), spec.feat_dim),
            got: features.dim(),
        });
    }
    let path = durations.to_path();
    let sq: f64 = features
        .outer_iter()
        .zip(&path.assign)
        .map(|(row, &i)| spec.nearest_template_sq(tokens[i], row))
        .sum();
    Ok((sq / features.len().max(1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub utt_id: usize,
    pub feature_rms: f64,
    pub duration_mae: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl EvalReport {
    pub fn mean_feature_rms(&self) -> f64 {
        self.rows.iter().map(|r| r.feature_rms).sum::<f64>() / self.rows.len() as f64
    }

    pub fn median_feature_rms(&self) -> f64 {
        median(self.rows.iter().map(|r| r.feature_rms).collect())
    }

    pub fn mean_duration_mae(&self) -> f64 {
        self.rows.iter().map(|r| r.duration_mae).sum::<f64>() / self.rows.len() as f64
    }

    pub fn median_duration_mae(&self) -> f64 {
        median(self.rows.iter().map(|r| r.duration_mae).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utt_id,feature_rms,duration_mae,frames\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.utt_id, r.feature_rms, r.duration_mae, r.frames).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Synthesizes every test utterance and scores it against the noiseless templates.
///
/// With `ground_truth_durations` the reference durations drive synthesis;
/// otherwise the duration model does.
pub fn evaluate_synthesis<R: Rng + ?Sized>(
    system: &TtsSystem<'_>,
    spec: &SynthCorpusSpec,
    test: &[Utterance],
    ground_truth_durations: bool,
    rng: &mut R,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(test.len());
    for u in test {
        let gt = DurationTable::new(u.durations.clone())?;
        let syn = system.synthesize(&u.tokens, ground_truth_durations.then_some(&gt), rng)?;
        let rms = feature_rms(spec, &u.tokens.0, &syn.durations, &syn.features.0)?;
        let mae = syn
            .durations
            .0
            .iter()
            .zip(&gt.0)
            .map(|(&a, &b)| a.abs_diff(b) as f64)
            .sum::<f64>()
            / gt.0.len().max(1) as f64;
        rows.push(EvalRow {
            utt_id: u.id,
            feature_rms: rms,
            duration_mae: mae,
            frames: syn.durations.total(),
        });
    }
    Ok(EvalReport { rows })
}

/// KL between the forward marginal at `t = T` and the standard normal, per frame.
///
/// Each encoded frame `N(mu, s2)` diffuses to `N(sqrt(a) mu, a s2 + 1 - a)` with
/// `a` the final cumulative product; the KL is summed over latent dimensions and
/// averaged over all frames.
pub fn lt_diagnostic(encoded: &[DiagGaussianSeq], schedule: &DiffusionSchedule) -> f64 {
    let a = schedule.alpha_bar(schedule.steps());
    let mut total = 0.0;
    let mut frames = 0usize;
    for e in encoded {
        frames += e.frames();
        for (&m, &v) in e.mean.iter().zip(e.var.iter()) {
            total += kl_scalar(a.sqrt() * m, a * v + 1.0 - a, 0.0, 1.0).max(0.0);
        }
    }
    total / frames.max(1) as f64
}

/// [`lt_diagnostic`] over the VAE encodings of a set of utterances.
pub fn lt_diagnostic_for(vae: &Vae, vae_params: &ParamStore, utts: &[Utterance], schedule: &DiffusionSchedule) -> Result<f64> {
    let encoded = utts
        .iter()
        .map(|u| vae.encode(vae_params, &u.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(lt_diagnostic(&encoded, schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ratio_of_identical_samples_is_one() {
        let u = [-1.0, -2.0, -3.5];
        let (r, se) = ratio_of_means(&u, &u);
        assert_eq!(r, Some(1.0));
        assert!(se.abs() < 1e-12);
        assert_eq!(ratio_of_means(&[1.0, -1.0], &[0.5, -0.5]).0, None);
    }

    #[test]
    fn lt_vanishes_for_standard_normal_latents_with_full_noise() {
        let s = DiffusionSchedule::from_betas(vec![0.5, 1.0 - 1e-12]).unwrap();
        let e = DiagGaussianSeq::standard_normal(3, 2);
        assert!(lt_diagnostic(&[e], &s) < 1e-12);
    }

    #[test]
    fn lt_is_nonnegative_and_shrinks_with_more_steps() {
        let e = DiagGaussianSeq::new(array![[1.0, -2.0], [0.3, 0.0]], array![[0.1, 0.5], [2.0, 0.01]]).unwrap();
        let vals: Vec<f64> = [10, 50, 100]
            .iter()
            .map(|&t| lt_diagnostic(std::slice::from_ref(&e), &DiffusionSchedule::linear(t, 1e-4, 0.02).unwrap()))
            .collect();
        assert!(vals.iter().all(|&v| v >= 0.0));
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn feature_rms_of_clean_features_is_zero() {
        let spec = SynthCorpusSpec::new(3, 2, 2, (1, 3), 0.0, 4).unwrap();
        let u = &crate::corpus::generate_corpus(&spec, 1, (4, 4)).unwrap()[0];
        let d = DurationTable::new(u.durations.clone()).unwrap();
        assert_eq!(feature_rms(&spec, &u.tokens.0, &d, &u.features.0).unwrap(), 0.0);
    }
}
