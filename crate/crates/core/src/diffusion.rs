//! Closed-form Gaussian diffusion algebra: forward marginals, approximate
//! posteriors, diagonal-Gaussian KL and the two model-mean parameterizations.
//!
//! Every operation takes its noise as an argument, so all of them are pure.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

/// A concrete latent sample, `[frames x dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq(pub Array2<f64>);

impl LatentSeq {
    pub fn new(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self(Array2::zeros((frames, dim)))
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl From<Array2<f64>> for LatentSeq {
    fn from(values: Array2<f64>) -> Self {
        Self(values)
    }
}

/// Per-frame diagonal Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianSeq {
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl DiagGaussianSeq {
    pub fn new(mean: Array2<f64>, var: Array2<f64>) -> Result<Self> {
        check_same(mean.dim(), var.dim())?;
        check_variance(var.view())?;
        Ok(Self { mean, var })
    }

    pub fn standard_normal(frames: usize, dim: usize) -> Self {
        Self {
            mean: Array2::zeros((frames, dim)),
            var: Array2::ones((frames, dim)),
        }
    }

    pub fn frames(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    /// Reparameterized draw `mean + sqrt(var) * noise`.
    pub fn sample(&self, noise: ArrayView2<f64>) -> Result<LatentSeq> {
        check_same(self.mean.dim(), noise.dim())?;
        let mut out = self.mean.clone();
        Zip::from(&mut out)
            .and(&self.var)
            .and(noise)
            .for_each(|o, &v, &n| *o += v.sqrt() * n);
        Ok(LatentSeq(out))
    }

    /// Sum of per-element Gaussian log-densities of `x`.
    pub fn log_density(&self, x: ArrayView2<f64>) -> Result<f64> {
        check_same(self.mean.dim(), x.dim())?;
        let mut acc = 0.0;
        Zip::from(&self.mean)
            .and(&self.var)
            .and(x)
            .for_each(|&m, &v, &xv| acc += gaussian_log_density(xv, m, v));
        Ok(acc)
    }
}

#[inline]
pub fn gaussian_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

pub(crate) fn check_same(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

pub(crate) fn check_variance(var: ArrayView2<f64>) -> Result<()> {
    match var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(i) => Err(Error::Variance(i)),
        None => Ok(()),
    }
}

/// `q(x_t | x_0) = N(sqrt(alpha_bar_t) x_0, (1 - alpha_bar_t) I)`.
pub fn forward_marginal(
    schedule: &DiffusionSchedule,
    x0: &LatentSeq,
    t: usize,
) -> Result<DiagGaussianSeq> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(DiagGaussianSeq {
        mean: x0.0.mapv(|v| ab.sqrt() * v),
        var: Array2::from_elem(x0.0.dim(), 1.0 - ab),
    })
}

/// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) noise`.
pub fn sample_forward(
    schedule: &DiffusionSchedule,
    x0: &LatentSeq,
    t: usize,
    noise: &LatentSeq,
) -> Result<LatentSeq> {
    schedule.check_step(t)?;
    check_same(x0.0.dim(), noise.0.dim())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(LatentSeq(Zip::from(&x0.0).and(&noise.0).map_collect(|&x, &n| a * x + b * n)))
}

fn affine_pair(a: f64, x: ArrayView2<f64>, b: f64, y: ArrayView2<f64>) -> Array2<f64> {
    Zip::from(x).and(y).map_collect(|&xv, &yv| a * xv + b * yv)
}

/// Mean of the approximate posterior `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean(
    schedule: &DiffusionSchedule,
    x0: &LatentSeq,
    xt: &LatentSeq,
    t: usize,
) -> Result<LatentSeq> {
    schedule.check_step(t)?;
    check_same(x0.0.dim(), xt.0.dim())?;
    let (c0, ct) = schedule.posterior_coefficients(t);
    Ok(LatentSeq(affine_pair(c0, x0.view(), ct, xt.view())))
}

/// Training target `q(x_{t-1} | x_t, X)`: the posterior mean with the encoder
/// mean standing in for `x_0`, and the interpolated encoder variance.
pub fn posterior_latent_target(
    schedule: &DiffusionSchedule,
    mu_psi: ArrayView2<f64>,
    sigma2_psi: ArrayView2<f64>,
    xt: &LatentSeq,
    t: usize,
) -> Result<DiagGaussianSeq> {
    schedule.check_step(t)?;
    check_same(mu_psi.dim(), xt.0.dim())?;
    check_same(mu_psi.dim(), sigma2_psi.dim())?;
    let var = schedule.interpolated_variance(sigma2_psi, t)?;
    let (c0, ct) = schedule.posterior_coefficients(t);
    let mean = affine_pair(c0, mu_psi, ct, xt.view());
    Ok(DiagGaussianSeq { mean, var })
}

/// Elementwise `KL[N(m_p, v_p) || N(m_q, v_q)]`.
#[inline]
pub fn kl_scalar(m_p: f64, v_p: f64, m_q: f64, v_q: f64) -> f64 {
    let d = m_p - m_q;
    0.5 * ((v_q / v_p).ln() + (v_p + d * d) / v_q - 1.0)
}

/// `KL[p || q]` summed over all frames and dimensions.
pub fn kl_diag_gaussian(p: &DiagGaussianSeq, q: &DiagGaussianSeq) -> Result<f64> {
    check_same(p.mean.dim(), q.mean.dim())?;
    check_same(p.mean.dim(), p.var.dim())?;
    check_same(q.mean.dim(), q.var.dim())?;
    check_variance(p.var.view())?;
    check_variance(q.var.view())?;
    let mut acc = 0.0;
    Zip::from(&p.mean)
        .and(&p.var)
        .and(&q.mean)
        .and(&q.var)
        .for_each(|&mp, &vp, &mq, &vq| acc += kl_scalar(mp, vp, mq, vq));
    Ok(acc.max(0.0))
}

/// Model mean when the network predicts `x_0`.
pub fn mean_from_data_prediction(
    schedule: &DiffusionSchedule,
    x0_hat: &LatentSeq,
    xt: &LatentSeq,
    t: usize,
) -> Result<LatentSeq> {
    posterior_mean(schedule, x0_hat, xt, t)
}

/// Coefficients `(c_eps, c_xt)` of the noise-prediction mean `c_xt * x_t + c_eps * eps`.
pub fn noise_prediction_coefficients(schedule: &DiffusionSchedule, t: usize) -> (f64, f64) {
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    (-schedule.beta(t) / (a.sqrt() * (1.0 - ab).sqrt()), 1.0 / a.sqrt())
}

/// Model mean when the network predicts the injected noise.
pub fn mean_from_noise_prediction(
    schedule: &DiffusionSchedule,
    eps_hat: &LatentSeq,
    xt: &LatentSeq,
    t: usize,
) -> Result<LatentSeq> {
    schedule.check_step(t)?;
    check_same(eps_hat.0.dim(), xt.0.dim())?;
    let (ce, ct) = noise_prediction_coefficients(schedule, t);
    Ok(LatentSeq(affine_pair(ce, eps_hat.view(), ct, xt.view())))
}

/// Inverts [`sample_forward`]: `x_0 = (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn reconstruct_x0_from_noise(
    schedule: &DiffusionSchedule,
    xt: &LatentSeq,
    eps: &LatentSeq,
    t: usize,
) -> Result<LatentSeq> {
    schedule.check_step(t)?;
    check_same(xt.0.dim(), eps.0.dim())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(LatentSeq(
        Zip::from(&xt.0).and(&eps.0).map_collect(|&x, &e| (x - b * e) / a),
    ))
}
