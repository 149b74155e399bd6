//! Diffusion noise schedule and the quantities derived from it.
//!
//! Steps are 1-based throughout: `t` ranges over `1..=steps()`. The convention
//! `alpha_bar(0) = 1` makes the `t = 1` posterior terms well defined.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Largest number of steps accepted by the constructors.
pub const MAX_STEPS: usize = 10_000;

/// Precomputed `beta`, `alpha`, `alpha_bar` and `beta_bar` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear interpolation of `beta` from `beta_start` at `t = 1` to `beta_end` at `t = steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Schedule(format!("need at least 2 steps, got {steps}")));
        }
        if steps > MAX_STEPS {
            return Err(Error::Schedule(format!("at most {MAX_STEPS} steps, got {steps}")));
        }
        if !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::Schedule("beta bounds must be finite".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let last = (steps - 1) as f64;
        let beta = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / last)
            .collect();
        Self::from_betas(beta)
    }

    /// Builds the derived tables from an explicit `beta` sequence.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 || beta.len() > MAX_STEPS {
            return Err(Error::Schedule(format!(
                "step count {} outside 2..={MAX_STEPS}",
                beta.len()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta value {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_bar = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            beta_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::Step {
                t,
                steps: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `alpha_bar(t - 1)`, equal to 1 at `t = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// Approximate-posterior variance `(1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t)`.
    pub fn beta_bar(&self, t: usize) -> f64 {
        self.beta_bar[t - 1]
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean `c_x0 * x0 + c_xt * xt`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        if t == 1 {
            // 1 - (1 - beta_1) need not round back to beta_1
            return (1.0, 0.0);
        }
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let c_x0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let c_xt = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c_x0, c_xt)
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_bars(&self) -> &[f64] {
        &self.beta_bar
    }

    /// Scalar form of [`interpolated_variance`](Self::interpolated_variance) with no checks.
    #[inline]
    pub fn interpolate(&self, sigma2: f64, t: usize) -> f64 {
        let bb = self.beta_bar(t);
        bb + (1.0 - bb) * sigma2
    }

    /// Variance that moves from `sigma2` at `t = 1` towards 1 as `beta_bar` grows:
    /// `beta_bar(t) + (1 - beta_bar(t)) * sigma2`, elementwise.
    pub fn interpolated_variance(&self, sigma2: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.check_step(t)?;
        if let Some(i) = sigma2.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Variance(i));
        }
        Ok(sigma2.mapv(|v| self.interpolate(v, t)))
    }
}
