//! Diffusion noise schedule, closed-form forward noising and the reverse posterior mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-step coefficients `β_t`, `α_t = 1 - β_t`, `ᾱ_t = ∏ α_s`, with `σ_t² = β_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::invalid(format!(
                "beta at step {} is {b}, must lie in (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// `steps` betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "diffusion step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `β_t` for 1-based `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    /// `(c_t, c_0)` such that the posterior mean is `c_t·x_t + c_0·x̂_0`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        let (a, ab, ab_prev) = (self.alpha(t), self.alpha_bar(t), self.alpha_bar(t - 1));
        let c_t = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let c_0 = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
        Ok((c_t, c_0))
    }
}

/// `√ᾱ_t·x0 + √(1-ᾱ_t)·noise`; `t = 0` returns `x0`.
pub fn diffuse_forward(
    x0: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    if t > schedule.steps() {
        return Err(Error::invalid(format!(
            "diffusion step {t} outside [0, {}]",
            schedule.steps()
        )));
    }
    if x0.shape() != noise.shape() {
        return Err(Error::invalid(format!(
            "noise shape {:?} differs from sample shape {:?}",
            noise.shape(),
            x0.shape()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, e)| s * x + n * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Reverse-process mean with `x0` recovered from `x_t` and the predicted noise.
pub fn posterior_mean(
    x_t: &Tensor,
    predicted_noise: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let (c_t, c_0) = schedule.posterior_coefficients(t)?;
    if x_t.shape() != predicted_noise.shape() {
        return Err(Error::invalid(format!(
            "predicted noise shape {:?} differs from x_t shape {:?}",
            predicted_noise.shape(),
            x_t.shape()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (inv_s, n) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(predicted_noise.data())
        .map(|(&x, &e)| c_t * x + c_0 * (x - n * e) * inv_s)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}
