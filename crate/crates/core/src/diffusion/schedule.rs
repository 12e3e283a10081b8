use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// Reverse-process variance σ_t².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// β̃_t, the true posterior variance.
    #[default]
    Posterior,
    /// β_t.
    Beta,
}

/// Fixed variance schedule over timesteps `1..=T`.
///
/// Vectors are indexed by `t - 1`; `alpha_bar(0)` is 1 by convention.
/// A respaced schedule additionally remembers which training timestep each
/// of its steps stands for, so the denoiser is queried at the timesteps it
/// was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub posterior_variances: Vec<f64>,
    pub model_timesteps: Vec<usize>,
}

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Linear β from `1e-4` to `2e-2` at T = 1000. Shorter schedules scale both
/// ends by `1000 / T` so that ᾱ_T stays near zero, and cap β at 0.999.
pub fn make_schedule(t_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_max < 2 {
        return Err(invalid(format!("schedule needs T >= 2, got {t_max}")));
    }
    let ScheduleKind::Linear = kind;
    let scale = 1000.0 / t_max as f64;
    let (lo, hi) = (BETA_START * scale, BETA_END * scale);
    let betas = (0..t_max)
        .map(|i| (lo + (hi - lo) * i as f64 / (t_max - 1) as f64).min(0.999))
        .collect();
    NoiseSchedule::from_betas(betas, (1..=t_max).collect())
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>, model_timesteps: Vec<usize>) -> Result<Self> {
        if betas.is_empty() || betas.len() != model_timesteps.len() {
            return Err(invalid("schedule betas and timesteps must be nonempty and aligned"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_variances = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
            model_timesteps,
        })
    }

    /// Number of steps T.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidInput(format!("timestep {t} outside 1..={}", self.len())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variances[t - 1]
    }

    pub fn sigma2(&self, t: usize, kind: VarianceKind) -> f64 {
        match kind {
            VarianceKind::Posterior => self.posterior_variance(t),
            VarianceKind::Beta => self.beta(t),
        }
    }

    /// Training timestep the denoiser sees at step `t`.
    pub fn model_timestep(&self, t: usize) -> usize {
        self.model_timesteps[t - 1]
    }

    /// Coefficients `(c_x0, c_zt)` of the Gaussian posterior mean
    /// μ̃ = c_x0·x0 + c_zt·z_t.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c_x0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let c_zt = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c_x0, c_zt)
    }

    /// Evenly strided subsequence of `steps` timesteps with betas recomputed
    /// so the cumulative products agree with the original at the kept steps.
    pub fn respace(&self, steps: usize) -> Result<Self> {
        let t_max = self.len();
        if steps == 0 || steps > t_max {
            return Err(invalid(format!("cannot respace {t_max} steps to {steps}")));
        }
        if steps == t_max {
            return Ok(self.clone());
        }
        let kept: Vec<usize> = if steps == 1 {
            vec![t_max]
        } else {
            (0..steps)
                .map(|i| {
                    let x = 1.0 + i as f64 * (t_max - 1) as f64 / (steps - 1) as f64;
                    x.round() as usize
                })
                .collect()
        };
        let mut betas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for &k in &kept {
            let ab = self.alpha_bar(k);
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        let model_timesteps = kept.iter().map(|&k| self.model_timestep(k)).collect();
        Self::from_betas(betas, model_timesteps)
    }
}

/// ELBO weight `w_t = β_t² / (2 σ_t² α_t (1 − ᾱ_t))` on the noise-prediction
/// loss.
pub fn elbo_weight(beta: f64, sigma2: f64, alpha: f64, alpha_bar: f64) -> f64 {
    beta * beta / (2.0 * sigma2 * alpha * (1.0 - alpha_bar))
}

/// `z_t = √ᾱ_t x0 + √(1 − ᾱ_t) eps`; `t = 0` returns `x0`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > schedule.len() {
        return Err(invalid(format!("timestep {t} outside 0..={}", schedule.len())));
    }
    if x0.len() != eps.len() {
        return Err(invalid("x0 and eps differ in shape"));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn posterior_mean(z_t: &[f64], x0: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let (c0, ct) = schedule.posterior_coefficients(t);
    x0.iter().zip(z_t).map(|(x, z)| c0 * x + ct * z).collect()
}

/// Denoised estimate `x̂0 = (z_t − √(1 − ᾱ_t) ε) / √ᾱ_t`.
pub fn predict_x0(z_t: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    z_t.iter().zip(eps).map(|(z, e)| (z - n * e) / s).collect()
}
