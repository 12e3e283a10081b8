use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::{check_shapes, Denoiser};
use super::schedule::{predict_x0, NoiseSchedule, VarianceKind};
use crate::density::DensityField;
use crate::error::Result;
use crate::kernels::ConditioningStack;

/// Mean-shift terms added to the reverse-process mean:
/// `μ + s_c·g_c + s_fm·g_fm`. Empty fields or zero scales contribute nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceTerms {
    pub g_c: Vec<f64>,
    pub g_fm: Vec<f64>,
    pub s_c: f64,
    pub s_fm: f64,
}

impl GuidanceTerms {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_disabled(&self) -> bool {
        (self.s_c == 0.0 || self.g_c.is_empty()) && (self.s_fm == 0.0 || self.g_fm.is_empty())
    }

    pub fn apply(&self, mean: &mut [f64]) {
        for (s, g) in [(self.s_c, &self.g_c), (self.s_fm, &self.g_fm)] {
            if s == 0.0 || g.is_empty() {
                continue;
            }
            assert_eq!(g.len(), mean.len(), "guidance field shape");
            for (m, v) in mean.iter_mut().zip(g) {
                *m += s * v;
            }
        }
        assert!(mean.iter().all(|v| v.is_finite()), "guidance produced a non-finite mean");
    }
}

/// Supplies guidance for one reverse step. `x0_density` is the current
/// denoised estimate mapped to densities and clamped to `[0, 1]`.
pub trait GuidanceSource {
    fn terms(&self, z_t: &[f64], t: usize, x0_density: &[f64], cond: &ConditioningStack) -> GuidanceTerms;
}

/// Densities in `[0, 1]` live in `[-1, 1]` inside the diffusion model.
pub fn to_model_space(density: &[f64]) -> Vec<f64> {
    density.iter().map(|d| 2.0 * d - 1.0).collect()
}

pub fn to_density(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect()
}

/// One ancestral step given the noise prediction:
/// `μ = (z_t − β_t/√(1−ᾱ_t)·ε) / √α_t`, shifted by guidance, plus `σ_t·noise`.
pub fn step_from_eps(
    z_t: &[f64],
    t: usize,
    eps: &[f64],
    guidance: &GuidanceTerms,
    noise: &[f64],
    schedule: &NoiseSchedule,
    variance: VarianceKind,
) -> Vec<f64> {
    let beta = schedule.beta(t);
    let c = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / schedule.alpha(t).sqrt();
    let mut mean: Vec<f64> = z_t.iter().zip(eps).map(|(z, e)| (z - c * e) * inv).collect();
    guidance.apply(&mut mean);
    let sigma = schedule.sigma2(t, variance).sqrt();
    if sigma > 0.0 {
        for (m, n) in mean.iter_mut().zip(noise) {
            *m += sigma * n;
        }
    }
    mean
}

#[allow(clippy::too_many_arguments)]
pub fn p_sample_step(
    denoiser: &(impl Denoiser + ?Sized),
    z_t: &[f64],
    t: usize,
    cond: &ConditioningStack,
    guidance: &GuidanceTerms,
    noise: &[f64],
    schedule: &NoiseSchedule,
    variance: VarianceKind,
) -> Vec<f64> {
    let eps = denoiser.predict(z_t, schedule.model_timestep(t), cond);
    step_from_eps(z_t, t, &eps, guidance, noise, schedule, variance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub variance: VarianceKind,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            variance: VarianceKind::Posterior,
            seed,
        }
    }
}

/// Ancestral sampling along the respaced schedule; returns the final latent
/// in model space, unclamped.
pub fn sample_latent(
    denoiser: &(impl Denoiser + ?Sized),
    cond: &ConditioningStack,
    training: &NoiseSchedule,
    config: &SamplerConfig,
    guidance: Option<&dyn GuidanceSource>,
) -> Result<Vec<f64>> {
    let schedule = training.respace(config.steps)?;
    let n = cond.grid.n_elements();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut z = gauss(n);
    check_shapes(denoiser, &z, cond)?;
    for t in (1..=schedule.len()).rev() {
        let eps = denoiser.predict(&z, schedule.model_timestep(t), cond);
        let terms = match guidance {
            Some(g) => {
                let x0 = to_density(&predict_x0(&z, t, &eps, &schedule));
                g.terms(&z, t, &x0, cond)
            }
            None => GuidanceTerms::none(),
        };
        let noise = if t > 1 { gauss(n) } else { vec![0.0; n] };
        z = step_from_eps(&z, t, &eps, &terms, &noise, &schedule, config.variance);
    }
    Ok(z)
}

/// Sample a topology: [`sample_latent`] mapped back to densities.
pub fn sample(
    denoiser: &(impl Denoiser + ?Sized),
    cond: &ConditioningStack,
    training: &NoiseSchedule,
    config: &SamplerConfig,
    guidance: Option<&dyn GuidanceSource>,
) -> Result<DensityField> {
    let z = sample_latent(denoiser, cond, training, config, guidance)?;
    DensityField::new(cond.grid, to_density(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, posterior_mean, q_sample, ScheduleKind};
    use crate::fea::Grid;

    fn empty_cond(nelx: usize, nely: usize) -> ConditioningStack {
        ConditioningStack::empty(Grid::new(nelx, nely).unwrap())
    }

    #[test]
    fn true_eps_recovers_posterior_mean() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let x0 = [0.4, -0.9, 0.1, 0.75];
        let eps = [1.2, -0.3, 0.05, -2.0];
        for t in [1, 2, 10, 57, 100] {
            let z = q_sample(&x0, t, &eps, &s).unwrap();
            let stub = |_: &[f64], _: usize, _: &ConditioningStack| eps.to_vec();
            let mean = p_sample_step(
                &stub,
                &z,
                t,
                &empty_cond(2, 2),
                &GuidanceTerms::none(),
                &[0.0; 4],
                &s,
                VarianceKind::Posterior,
            );
            let expected = posterior_mean(&z, &x0, t, &s);
            for (a, b) in mean.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn guidance_shift_is_additive() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let z = [0.3, -0.2, 0.9];
        let eps = [0.1, 0.2, -0.4];
        let noise = [0.5, -1.0, 0.25];
        let plain = step_from_eps(&z, 20, &eps, &GuidanceTerms::none(), &noise, &s, VarianceKind::Posterior);
        let zeroed = GuidanceTerms {
            g_c: vec![1.0, 2.0, 3.0],
            g_fm: vec![-1.0, 0.0, 4.0],
            s_c: 0.0,
            s_fm: 0.0,
        };
        assert_eq!(step_from_eps(&z, 20, &eps, &zeroed, &noise, &s, VarianceKind::Posterior), plain);
        let shifted = GuidanceTerms {
            g_c: vec![0.25; 3],
            s_c: 1.0,
            ..GuidanceTerms::none()
        };
        let out = step_from_eps(&z, 20, &eps, &shifted, &noise, &s, VarianceKind::Posterior);
        for (a, b) in out.iter().zip(&plain) {
            assert!((a - b - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn full_respacing_reproduces_chain() {
        let s = make_schedule(40, ScheduleKind::Linear).unwrap();
        let cond = empty_cond(3, 2);
        let stub = |z: &[f64], t: usize, _: &ConditioningStack| z.iter().map(|v| 0.3 * v + t as f64 * 1e-3).collect();
        let a = sample_latent(&stub, &cond, &s, &SamplerConfig::new(40, 11), None).unwrap();
        let explicit = NoiseSchedule::from_betas(s.betas.clone(), (1..=40).collect()).unwrap();
        let b = sample_latent(&stub, &cond, &explicit, &SamplerConfig::new(40, 11), None).unwrap();
        assert_eq!(a, b);
        let c = sample_latent(&stub, &cond, &s, &SamplerConfig::new(40, 12), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_is_clamped_density() {
        let s = make_schedule(20, ScheduleKind::Linear).unwrap();
        let stub = |z: &[f64], _: usize, _: &ConditioningStack| vec![-3.0; z.len()];
        let d = sample(&stub, &empty_cond(4, 4), &s, &SamplerConfig::new(5, 0), None).unwrap();
        assert!(d.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
