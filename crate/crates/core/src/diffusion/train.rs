use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{check_shapes, Denoiser, TrainableDenoiser};
use super::sampler::to_model_space;
use super::schedule::{elbo_weight, q_sample, NoiseSchedule, VarianceKind};
use crate::error::{invalid, Error, Result};
use crate::kernels::ConditioningStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain noise-prediction MSE.
    #[default]
    Uniform,
    /// Per-timestep ELBO weight w_t.
    Elbo(VarianceKind),
}

impl Weighting {
    pub fn weight(&self, t: usize, schedule: &NoiseSchedule) -> f64 {
        match *self {
            Weighting::Uniform => 1.0,
            Weighting::Elbo(v) => elbo_weight(
                schedule.beta(t),
                schedule.sigma2(t, v),
                schedule.alpha(t),
                schedule.alpha_bar(t),
            ),
        }
    }
}

/// `weight · mean((ε_θ(z_t, t, c) − eps)²)` with `z_t = q_sample(x0, t, eps)`.
/// `x0` is in model space.
#[allow(clippy::too_many_arguments)]
pub fn loss_eps(
    denoiser: &(impl Denoiser + ?Sized),
    x0: &[f64],
    t: usize,
    eps: &[f64],
    cond: &ConditioningStack,
    schedule: &NoiseSchedule,
    weighting: Weighting,
) -> Result<f64> {
    schedule.check_t(t)?;
    check_shapes(denoiser, x0, cond)?;
    let z = q_sample(x0, t, eps, schedule)?;
    let pred = denoiser.predict(&z, schedule.model_timestep(t), cond);
    if pred.len() != eps.len() {
        return Err(invalid("denoiser output shape differs from latent"));
    }
    let mse = pred.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / eps.len() as f64;
    Ok(weighting.weight(t, schedule) * mse)
}

/// A training pair: a topology (densities in `[0, 1]`) and its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub density: Vec<f64>,
    pub cond: ConditioningStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weighting: Weighting::Uniform,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::InvalidConfiguration(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first and last `window` entries.
    pub fn start_end(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.loss_curve.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let n = self.loss_curve.len();
        (mean(&self.loss_curve[..w]), mean(&self.loss_curve[n - w..]))
    }
}

/// Adam on the noise-prediction loss with timesteps drawn uniformly from
/// `1..=T` and fresh Gaussian noise per example.
pub fn train(
    model: &mut impl TrainableDenoiser,
    data: &[TrainingExample],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let targets: Vec<Vec<f64>> = data.iter().map(|ex| to_model_space(&ex.density)).collect();
    for (ex, x0) in data.iter().zip(&targets) {
        check_shapes(&*model, x0, &ex.cond)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_params = model.params().len();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut grad = vec![0.0; n_params];
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        grad.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..data.len());
            let t = rng.random_range(1..=schedule.len());
            let eps: Vec<f64> = (0..targets[i].len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = q_sample(&targets[i], t, &eps, schedule)?;
            let w = config.weighting.weight(t, schedule);
            loss += model.loss_grad(&z, schedule.model_timestep(t), &data[i].cond, &eps, w, &mut grad);
        }
        let scale = 1.0 / config.batch_size as f64;
        loss *= scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { step, loss });
        }
        loss_curve.push(loss);
        let b1t = 1.0 - config.beta1.powi(step as i32 + 1);
        let b2t = 1.0 - config.beta2.powi(step as i32 + 1);
        for (k, p) in model.params_mut().iter_mut().enumerate() {
            let g = grad[k] * scale;
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            *p -= config.learning_rate * (m[k] / b1t) / ((v[k] / b2t).sqrt() + config.adam_eps);
        }
    }
    Ok(TrainReport { loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::{ConvConfig, ConvDenoiser};
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::fea::Grid;
    use crate::kernels::ChannelName;

    fn tiny_data() -> Vec<TrainingExample> {
        let grid = Grid::new(4, 4).unwrap();
        (0..3)
            .map(|k| {
                let density: Vec<f64> = (0..16).map(|e| ((e + k) % 3 == 0) as u8 as f64).collect();
                let mut cond = ConditioningStack::empty(grid);
                cond.push(ChannelName::Vf, vec![0.3; 16]);
                TrainingExample { density, cond }
            })
            .collect()
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let x0 = [0.2, -0.4, 0.9, 1.0];
        let eps = [0.3, 0.1, -1.1, 2.0];
        let cond = ConditioningStack::empty(Grid::new(2, 2).unwrap());
        let perfect = |_: &[f64], _: usize, _: &ConditioningStack| eps.to_vec();
        assert_eq!(loss_eps(&perfect, &x0, 30, &eps, &cond, &s, Weighting::Uniform).unwrap(), 0.0);
        let off = |_: &[f64], _: usize, _: &ConditioningStack| eps.iter().map(|e| e + 0.5).collect();
        let off2 = |_: &[f64], _: usize, _: &ConditioningStack| eps.iter().map(|e| e + 1.0).collect();
        let l1 = loss_eps(&off, &x0, 30, &eps, &cond, &s, Weighting::Uniform).unwrap();
        let l2 = loss_eps(&off2, &x0, 30, &eps, &cond, &s, Weighting::Uniform).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-12);
        assert!(loss_eps(&perfect, &x0, 0, &eps, &cond, &s, Weighting::Uniform).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let mut m = ConvDenoiser::new(ConvConfig { cond_channels: 1, hidden: 4, embed_dim: 4 }, 5).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            steps: 10,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let report = train(&mut m, &tiny_data(), &s, &cfg).unwrap();
        assert_eq!(report.loss_curve.len(), 10);
        assert_eq!(m, before);
    }

    #[test]
    fn divergence_is_reported() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let mut m = ConvDenoiser::new(ConvConfig { cond_channels: 1, hidden: 4, embed_dim: 4 }, 5).unwrap();
        m.params_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            steps: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut m, &tiny_data(), &s, &cfg),
            Err(Error::TrainingFailure { step: 0, .. })
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let mut m = ConvDenoiser::new(ConvConfig { cond_channels: 1, hidden: 4, embed_dim: 4 }, 5).unwrap();
        assert!(train(&mut m, &[], &s, &TrainConfig::default()).is_err());
    }
}
