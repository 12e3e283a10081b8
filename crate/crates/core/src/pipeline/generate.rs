use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::diffusion::{sample, Denoiser, GuidanceSource, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::fea::Material;
use crate::guidance::Guidance;
use crate::kernels::{build_stack, solid_fields, ConditioningStack, KernelParams, ModelVariant};
use crate::metrics::EvaluationRecord;
use crate::problem::ProblemSpec;
use crate::simp::{analyze, refine_with, run_simp, SimpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSettings {
    pub s_fm: f64,
    pub s_c: f64,
}

impl Default for GuidanceSettings {
    /// Off; the scales are experimental.
    fn default() -> Self {
        Self { s_fm: 0.0, s_c: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub variant: ModelVariant,
    pub steps: usize,
    pub refine_iters: usize,
    pub seed: u64,
    pub kernel: KernelParams,
    pub guidance: GuidanceSettings,
    /// Each timed phase runs this many times; the median is reported.
    pub timing_repeats: usize,
}

impl GenerateConfig {
    pub fn new(variant: ModelVariant, steps: usize, refine_iters: usize, seed: u64) -> Self {
        Self {
            variant,
            steps,
            refine_iters,
            seed,
            kernel: KernelParams::default(),
            guidance: GuidanceSettings::default(),
            timing_repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub raw: DensityField,
    pub refined: DensityField,
    pub raw_record: EvaluationRecord,
    pub refined_record: EvaluationRecord,
    /// Set when refinement failed; `refined` then equals `raw`.
    pub refine_error: Option<String>,
}

/// Runs `f` `repeats` times (at least once); returns the last result and the
/// median wall time in seconds.
pub fn timed<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        last = Some(f()?);
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok((last.expect("ran at least once"), times[times.len() / 2]))
}

/// Conditioning for a variant, including the solid-domain FEA solve for
/// field-conditioned variants.
pub fn conditioning(problem: &ProblemSpec, variant: ModelVariant, kernel: &KernelParams) -> Result<ConditioningStack> {
    let fields = if variant.uses_fields() {
        Some(solid_fields(problem, &Material::default())?)
    } else {
        None
    };
    build_stack(problem, variant, fields.as_ref(), kernel)
}

/// Compliance of a continuous density; a failed solve counts as infinite.
pub fn evaluate_compliance(problem: &ProblemSpec, density: &DensityField) -> f64 {
    match analyze(problem, density, &SimpConfig::for_problem(problem)) {
        Ok((_, c)) => c,
        Err(e) => {
            log::warn!("compliance evaluation failed: {e}");
            f64::INFINITY
        }
    }
}

/// The problem's stored baseline, or a fresh full SIMP run when absent.
pub fn baseline_compliance(problem: &ProblemSpec) -> Result<f64> {
    if let Some(c) = problem.optimal_compliance {
        return Ok(c);
    }
    let cfg = SimpConfig::for_problem(problem);
    let trace = run_simp(problem, &cfg, &DensityField::uniform(problem.grid, problem.vf_target))?;
    Ok(trace.final_compliance)
}

/// Conditioning, sampling, optional SIMP refinement and evaluation of both
/// the raw and the refined topology.
pub fn generate_and_refine(
    id: &str,
    problem: &ProblemSpec,
    model: &(dyn Denoiser + Sync),
    training: &NoiseSchedule,
    config: &GenerateConfig,
) -> Result<GenerationOutput> {
    problem.validate()?;
    if let Some(c) = model.cond_channels() {
        if c != config.variant.channels().len() {
            return Err(Error::InvalidConfiguration(format!(
                "checkpoint expects {c} conditioning channels, variant {} provides {}",
                config.variant,
                config.variant.channels().len()
            )));
        }
    }
    let c_opt = baseline_compliance(problem)?;
    let (stack, processing) = timed(config.timing_repeats, || conditioning(problem, config.variant, &config.kernel))?;
    let guidance = if config.variant.guided() {
        Guidance::oracle(problem, config.guidance.s_fm, config.guidance.s_c)
    } else {
        Guidance::disabled()
    };
    let source: Option<&dyn GuidanceSource> = if config.variant.guided() { Some(&guidance) } else { None };
    let sampler = SamplerConfig::new(config.steps, config.seed);
    let (raw, sampling) = timed(config.timing_repeats, || sample(model, &stack, training, &sampler, source))?;

    let record = |d: &DensityField, processing_s: f64| {
        EvaluationRecord::evaluate(
            id,
            d,
            evaluate_compliance(problem, d),
            c_opt,
            problem.vf_target,
            &problem.loads,
            &problem.bcs,
            sampling,
            processing_s,
        )
    };
    let raw_record = record(&raw, processing)?;
    if config.refine_iters == 0 {
        return Ok(GenerationOutput {
            refined: raw.clone(),
            refined_record: raw_record.clone(),
            raw,
            raw_record,
            refine_error: None,
        });
    }
    let simp = SimpConfig::for_problem(problem);
    let refined = timed(config.timing_repeats, || refine_with(&raw, problem, &simp, config.refine_iters));
    let (refined, refine_error, refine_s) = match refined {
        Ok((trace, t)) => (trace.final_density, None, t),
        Err(e) => {
            log::warn!("refinement of {id} failed: {e}");
            (raw.clone(), Some(e.to_string()), 0.0)
        }
    };
    let refined_record = record(&refined, processing + refine_s)?;
    Ok(GenerationOutput {
        raw,
        refined,
        raw_record,
        refined_record,
        refine_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ConvConfig, ConvDenoiser, ScheduleKind};

    fn setup() -> (ProblemSpec, ConvDenoiser, NoiseSchedule) {
        let mut p = ProblemSpec::cantilever(8, 6, 0.4).unwrap();
        p.optimal_compliance = Some(50.0);
        let m = ConvDenoiser::new(ConvConfig { cond_channels: 6, hidden: 4, embed_dim: 4 }, 3).unwrap();
        (p, m, make_schedule(100, ScheduleKind::Linear).unwrap())
    }

    #[test]
    fn zero_refine_iters_returns_raw() {
        let (p, m, s) = setup();
        let mut cfg = GenerateConfig::new(ModelVariant::TopoDiffFf, 10, 0, 1);
        cfg.timing_repeats = 1;
        let out = generate_and_refine("a", &p, &m, &s, &cfg).unwrap();
        assert_eq!(out.raw, out.refined);
        assert_eq!(out.raw_record, out.refined_record);
        let r = &out.raw_record;
        assert_eq!(r.inference_s, r.sampling_s + r.processing_s);
    }

    #[test]
    fn refinement_is_deterministic_and_timed() {
        let (p, m, s) = setup();
        let mut cfg = GenerateConfig::new(ModelVariant::TopoDiffFfSimp, 10, 3, 1);
        cfg.timing_repeats = 1;
        let a = generate_and_refine("a", &p, &m, &s, &cfg).unwrap();
        let b = generate_and_refine("a", &p, &m, &s, &cfg).unwrap();
        assert_eq!(a.refined, b.refined);
        assert!(a.refine_error.is_none());
        assert!(a.refined_record.processing_s >= a.raw_record.processing_s);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (p, _, s) = setup();
        let m = ConvDenoiser::new(ConvConfig { cond_channels: 2, hidden: 2, embed_dim: 2 }, 0).unwrap();
        let cfg = GenerateConfig::new(ModelVariant::TopoDiffFf, 5, 0, 1);
        assert!(generate_and_refine("a", &p, &m, &s, &cfg).is_err());
    }
}
