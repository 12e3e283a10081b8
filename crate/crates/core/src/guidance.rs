//! Mean-shift guidance for the reverse process.
//!
//! Providers look at the current denoised estimate x̂0 (densities in
//! `[0, 1]`) and return a field of the latent's shape. The oracle providers
//! work directly on x̂0: connectivity analysis for floating material and one
//! FEA solve plus an optimality-criteria step for compliance.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::density::{DensityField, THRESHOLD};
use crate::diffusion::{ConvDenoiser, Denoiser, GuidanceSource, GuidanceTerms};
use crate::error::Result;
use crate::kernels::{ChannelName, ConditioningStack};
use crate::problem::ProblemSpec;
use crate::simp::{analyze, compliance_sensitivity, oc_update, SensitivityFilter, SimpConfig};
use crate::tensor_io::TensorFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    None,
    FmOracle,
    ComplianceOracle,
    External,
}

/// Produces a field and a diagnostic scalar from `x̂0`.
pub trait GuidanceProvider: Send + Sync {
    fn kind(&self) -> GuidanceKind;
    fn field(&self, x0: &[f64], t: usize, cond: &ConditioningStack) -> (Vec<f64>, f64);
}

pub struct NoGuidance;

impl GuidanceProvider for NoGuidance {
    fn kind(&self) -> GuidanceKind {
        GuidanceKind::None
    }

    fn field(&self, x0: &[f64], _: usize, _: &ConditioningStack) -> (Vec<f64>, f64) {
        (vec![0.0; x0.len()], 0.0)
    }
}

/// Elements a structure may hang from: load and support neighbourhoods as
/// recorded in the conditioning channels.
pub fn anchors_from_stack(cond: &ConditioningStack) -> Vec<usize> {
    let n = cond.grid.n_elements();
    let mut anchor = vec![false; n];
    for name in [ChannelName::BcMask, ChannelName::LoadX, ChannelName::LoadY] {
        if let Some(ch) = cond.channel(name) {
            for (a, v) in anchor.iter_mut().zip(ch) {
                *a |= *v != 0.0;
            }
        }
    }
    (0..n).filter(|&e| anchor[e]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmOracle {
    /// Sigmoid temperature of the relaxed score.
    pub tau: f64,
    /// Probe patch edge in elements.
    pub probe: usize,
    pub fd_step: f64,
    pub connectivity: Connectivity,
}

impl Default for FmOracle {
    fn default() -> Self {
        Self {
            tau: 0.1,
            probe: 2,
            fd_step: 1e-3,
            connectivity: Connectivity::Eight,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FmOracle {
    /// Elements of solid components that touch no anchor. Without anchors
    /// the largest component counts as the structure.
    pub fn floating_elements(&self, x0: &[f64], cond: &ConditioningStack) -> Vec<usize> {
        let grid = cond.grid;
        let solid: Vec<bool> = x0.iter().map(|&v| v >= THRESHOLD).collect();
        let labels = label_components(&grid, &solid, self.connectivity);
        let anchors = anchors_from_stack(cond);
        let free = if anchors.is_empty() {
            let sizes = labels.sizes();
            let keep = (1..=labels.count).max_by_key(|&c| sizes[c]);
            (1..=labels.count).filter(|&c| Some(c) != keep).collect()
        } else {
            labels.unanchored(&anchors)
        };
        let mut is_free = vec![false; labels.count + 1];
        for c in free {
            is_free[c] = true;
        }
        (0..x0.len()).filter(|&e| labels.labels[e] != 0 && is_free[labels.labels[e]]).collect()
    }

    /// Relaxed amount of floating material: Σ σ((x_e − 0.5)/τ) over the
    /// given elements.
    pub fn score(&self, x0: &[f64], floating: &[usize]) -> f64 {
        floating.iter().map(|&e| sigmoid((x0[e] - THRESHOLD) / self.tau)).sum()
    }

    /// Negative score gradient by central differences over probe patches,
    /// scaled to unit max magnitude. Zero when nothing floats.
    pub fn guidance(&self, x0: &[f64], cond: &ConditioningStack) -> (Vec<f64>, f64) {
        let grid = cond.grid;
        let floating = self.floating_elements(x0, cond);
        let mut field = vec![0.0; x0.len()];
        if floating.is_empty() {
            return (field, 0.0);
        }
        let score = self.score(x0, &floating);
        let p = self.probe.max(1);
        let h = self.fd_step;
        let mut x = x0.to_vec();
        for py in (0..grid.nely).step_by(p) {
            for px in (0..grid.nelx).step_by(p) {
                let patch: Vec<usize> = (py..(py + p).min(grid.nely))
                    .flat_map(|ey| (px..(px + p).min(grid.nelx)).map(move |ex| (ex, ey)))
                    .map(|(ex, ey)| grid.element(ex, ey))
                    .collect();
                for &e in &patch {
                    x[e] = x0[e] + h;
                }
                let up = self.score(&x, &floating);
                for &e in &patch {
                    x[e] = x0[e] - h;
                }
                let down = self.score(&x, &floating);
                for &e in &patch {
                    x[e] = x0[e];
                }
                let g = -(up - down) / (2.0 * h) / patch.len() as f64;
                for &e in &patch {
                    field[e] = g;
                }
            }
        }
        normalize_max_abs(&mut field);
        (field, score)
    }
}

impl GuidanceProvider for FmOracle {
    fn kind(&self) -> GuidanceKind {
        GuidanceKind::FmOracle
    }

    fn field(&self, x0: &[f64], _: usize, cond: &ConditioningStack) -> (Vec<f64>, f64) {
        self.guidance(x0, cond)
    }
}

fn normalize_max_abs(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

/// Compliance guidance from one optimality-criteria step on x̂0: the field is
/// the material the step would add, `max(0, x_oc − x̂0) / move_limit`. It is
/// nonnegative, at most 1, and vanishes at an OC fixed point.
#[derive(Debug, Clone)]
pub struct ComplianceOracle {
    pub problem: ProblemSpec,
    pub simp: SimpConfig,
}

impl ComplianceOracle {
    /// Uses a unit move limit so any volume error can be corrected in one step.
    pub fn new(problem: ProblemSpec) -> Self {
        let simp = SimpConfig {
            move_limit: 1.0,
            ..SimpConfig::for_problem(&problem)
        };
        Self { problem, simp }
    }

    pub fn guidance(&self, x0: &[f64]) -> Result<(Vec<f64>, f64)> {
        let cfg = &self.simp;
        let x = DensityField::new(
            self.problem.grid,
            x0.iter().map(|v| v.clamp(cfg.min_density, 1.0)).collect(),
        )?;
        let (u, c) = analyze(&self.problem, &x, cfg)?;
        let raw = compliance_sensitivity(&x, &u, cfg, &cfg.material)?;
        let filtered = SensitivityFilter::new(x.grid, cfg.filter_radius).apply(&raw, &x.values);
        let next = oc_update(&x, &filtered, cfg)?;
        let field = next
            .values
            .iter()
            .zip(&x.values)
            .map(|(n, o)| (n - o).max(0.0) / cfg.move_limit)
            .collect();
        Ok((field, c))
    }
}

impl GuidanceProvider for ComplianceOracle {
    fn kind(&self) -> GuidanceKind {
        GuidanceKind::ComplianceOracle
    }

    fn field(&self, x0: &[f64], _: usize, _: &ConditioningStack) -> (Vec<f64>, f64) {
        match self.guidance(x0) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("compliance guidance skipped: {e}");
                (vec![0.0; x0.len()], f64::NAN)
            }
        }
    }
}

/// A conv-denoiser-shaped network mapping `(2x̂0 − 1, t, c)` to a guidance
/// field, clipped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ExternalGuidance {
    pub model: ConvDenoiser,
}

impl ExternalGuidance {
    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        Ok(Self {
            model: ConvDenoiser::from_tensor_file(file)?.0,
        })
    }
}

impl GuidanceProvider for ExternalGuidance {
    fn kind(&self) -> GuidanceKind {
        GuidanceKind::External
    }

    fn field(&self, x0: &[f64], t: usize, cond: &ConditioningStack) -> (Vec<f64>, f64) {
        let z: Vec<f64> = x0.iter().map(|v| 2.0 * v - 1.0).collect();
        let out: Vec<f64> = self.model.predict(&z, t, cond).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
        (out, mean)
    }
}

/// Combines a floating-material and a compliance provider with constant
/// per-step weights. A zero weight skips its provider entirely.
pub struct Guidance {
    pub fm: Box<dyn GuidanceProvider>,
    pub compliance: Box<dyn GuidanceProvider>,
    pub s_fm: f64,
    pub s_c: f64,
}

impl Guidance {
    pub fn disabled() -> Self {
        Self {
            fm: Box::new(NoGuidance),
            compliance: Box::new(NoGuidance),
            s_fm: 0.0,
            s_c: 0.0,
        }
    }

    pub fn oracle(problem: &ProblemSpec, s_fm: f64, s_c: f64) -> Self {
        Self {
            fm: Box::new(FmOracle::default()),
            compliance: Box::new(ComplianceOracle::new(problem.clone())),
            s_fm,
            s_c,
        }
    }
}

impl GuidanceSource for Guidance {
    fn terms(&self, _z_t: &[f64], t: usize, x0: &[f64], cond: &ConditioningStack) -> GuidanceTerms {
        let mut terms = GuidanceTerms {
            s_fm: self.s_fm,
            s_c: self.s_c,
            ..GuidanceTerms::none()
        };
        if self.s_fm != 0.0 {
            terms.g_fm = self.fm.field(x0, t, cond).0;
        }
        if self.s_c != 0.0 {
            terms.g_c = self.compliance.field(x0, t, cond).0;
        }
        for g in [&terms.g_fm, &terms.g_c] {
            assert!(g.iter().all(|v| v.is_finite()), "non-finite guidance field");
        }
        terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_stack, KernelParams, ModelVariant};
    use crate::simp::run_simp;

    fn cantilever_stack(p: &ProblemSpec) -> ConditioningStack {
        build_stack(p, ModelVariant::TopoDiffFf, None, &KernelParams::default()).unwrap()
    }

    #[test]
    fn solid_slab_has_no_fm_field() {
        let p = ProblemSpec::cantilever(8, 6, 0.4).unwrap();
        let cond = cantilever_stack(&p);
        let (f, s) = FmOracle::default().guidance(&vec![1.0; 48], &cond);
        assert!(f.iter().all(|&v| v == 0.0));
        assert_eq!(s, 0.0);
    }

    #[test]
    fn island_gets_negative_field() {
        let p = ProblemSpec::cantilever(10, 6, 0.4).unwrap();
        let cond = cantilever_stack(&p);
        let g = p.grid;
        // a horizontal bar from the clamped edge to the load, plus an island
        let mut x = vec![0.0; 60];
        for ex in 0..10 {
            x[g.element(ex, 2)] = 1.0;
            x[g.element(ex, 3)] = 1.0;
        }
        let island = [g.element(5, 5), g.element(6, 5)];
        for &e in &island {
            x[e] = 0.9;
        }
        let (f, score) = FmOracle::default().guidance(&x, &cond);
        assert!(score > 0.0);
        let min = f.iter().cloned().fold(0.0, f64::min);
        assert_eq!(min, -1.0);
        for &e in &island {
            assert!(f[e] < 0.0);
        }
        for ex in 0..10 {
            assert_eq!(f[g.element(ex, 2)], 0.0);
        }
    }

    #[test]
    fn compliance_field_shrinks_at_optimum() {
        let p = ProblemSpec::cantilever(16, 16, 0.4).unwrap();
        let cfg = SimpConfig::for_problem(&p).with_max_iters(200);
        let opt = run_simp(&p, &cfg, &DensityField::uniform(p.grid, 0.4)).unwrap();
        let oracle = ComplianceOracle::new(p.clone());
        let (start, _) = oracle.guidance(&vec![0.4; 256]).unwrap();
        let (end, _) = oracle.guidance(&opt.final_density.values).unwrap();
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        assert!(start.iter().chain(&end).all(|&v| (0.0..=1.0).contains(&v)));
        assert!(max(&end) < 0.1 * max(&start), "{} vs {}", max(&end), max(&start));
    }

    #[test]
    fn zero_scales_skip_providers() {
        let p = ProblemSpec::cantilever(6, 4, 0.4).unwrap();
        let cond = cantilever_stack(&p);
        let terms = Guidance::oracle(&p, 0.0, 0.0).terms(&[0.0; 24], 3, &[0.5; 24], &cond);
        assert!(terms.is_disabled());
    }
}
