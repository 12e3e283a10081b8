//! Closed-form kernel relaxation of loads and supports, and the
//! multi-channel conditioning stacks fed to the denoiser.
//!
//! Loads act as sources and supports as sinks. With `r` the distance from an
//! element centroid to the source (floored at `r_floor`), the exponential
//! kernels are
//!
//! ```text
//! load:    p̄ (1 - exp(-α / r^β))     → p̄ at the source, → 0 far away
//! support:     exp(-α / r^β)         → 0 at the support, → 1 far away
//! ```
//!
//! The inverse-distance family replaces the load profile with `min(1, r^-k)`
//! and the support profile with its complement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::fea::{assemble_stiffness, solve_displacement, stress_energy_fields, FieldPair, Grid, Loads, Material};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    GreenExp,
    InvR,
    InvR2,
    InvR4,
    InvRBeta,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 5] = [
        KernelVariant::GreenExp,
        KernelVariant::InvR,
        KernelVariant::InvR2,
        KernelVariant::InvR4,
        KernelVariant::InvRBeta,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelVariant::GreenExp => "green_exp",
            KernelVariant::InvR => "inv_r",
            KernelVariant::InvR2 => "inv_r2",
            KernelVariant::InvR4 => "inv_r4",
            KernelVariant::InvRBeta => "inv_r_beta",
        }
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfiguration(format!("unknown kernel '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub beta: f64,
    pub variant: KernelVariant,
    /// Distances below this are clamped to it (half an element).
    pub r_floor: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 2.0,
            variant: KernelVariant::GreenExp,
            r_floor: 0.5,
        }
    }
}

impl KernelParams {
    pub fn with_variant(variant: KernelVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.r_floor > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "kernel parameters must be positive (alpha {}, beta {}, r_floor {})",
                self.alpha, self.beta, self.r_floor
            )));
        }
        Ok(())
    }

    fn exponent(&self) -> f64 {
        match self.variant {
            KernelVariant::GreenExp | KernelVariant::InvRBeta => self.beta,
            KernelVariant::InvR => 1.0,
            KernelVariant::InvR2 => 2.0,
            KernelVariant::InvR4 => 4.0,
        }
    }

    /// Load profile in `[0, 1]`; multiply by the force magnitude.
    pub fn load_profile(&self, r: f64) -> f64 {
        let r = r.max(self.r_floor);
        match self.variant {
            KernelVariant::GreenExp => -(-self.alpha / r.powf(self.beta)).exp_m1(),
            _ => r.powf(-self.exponent()).min(1.0),
        }
    }

    /// Support profile in `[0, 1]`: zero at the support.
    pub fn bc_profile(&self, r: f64) -> f64 {
        let r = r.max(self.r_floor);
        match self.variant {
            KernelVariant::GreenExp => (-self.alpha / r.powf(self.beta)).exp(),
            _ => 1.0 - r.powf(-self.exponent()).min(1.0),
        }
    }
}

/// Euclidean distance from every element centroid to `point`, in element
/// units (node `(ix, iy)` sits at `(ix, iy)`).
pub fn distance_grid(grid: &Grid, point: (f64, f64)) -> Vec<f64> {
    (0..grid.n_elements())
        .map(|e| {
            let (cx, cy) = grid.element_centroid(e);
            (cx - point.0).hypot(cy - point.1)
        })
        .collect()
}

pub fn node_point(grid: &Grid, node: usize) -> (f64, f64) {
    let (ix, iy) = grid.node_position(node);
    (ix as f64, iy as f64)
}

pub fn load_kernel(grid: &Grid, point: (f64, f64), magnitude: f64, params: &KernelParams) -> Vec<f64> {
    distance_grid(grid, point)
        .into_iter()
        .map(|r| magnitude * params.load_profile(r))
        .collect()
}

/// Elementwise minimum of the per-point support kernels (the nearest support
/// dominates). An empty point list gives the neutral field of ones.
pub fn bc_kernel(grid: &Grid, bc_points: &[(f64, f64)], params: &KernelParams) -> Vec<f64> {
    let mut out = vec![1.0f64; grid.n_elements()];
    for &p in bc_points {
        for (o, r) in out.iter_mut().zip(distance_grid(grid, p)) {
            *o = o.min(params.bc_profile(r));
        }
    }
    out
}

/// Sum of per-load kernels weighted by force magnitude, rescaled to peak 1.
pub fn superpose_loads(grid: &Grid, loads: &Loads, params: &KernelParams) -> Vec<f64> {
    let mut out = vec![0.0; grid.n_elements()];
    for l in &loads.entries {
        let k = load_kernel(grid, node_point(grid, l.node), l.magnitude(), params);
        for (o, v) in out.iter_mut().zip(k) {
            *o += v;
        }
    }
    normalize_peak(&mut out);
    out
}

fn normalize_peak(values: &mut [f64]) {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in values.iter_mut() {
            *v /= peak;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelName {
    Vf,
    LoadX,
    LoadY,
    BcMask,
    KernelLoad,
    KernelBc,
    FieldVm,
    FieldEnergy,
}

impl ChannelName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelName::Vf => "vf",
            ChannelName::LoadX => "load_x",
            ChannelName::LoadY => "load_y",
            ChannelName::BcMask => "bc_mask",
            ChannelName::KernelLoad => "kernel_load",
            ChannelName::KernelBc => "kernel_bc",
            ChannelName::FieldVm => "field_vm",
            ChannelName::FieldEnergy => "field_energy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use ChannelName::*;
        [Vf, LoadX, LoadY, BcMask, KernelLoad, KernelBc, FieldVm, FieldEnergy]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

/// Generative model configurations and what they condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    #[serde(rename = "topodiff")]
    TopoDiff,
    #[serde(rename = "topodiff-guided")]
    TopoDiffGuided,
    #[serde(rename = "topodiff-ff")]
    TopoDiffFf,
    #[serde(rename = "topodiff-ff-simp")]
    TopoDiffFfSimp,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::TopoDiff,
        ModelVariant::TopoDiffGuided,
        ModelVariant::TopoDiffFf,
        ModelVariant::TopoDiffFfSimp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::TopoDiff => "topodiff",
            ModelVariant::TopoDiffGuided => "topodiff-guided",
            ModelVariant::TopoDiffFf => "topodiff-ff",
            ModelVariant::TopoDiffFfSimp => "topodiff-ff-simp",
        }
    }

    /// Physical fields (one FEA solve) instead of kernels.
    pub fn uses_fields(&self) -> bool {
        matches!(self, ModelVariant::TopoDiff | ModelVariant::TopoDiffGuided)
    }

    pub fn guided(&self) -> bool {
        matches!(self, ModelVariant::TopoDiffGuided)
    }

    /// Output refined with a few SIMP iterations.
    pub fn refines(&self) -> bool {
        matches!(self, ModelVariant::TopoDiffFfSimp)
    }

    pub fn channels(&self) -> [ChannelName; 6] {
        use ChannelName::*;
        if self.uses_fields() {
            [Vf, LoadX, LoadY, BcMask, FieldVm, FieldEnergy]
        } else {
            [Vf, LoadX, LoadY, BcMask, KernelLoad, KernelBc]
        }
    }

    pub fn constraints_label(&self) -> &'static str {
        if self.uses_fields() {
            "FIELD"
        } else {
            "KERNEL"
        }
    }

    pub fn guidance_label(&self) -> &'static str {
        if self.guided() {
            "CLS+REG"
        } else {
            "COND"
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfiguration(format!("unknown model variant '{s}'")))
    }
}

/// Named per-element channels sharing one grid, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStack {
    pub grid: Grid,
    pub names: Vec<ChannelName>,
    pub data: Vec<f64>,
}

impl ConditioningStack {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            names: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.names.len()
    }

    pub fn push(&mut self, name: ChannelName, values: Vec<f64>) {
        assert_eq!(values.len(), self.grid.n_elements(), "channel shape mismatch");
        self.names.push(name);
        self.data.extend(values);
    }

    pub fn channel(&self, name: ChannelName) -> Option<&[f64]> {
        let n = self.grid.n_elements();
        self.names
            .iter()
            .position(|&c| c == name)
            .map(|i| &self.data[i * n..(i + 1) * n])
    }

    pub fn channel_at(&self, index: usize) -> &[f64] {
        let n = self.grid.n_elements();
        &self.data[index * n..(index + 1) * n]
    }
}

/// Von Mises and strain-energy fields of the fully solid domain under the
/// problem's loads; the expensive preprocessing of field-conditioned models.
pub fn solid_fields(problem: &ProblemSpec, material: &Material) -> Result<FieldPair> {
    let solid = DensityField::uniform(problem.grid, 1.0);
    let k = assemble_stiffness(&solid, 3.0, material)?;
    let u = solve_displacement(&k, &problem.loads, &problem.bcs)?;
    stress_energy_fields(&u, &solid, material, 3.0)
}

fn spread_loads(problem: &ProblemSpec) -> (Vec<f64>, Vec<f64>) {
    let n = problem.grid.n_elements();
    let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
    for l in &problem.loads.entries {
        let around = problem.grid.elements_around_node(l.node);
        let share = 1.0 / around.len() as f64;
        for e in around {
            fx[e] += l.fx * share;
            fy[e] += l.fy * share;
        }
    }
    (fx, fy)
}

pub fn build_stack(
    problem: &ProblemSpec,
    variant: ModelVariant,
    fields: Option<&FieldPair>,
    params: &KernelParams,
) -> Result<ConditioningStack> {
    params.validate()?;
    let grid = problem.grid;
    let fields = if variant.uses_fields() {
        let f = fields.ok_or_else(|| {
            Error::InvalidConfiguration(format!("variant {variant} requires physical fields"))
        })?;
        if f.grid != grid {
            return Err(Error::InvalidConfiguration("field grid differs from problem grid".into()));
        }
        Some(f)
    } else {
        None
    };
    let (load_x, load_y) = spread_loads(problem);
    let mut stack = ConditioningStack::empty(grid);
    for name in variant.channels() {
        let values = match name {
            ChannelName::Vf => vec![problem.vf_target; grid.n_elements()],
            ChannelName::LoadX => load_x.clone(),
            ChannelName::LoadY => load_y.clone(),
            ChannelName::BcMask => {
                let mut mask = vec![0.0; grid.n_elements()];
                for e in problem.support_elements() {
                    mask[e] = 1.0;
                }
                mask
            }
            ChannelName::KernelLoad => superpose_loads(&grid, &problem.loads, params),
            ChannelName::KernelBc => {
                let points: Vec<_> = problem
                    .bcs
                    .fixed_nodes()
                    .into_iter()
                    .map(|n| node_point(&grid, n))
                    .collect();
                let mut k = bc_kernel(&grid, &points, params);
                normalize_peak(&mut k);
                k
            }
            ChannelName::FieldVm => {
                let mut v = fields.expect("checked above").von_mises.clone();
                normalize_peak(&mut v);
                v
            }
            ChannelName::FieldEnergy => {
                let mut v = fields.expect("checked above").strain_energy.clone();
                normalize_peak(&mut v);
                v
            }
        };
        stack.push(name, values);
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::PointLoad;

    #[test]
    fn distance_zero_at_own_centroid() {
        let g = Grid::new(4, 3).unwrap();
        let e = g.element(2, 1);
        let d = distance_grid(&g, g.element_centroid(e));
        assert_eq!(d[e], 0.0);
        assert!(d.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn distance_from_corner_on_3x3() {
        let g = Grid::new(3, 3).unwrap();
        let d = distance_grid(&g, (0.0, 0.0));
        // centroids at (i + 0.5, j + 0.5)
        let expected = |i: f64, j: f64| ((i + 0.5) * (i + 0.5) + (j + 0.5) * (j + 0.5)).sqrt();
        for ey in 0..3 {
            for ex in 0..3 {
                assert_eq!(d[g.element(ex, ey)], expected(ex as f64, ey as f64));
            }
        }
        assert_eq!(d[0], 0.5f64.sqrt());
        assert_eq!(d[g.element(2, 2)], 12.5f64.sqrt());
    }

    #[test]
    fn vanishing_alpha_kills_load_kernel() {
        let g = Grid::new(5, 5).unwrap();
        let p = KernelParams {
            alpha: 1e-300,
            ..KernelParams::default()
        };
        let k = load_kernel(&g, (2.0, 2.0), 3.0, &p);
        assert!(k.iter().all(|&v| v.abs() < 1e-290));
    }

    #[test]
    fn duplicate_bc_points_are_idempotent() {
        let g = Grid::new(6, 4).unwrap();
        let p = KernelParams::default();
        assert_eq!(bc_kernel(&g, &[(0.0, 2.0)], &p), bc_kernel(&g, &[(0.0, 2.0), (0.0, 2.0)], &p));
    }

    #[test]
    fn single_load_superposition_is_rescaled_kernel() {
        let g = Grid::new(6, 4).unwrap();
        let p = KernelParams::default();
        let loads = Loads::single(g.node(6, 2), 0.0, -2.0);
        let sup = superpose_loads(&g, &loads, &p);
        let raw = load_kernel(&g, (6.0, 2.0), 2.0, &p);
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        for (a, b) in sup.iter().zip(&raw) {
            assert!((a - b / peak).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_loads_give_symmetric_field() {
        let g = Grid::new(8, 5).unwrap();
        let p = KernelParams::default();
        let loads = Loads::new(vec![
            PointLoad { node: g.node(2, 5), fx: 0.0, fy: -1.0 },
            PointLoad { node: g.node(6, 5), fx: 0.0, fy: -1.0 },
        ]);
        let k = superpose_loads(&g, &loads, &p);
        for ey in 0..5 {
            for ex in 0..8 {
                let a = k[g.element(ex, ey)];
                let b = k[g.element(7 - ex, ey)];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn superposition_matches_direct_addition() {
        let g = Grid::new(4, 4).unwrap();
        let p = KernelParams::default();
        let loads = Loads::new(vec![
            PointLoad { node: g.node(4, 0), fx: 3.0, fy: 4.0 },
            PointLoad { node: g.node(1, 4), fx: 0.0, fy: -1.0 },
        ]);
        let k = superpose_loads(&g, &loads, &p);
        let mut direct = [0.0; 16];
        for ey in 0..4 {
            for ex in 0..4 {
                let (cx, cy) = (ex as f64 + 0.5, ey as f64 + 0.5);
                let r1 = ((cx - 4.0).powi(2) + cy.powi(2)).sqrt().max(0.5);
                let r2 = ((cx - 1.0).powi(2) + (cy - 4.0).powi(2)).sqrt().max(0.5);
                direct[ey * 4 + ex] = 5.0 * (1.0 - (-10.0 / (r1 * r1)).exp())
                    + 1.0 * (1.0 - (-10.0 / (r2 * r2)).exp());
            }
        }
        let peak = direct.iter().cloned().fold(0.0, f64::max);
        for (a, b) in k.iter().zip(direct) {
            assert!((a - b / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_variants_clip_at_the_source() {
        for v in [KernelVariant::InvR, KernelVariant::InvR2, KernelVariant::InvR4, KernelVariant::InvRBeta] {
            let p = KernelParams::with_variant(v);
            assert_eq!(p.load_profile(0.0), 1.0);
            assert_eq!(p.bc_profile(0.0), 0.0);
            assert!((p.load_profile(4.0) - 4f64.powf(-p.exponent())).abs() < 1e-15);
        }
    }

    #[test]
    fn stack_channels_follow_variant() {
        let p = ProblemSpec::cantilever(8, 4, 0.35).unwrap();
        let params = KernelParams::default();
        let ff = build_stack(&p, ModelVariant::TopoDiffFf, None, &params).unwrap();
        let names: Vec<&str> = ff.names.iter().map(|c| c.as_str()).collect();
        assert_eq!(names, ["vf", "load_x", "load_y", "bc_mask", "kernel_load", "kernel_bc"]);
        assert!(ff.channel(ChannelName::Vf).unwrap().iter().all(|&v| v == 0.35));
        assert!(matches!(
            build_stack(&p, ModelVariant::TopoDiff, None, &params),
            Err(Error::InvalidConfiguration(_))
        ));
        let fields = solid_fields(&p, &Material::default()).unwrap();
        let td = build_stack(&p, ModelVariant::TopoDiff, Some(&fields), &params).unwrap();
        assert!(td.channel(ChannelName::FieldVm).is_some());
        assert!(td.channel(ChannelName::KernelLoad).is_none());
        for name in [ChannelName::KernelLoad, ChannelName::KernelBc] {
            assert!(ff.channel(name).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // the spread load keeps the total force
        let total: f64 = ff.channel(ChannelName::LoadY).unwrap().iter().sum();
        assert!((total + 1.0).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.as_str().parse::<ModelVariant>().unwrap(), v);
        }
        for k in KernelVariant::ALL {
            assert_eq!(k.as_str().parse::<KernelVariant>().unwrap(), k);
        }
        assert!("unet".parse::<ModelVariant>().is_err());
    }
}
