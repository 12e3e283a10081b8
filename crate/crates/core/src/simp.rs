//! Density-based minimum-compliance optimization with optimality-criteria
//! updates and mesh-independent sensitivity filtering.

use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::error::{invalid, Error, Result};
use crate::fea::{
    assemble_stiffness, compliance, element_energies, element_stiffness, solve_displacement,
    DisplacementField, Grid, Material,
};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpConfig {
    pub penal: f64,
    /// Sensitivity-filter radius in elements.
    pub filter_radius: f64,
    pub move_limit: f64,
    pub max_iters: usize,
    pub vf_target: f64,
    pub bisection_tol: f64,
    /// Lower bound on densities; keeps the multiplicative update from
    /// freezing elements at zero.
    pub min_density: f64,
    /// Early stop once the largest density change falls below this.
    pub change_tol: f64,
    pub material: Material,
}

impl Default for SimpConfig {
    fn default() -> Self {
        Self {
            penal: 3.0,
            filter_radius: 1.5,
            move_limit: 0.2,
            max_iters: 100,
            vf_target: 0.5,
            bisection_tol: 1e-4,
            min_density: 1e-3,
            change_tol: 0.01,
            material: Material::default(),
        }
    }
}

impl SimpConfig {
    pub fn for_problem(problem: &ProblemSpec) -> Self {
        Self {
            vf_target: problem.vf_target,
            ..Self::default()
        }
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penal >= 1.0) {
            return Err(Error::InvalidConfiguration(format!("penal {} < 1", self.penal)));
        }
        if !(self.filter_radius >= 1.0) {
            return Err(Error::InvalidConfiguration(format!(
                "filter radius {} < 1",
                self.filter_radius
            )));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::InvalidConfiguration(format!(
                "move limit {} outside (0, 1]",
                self.move_limit
            )));
        }
        if !(self.vf_target > 0.0 && self.vf_target < 1.0) {
            return Err(Error::InvalidConfiguration(format!(
                "volume fraction {} outside (0, 1)",
                self.vf_target
            )));
        }
        if !(self.min_density >= 0.0 && self.min_density < self.vf_target) {
            return Err(Error::InvalidConfiguration(format!(
                "min density {} must lie in [0, vf_target)",
                self.min_density
            )));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::InvalidConfiguration("bisection tolerance must be positive".into()));
        }
        self.material.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Compliance of the design at the start of each iteration.
    pub compliances: Vec<f64>,
    /// Largest per-element density change made by each iteration.
    pub max_changes: Vec<f64>,
    pub final_density: DensityField,
    /// Compliance of `final_density`.
    pub final_compliance: f64,
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn iterations(&self) -> usize {
        self.compliances.len()
    }
}

/// Adjoint sensitivity `∂c/∂x_e = -p x_e^(p-1) (E_solid - E_void) u_eᵀ k0 u_e`.
pub fn compliance_sensitivity(
    density: &DensityField,
    u: &DisplacementField,
    config: &SimpConfig,
    material: &Material,
) -> Result<Vec<f64>> {
    density.validate()?;
    if u.u.len() != density.grid.n_dofs() {
        return Err(invalid("displacement does not match density grid"));
    }
    let ke = element_stiffness(material.poisson);
    let energies = element_energies(&density.grid, &u.u, &ke);
    let span = material.young_solid - material.young_void;
    Ok(density
        .values
        .iter()
        .zip(energies)
        .map(|(&x, ue)| -config.penal * x.powf(config.penal - 1.0) * span * ue.max(0.0))
        .collect())
}

/// Precomputed neighbourhood weights `max(0, radius - dist)` between element
/// centroids.
#[derive(Debug, Clone)]
pub struct SensitivityFilter {
    radius: f64,
    neighbours: Vec<Vec<(usize, f64)>>,
}

impl SensitivityFilter {
    pub fn new(grid: Grid, radius: f64) -> Self {
        let reach = radius.ceil().max(0.0) as isize;
        let mut neighbours = Vec::with_capacity(grid.n_elements());
        for e in 0..grid.n_elements() {
            let (ex, ey) = grid.element_position(e);
            let mut list = Vec::new();
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (fx, fy) = (ex as isize + dx, ey as isize + dy);
                    if fx < 0 || fy < 0 || fx >= grid.nelx as isize || fy >= grid.nely as isize {
                        continue;
                    }
                    let w = radius - ((dx * dx + dy * dy) as f64).sqrt();
                    if w > 0.0 {
                        list.push((grid.element(fx as usize, fy as usize), w));
                    }
                }
            }
            neighbours.push(list);
        }
        Self { radius, neighbours }
    }

    /// Density-weighted filter of the classic 88-line code:
    /// `Σ H_ef x_f g_f / (max(1e-3, x_e) Σ H_ef)`.
    pub fn apply(&self, raw: &[f64], density: &[f64]) -> Vec<f64> {
        if self.radius < 1.0 {
            return raw.to_vec();
        }
        self.neighbours
            .iter()
            .enumerate()
            .map(|(e, list)| {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(f, w) in list {
                    num += w * density[f] * raw[f];
                    den += w;
                }
                num / (density[e].max(1e-3) * den)
            })
            .collect()
    }
}

pub fn filter_sensitivities(raw: &[f64], density: &DensityField, radius: f64) -> Vec<f64> {
    SensitivityFilter::new(density.grid, radius).apply(raw, &density.values)
}

fn oc_candidate(x: f64, sens: f64, lambda: f64, config: &SimpConfig) -> f64 {
    let lower = (x - config.move_limit).max(config.min_density);
    let upper = (x + config.move_limit).min(1.0).max(lower);
    let scale = (-sens / lambda).max(0.0).sqrt();
    (x * scale).clamp(lower, upper)
}

/// Optimality-criteria update `x·sqrt(-g/λ)` clamped to the move limit and
/// density bounds, with λ found by bisection so the mean density hits the
/// target. Returns the new field and λ.
pub fn oc_update_with_multiplier(
    density: &DensityField,
    sensitivity: &[f64],
    config: &SimpConfig,
) -> Result<(DensityField, f64)> {
    if sensitivity.len() != density.values.len() {
        return Err(invalid("sensitivity length does not match density"));
    }
    let n = density.values.len() as f64;
    let x = &density.values;
    let volume = |lambda: f64| -> f64 {
        x.iter()
            .zip(sensitivity)
            .map(|(&xi, &g)| oc_candidate(xi, g, lambda, config))
            .sum::<f64>()
            / n
    };
    let target = config.vf_target;
    let g_max = sensitivity.iter().map(|g| -g).fold(0.0, f64::max);
    if !(g_max > 0.0) || !g_max.is_finite() {
        let low = volume(f64::INFINITY);
        return Err(Error::InfeasibleVolume {
            target,
            low,
            high: low,
        });
    }
    // volume is non-increasing in λ; bracket in log space
    let mut lo = g_max * 1e-30;
    let mut hi = g_max * 1e30;
    let (v_lo, v_hi) = (volume(lo), volume(hi));
    let saturated = |lambda: f64| {
        let values = x
            .iter()
            .zip(sensitivity)
            .map(|(&xi, &g)| oc_candidate(xi, g, lambda, config))
            .collect();
        (DensityField { grid: density.grid, values }, lambda)
    };
    // target out of reach within one move: step as far toward it as allowed
    if target > v_lo + config.bisection_tol {
        log::debug!("volume target {target} above reachable {v_lo}; saturating");
        return Ok(saturated(lo));
    }
    if target < v_hi - config.bisection_tol {
        log::debug!("volume target {target} below reachable {v_hi}; saturating");
        return Ok(saturated(hi));
    }
    let mut lambda = (lo * hi).sqrt();
    for _ in 0..300 {
        lambda = (lo * hi).sqrt();
        let v = volume(lambda);
        if (v - target).abs() <= 1e-3 * config.bisection_tol {
            break;
        }
        if v > target {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let values: Vec<f64> = x
        .iter()
        .zip(sensitivity)
        .map(|(&xi, &g)| oc_candidate(xi, g, lambda, config))
        .collect();
    let out = DensityField {
        grid: density.grid,
        values,
    };
    let achieved = out.mean();
    if (achieved - target).abs() > config.bisection_tol {
        return Err(Error::InfeasibleVolume {
            target,
            low: v_hi,
            high: v_lo,
        });
    }
    Ok((out, lambda))
}

pub fn oc_update(
    density: &DensityField,
    sensitivity: &[f64],
    config: &SimpConfig,
) -> Result<DensityField> {
    oc_update_with_multiplier(density, sensitivity, config).map(|(d, _)| d)
}

/// Assemble, solve and return `(U, c)` for a density.
pub fn analyze(
    problem: &ProblemSpec,
    density: &DensityField,
    config: &SimpConfig,
) -> Result<(DisplacementField, f64)> {
    let k = assemble_stiffness(density, config.penal, &config.material)?;
    let u = solve_displacement(&k, &problem.loads, &problem.bcs)?;
    let c = compliance(&u, &problem.loads)?;
    Ok((u, c))
}

fn optimize(
    problem: &ProblemSpec,
    config: &SimpConfig,
    init: &DensityField,
    early_stop: bool,
) -> Result<OptimizationTrace> {
    config.validate()?;
    init.validate()?;
    if init.grid != problem.grid {
        return Err(invalid("initial density grid differs from problem grid"));
    }
    let filter = SensitivityFilter::new(problem.grid, config.filter_radius);
    let mut x = init.clone();
    let mut compliances = Vec::with_capacity(config.max_iters);
    let mut max_changes = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for _ in 0..config.max_iters {
        let (u, c) = analyze(problem, &x, config)?;
        let raw = compliance_sensitivity(&x, &u, config, &config.material)?;
        let filtered = filter.apply(&raw, &x.values);
        let next = oc_update(&x, &filtered, config)?;
        let change = next.max_abs_diff(&x);
        compliances.push(c);
        max_changes.push(change);
        x = next;
        if early_stop && change < config.change_tol {
            converged = true;
            break;
        }
    }
    let (_, final_compliance) = analyze(problem, &x, config)?;
    Ok(OptimizationTrace {
        compliances,
        max_changes,
        final_density: x,
        final_compliance,
        converged,
    })
}

/// Full optimization: stops at `max_iters` or once the largest density change
/// drops below `change_tol`.
pub fn run_simp(
    problem: &ProblemSpec,
    config: &SimpConfig,
    init: &DensityField,
) -> Result<OptimizationTrace> {
    optimize(problem, config, init, true)
}

/// Exactly `n_iters` iterations from `topology`, no early stop.
pub fn refine(
    topology: &DensityField,
    problem: &ProblemSpec,
    n_iters: usize,
) -> Result<OptimizationTrace> {
    refine_with(topology, problem, &SimpConfig::for_problem(problem), n_iters)
}

pub fn refine_with(
    topology: &DensityField,
    problem: &ProblemSpec,
    config: &SimpConfig,
    n_iters: usize,
) -> Result<OptimizationTrace> {
    optimize(problem, &config.with_max_iters(n_iters), topology, false)
}
