use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fea::{check_rigid_modes, BoundaryConditions, Grid, Loads};

/// A minimum-compliance problem: domain, loads, supports and volume budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub loads: Loads,
    pub bcs: BoundaryConditions,
    pub vf_target: f64,
    /// Compliance of the reference optimum, when a dataset provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_compliance: Option<f64>,
    /// Free-form label; the synthetic generator uses `"in"` / `"out"` for
    /// in- and out-of-distribution constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl ProblemSpec {
    pub fn new(grid: Grid, loads: Loads, bcs: BoundaryConditions, vf_target: f64) -> Result<Self> {
        let p = Self {
            grid,
            loads,
            bcs,
            vf_target,
            optimal_compliance: None,
            tag: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.vf_target > 0.0 && self.vf_target < 1.0) {
            return Err(invalid(format!("volume fraction {} outside (0, 1)", self.vf_target)));
        }
        self.loads.validate(&self.grid)?;
        if self.loads.entries.is_empty() || self.loads.is_zero() {
            return Err(invalid("problem needs at least one nonzero load"));
        }
        self.bcs.validate(&self.grid)?;
        check_rigid_modes(&self.grid, &self.bcs)?;
        if let Some(c) = self.optimal_compliance {
            if !(c.is_finite() && c > 0.0) {
                return Err(invalid(format!("optimal compliance {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Left edge clamped, unit downward load at the middle of the right edge.
    pub fn cantilever(nelx: usize, nely: usize, vf_target: f64) -> Result<Self> {
        let grid = Grid::new(nelx, nely)?;
        let bcs = BoundaryConditions::fix_nodes((0..=nely).map(|iy| grid.node(0, iy)), true, true);
        let loads = Loads::single(grid.node(nelx, nely / 2), 0.0, -1.0);
        Self::new(grid, loads, bcs, vf_target)
    }

    /// Half MBB beam: symmetry rollers on the left edge, roller at the
    /// bottom-right corner, unit downward load at the top-left corner.
    pub fn half_mbb(nelx: usize, nely: usize, vf_target: f64) -> Result<Self> {
        let grid = Grid::new(nelx, nely)?;
        let symmetry = BoundaryConditions::fix_nodes((0..=nely).map(|iy| grid.node(0, iy)), true, false);
        let roller = BoundaryConditions::fix_nodes([grid.node(nelx, nely)], false, true);
        let loads = Loads::single(grid.node(0, 0), 0.0, -1.0);
        Self::new(grid, loads, symmetry.merged(&roller), vf_target)
    }

    /// Elements touching at least one load node.
    pub fn load_elements(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .loads
            .nodes()
            .flat_map(|n| self.grid.elements_around_node(n))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Elements touching at least one constrained node.
    pub fn support_elements(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .bcs
            .fixed_nodes()
            .into_iter()
            .flat_map(|n| self.grid.elements_around_node(n))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
