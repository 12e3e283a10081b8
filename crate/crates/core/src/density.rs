use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fea::Grid;

/// Binarization level used by every thresholded metric.
pub const THRESHOLD: f64 = 0.5;

/// Per-element material densities, row-major (`ey * nelx + ex`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let field = Self { grid, values };
        field.validate()?;
        Ok(field)
    }

    pub fn uniform(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_elements()],
        }
    }

    /// Clamp arbitrary values into `[0, 1]`; non-finite entries become 0.
    pub fn from_clamped(grid: Grid, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(grid, values)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.values.len() != self.grid.n_elements() {
            return Err(invalid(format!(
                "density has {} values, {}x{} grid needs {}",
                self.values.len(),
                self.grid.nelx,
                self.grid.nely,
                self.grid.n_elements()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("density value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn solid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v >= THRESHOLD).collect()
    }

    /// Volume fraction after thresholding.
    pub fn thresholded_mean(&self) -> f64 {
        let solid = self.values.iter().filter(|&&v| v >= THRESHOLD).count();
        solid as f64 / self.values.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
