//! Plane-stress finite element analysis on a regular grid of unit-square,
//! four-node bilinear quadrilaterals.
//!
//! Node numbering follows the column-major convention of the classic SIMP
//! codes: node `(ix, iy)` has index `ix * (nely + 1) + iy`, with `iy` counted
//! downward from the top edge. Each node carries two degrees of freedom,
//! `2n` (x) and `2n + 1` (y, positive upward). Elements are stored row-major,
//! `e = ey * nelx + ex`, so a density vector reads like an image.

use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::error::{invalid, Error, Result};
use crate::sparse::CsrMatrix;

/// Element counts of the design domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub nelx: usize,
    pub nely: usize,
}

impl Grid {
    pub fn new(nelx: usize, nely: usize) -> Result<Self> {
        let grid = Self { nelx, nely };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nelx == 0 || self.nely == 0 {
            return Err(invalid(format!(
                "grid must have at least one element per axis, got {}x{}",
                self.nelx, self.nely
            )));
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nelx && iy <= self.nely);
        ix * (self.nely + 1) + iy
    }

    /// `(ix, iy)` of a node.
    pub fn node_position(&self, node: usize) -> (usize, usize) {
        (node / (self.nely + 1), node % (self.nely + 1))
    }

    pub fn element(&self, ex: usize, ey: usize) -> usize {
        debug_assert!(ex < self.nelx && ey < self.nely);
        ey * self.nelx + ex
    }

    /// `(ex, ey)` of an element.
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        (e % self.nelx, e / self.nelx)
    }

    /// Element centroid in grid units, same frame as [`Grid::node_position`].
    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        let (ex, ey) = self.element_position(e);
        (ex as f64 + 0.5, ey as f64 + 0.5)
    }

    /// Corner nodes in counterclockwise order: lower-left, lower-right,
    /// upper-right, upper-left.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_position(e);
        let ul = self.node(ex, ey);
        let ur = self.node(ex + 1, ey);
        [ul + 1, ur + 1, ur, ul]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    /// Elements sharing a node (one to four of them).
    pub fn elements_around_node(&self, node: usize) -> Vec<usize> {
        let (ix, iy) = self.node_position(node);
        let mut out = Vec::with_capacity(4);
        for ey in [iy.wrapping_sub(1), iy] {
            for ex in [ix.wrapping_sub(1), ix] {
                if ex < self.nelx && ey < self.nely {
                    out.push(self.element(ex, ey));
                }
            }
        }
        out
    }
}

/// Linear isotropic material with a void floor for the modified SIMP law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub young_solid: f64,
    pub young_void: f64,
    pub poisson: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            young_solid: 1.0,
            young_void: 1e-9,
            poisson: 0.3,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.young_void > 0.0 && self.young_solid > self.young_void) {
            return Err(invalid(format!(
                "material requires young_solid > young_void > 0 (got {} / {})",
                self.young_solid, self.young_void
            )));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(invalid(format!("poisson ratio {} outside [0, 0.5)", self.poisson)));
        }
        Ok(())
    }

    /// Modified SIMP interpolation `E_void + x^p (E_solid - E_void)`.
    pub fn modulus(&self, density: f64, penal: f64) -> f64 {
        self.young_void + density.powf(penal) * (self.young_solid - self.young_void)
    }

    /// Plane-stress constitutive matrix for unit Young's modulus.
    pub fn unit_constitutive(&self) -> [[f64; 3]; 3] {
        let nu = self.poisson;
        let c = 1.0 / (1.0 - nu * nu);
        [
            [c, c * nu, 0.0],
            [c * nu, c, 0.0],
            [0.0, 0.0, c * (1.0 - nu) / 2.0],
        ]
    }
}

/// A point force applied at a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoad {
    pub node: usize,
    pub fx: f64,
    pub fy: f64,
}

impl PointLoad {
    pub fn magnitude(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Loads {
    pub entries: Vec<PointLoad>,
}

impl Loads {
    pub fn new(entries: Vec<PointLoad>) -> Self {
        Self { entries }
    }

    pub fn single(node: usize, fx: f64, fy: f64) -> Self {
        Self::new(vec![PointLoad { node, fx, fy }])
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for l in &self.entries {
            if l.node >= grid.n_nodes() {
                return Err(invalid(format!("load node {} outside grid", l.node)));
            }
            if !(l.fx.is_finite() && l.fy.is_finite()) {
                return Err(invalid(format!("non-finite load at node {}", l.node)));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|l| l.fx == 0.0 && l.fy == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.entries
                .iter()
                .map(|l| PointLoad {
                    node: l.node,
                    fx: l.fx * s,
                    fy: l.fy * s,
                })
                .collect(),
        )
    }

    pub fn force_vector(&self, n_dofs: usize) -> Result<Vec<f64>> {
        let mut f = vec![0.0; n_dofs];
        for l in &self.entries {
            if 2 * l.node + 1 >= n_dofs {
                return Err(invalid(format!("load node {} outside grid", l.node)));
            }
            f[2 * l.node] += l.fx;
            f[2 * l.node + 1] += l.fy;
        }
        Ok(f)
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|l| l.node)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub fixed_dofs: Vec<usize>,
}

impl BoundaryConditions {
    pub fn from_dofs(mut dofs: Vec<usize>) -> Self {
        dofs.sort_unstable();
        dofs.dedup();
        Self { fixed_dofs: dofs }
    }

    /// Fix the selected directions of every listed node.
    pub fn fix_nodes(nodes: impl IntoIterator<Item = usize>, fix_x: bool, fix_y: bool) -> Self {
        let mut dofs = Vec::new();
        for n in nodes {
            if fix_x {
                dofs.push(2 * n);
            }
            if fix_y {
                dofs.push(2 * n + 1);
            }
        }
        Self::from_dofs(dofs)
    }

    pub fn merged(&self, other: &Self) -> Self {
        let mut dofs = self.fixed_dofs.clone();
        dofs.extend_from_slice(&other.fixed_dofs);
        Self::from_dofs(dofs)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.fixed_dofs.is_empty() {
            return Err(Error::IllPosed("no constrained degrees of freedom".into()));
        }
        if let Some(&d) = self.fixed_dofs.iter().find(|&&d| d >= grid.n_dofs()) {
            return Err(invalid(format!("fixed dof {d} outside grid")));
        }
        Ok(())
    }

    pub fn fixed_mask(&self, n_dofs: usize) -> Vec<bool> {
        let mut mask = vec![false; n_dofs];
        for &d in &self.fixed_dofs {
            if d < n_dofs {
                mask[d] = true;
            }
        }
        mask
    }

    /// Nodes with at least one constrained direction, ascending.
    pub fn fixed_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.fixed_dofs.iter().map(|d| d / 2).collect();
        nodes.dedup();
        nodes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub u: Vec<f64>,
}

/// Per-element Von Mises stress and strain-energy density.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub grid: Grid,
    pub von_mises: Vec<f64>,
    pub strain_energy: Vec<f64>,
}

/// Closed-form stiffness of a unit-square bilinear plane-stress element with
/// unit Young's modulus, DOFs ordered as [`Grid::element_dofs`].
pub fn element_stiffness(poisson: f64) -> [[f64; 8]; 8] {
    const A11: [[f64; 4]; 4] = [
        [12.0, 3.0, -6.0, -3.0],
        [3.0, 12.0, 3.0, 0.0],
        [-6.0, 3.0, 12.0, -3.0],
        [-3.0, 0.0, -3.0, 12.0],
    ];
    const A12: [[f64; 4]; 4] = [
        [-6.0, -3.0, 0.0, 3.0],
        [-3.0, -6.0, -3.0, -6.0],
        [0.0, -3.0, -6.0, 3.0],
        [3.0, -6.0, 3.0, -6.0],
    ];
    const B11: [[f64; 4]; 4] = [
        [-4.0, 3.0, -2.0, 9.0],
        [3.0, -4.0, -9.0, 4.0],
        [-2.0, -9.0, -4.0, -3.0],
        [9.0, 4.0, -3.0, -4.0],
    ];
    const B12: [[f64; 4]; 4] = [
        [2.0, -3.0, 4.0, -9.0],
        [-3.0, 2.0, 9.0, -2.0],
        [4.0, 9.0, 2.0, 3.0],
        [-9.0, -2.0, 3.0, 2.0],
    ];
    let scale = 1.0 / (1.0 - poisson * poisson) / 24.0;
    let mut ke = [[0.0; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            ke[i][j] = scale * (A11[i][j] + poisson * B11[i][j]);
            ke[i][j + 4] = scale * (A12[i][j] + poisson * B12[i][j]);
            ke[i + 4][j] = scale * (A12[j][i] + poisson * B12[j][i]);
            ke[i + 4][j + 4] = scale * (A11[i][j] + poisson * B11[i][j]);
        }
    }
    ke
}

/// `u_eᵀ K0 u_e` for each element, with `K0` the unit-modulus element matrix.
pub fn element_energies(grid: &Grid, u: &[f64], ke: &[[f64; 8]; 8]) -> Vec<f64> {
    (0..grid.n_elements())
        .map(|e| {
            let dofs = grid.element_dofs(e);
            let ue: [f64; 8] = std::array::from_fn(|i| u[dofs[i]]);
            let mut acc = 0.0;
            for i in 0..8 {
                let row: f64 = (0..8).map(|j| ke[i][j] * ue[j]).sum();
                acc += ue[i] * row;
            }
            acc
        })
        .collect()
}

/// Assembled global stiffness for one density field.
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    pub grid: Grid,
    pub matrix: CsrMatrix,
}

pub fn assemble_stiffness(
    density: &DensityField,
    penal: f64,
    material: &Material,
) -> Result<StiffnessMatrix> {
    density.validate()?;
    material.validate()?;
    if !(penal >= 1.0) {
        return Err(invalid(format!("penalization {penal} must be >= 1")));
    }
    let grid = density.grid;
    let ke = element_stiffness(material.poisson);
    let mut matrix = CsrMatrix::grid_pattern(&grid);
    for (e, &x) in density.values.iter().enumerate() {
        let modulus = material.modulus(x, penal);
        let dofs = grid.element_dofs(e);
        for i in 0..8 {
            for j in 0..8 {
                matrix.add(dofs[i], dofs[j], modulus * ke[i][j]);
            }
        }
    }
    Ok(StiffnessMatrix { grid, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    /// Defaults to ten times the number of free DOFs.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: None,
        }
    }
}

/// Largest DOF count the dense oracle accepts (a 12x12 grid).
pub const DENSE_MAX_DOFS: usize = 2 * 13 * 13;

fn check_system(k: &StiffnessMatrix, loads: &Loads, bcs: &BoundaryConditions) -> Result<()> {
    loads.validate(&k.grid)?;
    bcs.validate(&k.grid)?;
    check_rigid_modes(&k.grid, bcs)
}

/// The reduced system is singular exactly when some rigid-body motion leaves
/// every constrained DOF at rest.
pub(crate) fn check_rigid_modes(grid: &Grid, bcs: &BoundaryConditions) -> Result<()> {
    let cx = grid.nelx as f64 / 2.0;
    let cy = grid.nely as f64 / 2.0;
    let mut gram = [[0.0f64; 3]; 3];
    for &d in &bcs.fixed_dofs {
        let (ix, iy) = grid.node_position(d / 2);
        let x = ix as f64 - cx;
        let y = cy - iy as f64;
        // rows of the rigid modes (tx, ty, rot) at this DOF
        let row = if d % 2 == 0 { [1.0, 0.0, -y] } else { [0.0, 1.0, x] };
        for i in 0..3 {
            for j in 0..3 {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let scale = (0..3).map(|i| gram[i][i]).fold(0.0, f64::max);
    if scale == 0.0 || small_rank(gram, scale * 1e-10) < 3 {
        return Err(Error::IllPosed(
            "boundary conditions leave a rigid-body mode unconstrained".into(),
        ));
    }
    Ok(())
}

fn small_rank(mut m: [[f64; 3]; 3], tol: f64) -> usize {
    let mut rank = 0;
    let mut used = [false; 3];
    for col in 0..3 {
        let pivot = (0..3)
            .filter(|&r| !used[r])
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(p) = pivot else { break };
        if m[p][col].abs() <= tol {
            continue;
        }
        used[p] = true;
        rank += 1;
        for r in 0..3 {
            if r != p {
                let f = m[r][col] / m[p][col];
                for c in 0..3 {
                    m[r][c] -= f * m[p][c];
                }
            }
        }
    }
    rank
}

pub fn solve_displacement(
    k: &StiffnessMatrix,
    loads: &Loads,
    bcs: &BoundaryConditions,
) -> Result<DisplacementField> {
    solve_displacement_with(k, loads, bcs, &SolverOptions::default())
}

/// Jacobi-preconditioned conjugate gradients on the free DOFs.
pub fn solve_displacement_with(
    k: &StiffnessMatrix,
    loads: &Loads,
    bcs: &BoundaryConditions,
    opts: &SolverOptions,
) -> Result<DisplacementField> {
    check_system(k, loads, bcs)?;
    let n = k.grid.n_dofs();
    let fixed = bcs.fixed_mask(n);
    let mut f = loads.force_vector(n)?;
    for (fi, &is_fixed) in f.iter_mut().zip(&fixed) {
        if is_fixed {
            *fi = 0.0;
        }
    }
    let n_free = fixed.iter().filter(|&&b| !b).count();
    let max_iter = opts.max_iter.unwrap_or(10 * n_free.max(1));
    let u = pcg(&k.matrix, &f, &fixed, opts.rel_tol, max_iter)?;
    Ok(DisplacementField { u })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(a: &CsrMatrix, b: &[f64], fixed: &[bool], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.diagonal(i);
            if fixed[i] || d <= 0.0 {
                0.0
            } else {
                1.0 / d
            }
        })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut residual = 1.0;
    for it in 0..max_iter {
        a.mul_vec_into(&p, &mut q);
        for (qi, &is_fixed) in q.iter_mut().zip(fixed) {
            if is_fixed {
                *qi = 0.0;
            }
        }
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::IllPosed(format!(
                "reduced stiffness not positive definite (pᵀKp = {pq:e} at iteration {it})"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual,
    })
}

/// Dense Cholesky solve of the reduced system. Used as the reference for the
/// iterative solver; restricted to grids of at most 12x12 elements.
pub fn solve_dense(
    k: &StiffnessMatrix,
    loads: &Loads,
    bcs: &BoundaryConditions,
) -> Result<DisplacementField> {
    check_system(k, loads, bcs)?;
    let n = k.grid.n_dofs();
    if n > DENSE_MAX_DOFS {
        return Err(invalid(format!(
            "dense solve limited to {DENSE_MAX_DOFS} dofs, system has {n}"
        )));
    }
    let fixed = bcs.fixed_mask(n);
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let m = free.len();
    let f = loads.force_vector(n)?;
    let mut a = vec![0.0; m * m];
    for (ri, &i) in free.iter().enumerate() {
        for (ci, &j) in free.iter().enumerate() {
            a[ri * m + ci] = k.matrix.get(i, j);
        }
    }
    // in-place lower Cholesky factor
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return Err(Error::IllPosed("reduced stiffness not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    let mut y: Vec<f64> = free.iter().map(|&i| f[i]).collect();
    for i in 0..m {
        for k in 0..i {
            y[i] -= a[i * m + k] * y[k];
        }
        y[i] /= a[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            y[i] -= a[k * m + i] * y[k];
        }
        y[i] /= a[i * m + i];
    }
    let mut u = vec![0.0; n];
    for (ri, &i) in free.iter().enumerate() {
        u[i] = y[ri];
    }
    Ok(DisplacementField { u })
}

/// `Fᵀ U`.
pub fn compliance(u: &DisplacementField, loads: &Loads) -> Result<f64> {
    let f = loads.force_vector(u.u.len())?;
    Ok(dot(&f, &u.u))
}

/// Centroid strain `[εxx, εyy, γxy]` (engineering shear) of one element.
pub fn centroid_strain(grid: &Grid, u: &[f64], e: usize) -> [f64; 3] {
    // dN/dx, dN/dy at the centroid for LL, LR, UR, UL
    const DX: [f64; 4] = [-0.5, 0.5, 0.5, -0.5];
    const DY: [f64; 4] = [-0.5, -0.5, 0.5, 0.5];
    let dofs = grid.element_dofs(e);
    let mut eps = [0.0; 3];
    for a in 0..4 {
        let ux = u[dofs[2 * a]];
        let uy = u[dofs[2 * a + 1]];
        eps[0] += DX[a] * ux;
        eps[1] += DY[a] * uy;
        eps[2] += DY[a] * ux + DX[a] * uy;
    }
    eps
}

/// Von Mises stress from in-plane stress components.
pub fn von_mises(s11: f64, s22: f64, s12: f64) -> f64 {
    (s11 * s11 - s11 * s22 + s22 * s22 + 3.0 * s12 * s12).max(0.0).sqrt()
}

/// Von Mises stress and strain-energy density at element centroids.
pub fn stress_energy_fields(
    u: &DisplacementField,
    density: &DensityField,
    material: &Material,
    penal: f64,
) -> Result<FieldPair> {
    density.validate()?;
    let grid = density.grid;
    if u.u.len() != grid.n_dofs() {
        return Err(invalid(format!(
            "displacement has {} entries, grid needs {}",
            u.u.len(),
            grid.n_dofs()
        )));
    }
    let d = material.unit_constitutive();
    let mut von = Vec::with_capacity(grid.n_elements());
    let mut energy = Vec::with_capacity(grid.n_elements());
    for (e, &x) in density.values.iter().enumerate() {
        let eps = centroid_strain(&grid, &u.u, e);
        let modulus = material.modulus(x, penal);
        let sigma: [f64; 3] =
            std::array::from_fn(|i| modulus * (0..3).map(|j| d[i][j] * eps[j]).sum::<f64>());
        von.push(von_mises(sigma[0], sigma[1], sigma[2]));
        // γ = 2 ε12, so σ12 γ = 2 σ12 ε12
        let w = 0.5 * (sigma[0] * eps[0] + sigma[1] * eps[1] + sigma[2] * eps[2]);
        energy.push(w.max(0.0));
    }
    Ok(FieldPair {
        grid,
        von_mises: von,
        strain_energy: energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantilever(nelx: usize, nely: usize) -> (Grid, Loads, BoundaryConditions) {
        let grid = Grid::new(nelx, nely).unwrap();
        let bcs = BoundaryConditions::fix_nodes((0..=nely).map(|iy| grid.node(0, iy)), true, true);
        let loads = Loads::single(grid.node(nelx, nely), 0.0, -1.0);
        (grid, loads, bcs)
    }

    #[test]
    fn grid_rejects_empty() {
        assert!(Grid::new(0, 3).is_err());
        let g = Grid::new(3, 2).unwrap();
        assert_eq!(g.n_nodes(), 12);
        assert_eq!(g.n_dofs(), 24);
    }

    #[test]
    fn element_nodes_are_counterclockwise() {
        let g = Grid::new(2, 2).unwrap();
        let [ll, lr, ur, ul] = g.element_nodes(g.element(1, 0));
        assert_eq!(g.node_position(ll), (1, 1));
        assert_eq!(g.node_position(lr), (2, 1));
        assert_eq!(g.node_position(ur), (2, 0));
        assert_eq!(g.node_position(ul), (1, 0));
    }

    #[test]
    fn elements_around_corner_and_interior_nodes() {
        let g = Grid::new(3, 3).unwrap();
        assert_eq!(g.elements_around_node(g.node(0, 0)), vec![0]);
        assert_eq!(g.elements_around_node(g.node(1, 1)).len(), 4);
        assert_eq!(g.elements_around_node(g.node(3, 1)).len(), 2);
    }

    #[test]
    fn void_density_scales_stiffness() {
        let g = Grid::new(3, 2).unwrap();
        let m = Material::default();
        let solid = assemble_stiffness(&DensityField::uniform(g, 1.0), 3.0, &m).unwrap();
        let void = assemble_stiffness(&DensityField::uniform(g, 0.0), 3.0, &m).unwrap();
        let ratio = void.matrix.frobenius_norm() / solid.matrix.frobenius_norm();
        assert!((ratio - m.young_void / m.young_solid).abs() < 1e-9 * ratio.max(1e-9));
    }

    #[test]
    fn density_length_mismatch_is_rejected() {
        let g = Grid::new(2, 2).unwrap();
        let bad = DensityField {
            grid: g,
            values: vec![0.5; 3],
        };
        assert!(matches!(
            assemble_stiffness(&bad, 3.0, &Material::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_loads_give_zero_displacement() {
        let (grid, loads, bcs) = cantilever(3, 2);
        let k = assemble_stiffness(&DensityField::uniform(grid, 0.5), 3.0, &Material::default())
            .unwrap();
        let u = solve_displacement(&k, &loads.scaled(0.0), &bcs).unwrap();
        assert!(u.u.iter().all(|&v| v == 0.0));
        assert_eq!(compliance(&u, &loads.scaled(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn unconstrained_rotation_is_ill_posed() {
        let grid = Grid::new(2, 2).unwrap();
        // a single pinned node leaves rotation free
        let bcs = BoundaryConditions::fix_nodes([grid.node(0, 0)], true, true);
        let loads = Loads::single(grid.node(2, 2), 0.0, -1.0);
        let k = assemble_stiffness(&DensityField::uniform(grid, 1.0), 3.0, &Material::default())
            .unwrap();
        assert!(matches!(solve_displacement(&k, &loads, &bcs), Err(Error::IllPosed(_))));
        assert!(matches!(
            solve_displacement(&k, &loads, &BoundaryConditions::default()),
            Err(Error::IllPosed(_))
        ));
        // rollers along one line in y only: x translation free
        let rollers = BoundaryConditions::fix_nodes((0..=2).map(|i| grid.node(i, 2)), false, true);
        assert!(matches!(solve_displacement(&k, &loads, &rollers), Err(Error::IllPosed(_))));
    }

    #[test]
    fn iteration_cap_reports_solver_failure() {
        let (grid, loads, bcs) = cantilever(6, 3);
        let k = assemble_stiffness(&DensityField::uniform(grid, 1.0), 3.0, &Material::default())
            .unwrap();
        let opts = SolverOptions {
            rel_tol: 1e-12,
            max_iter: Some(2),
        };
        match solve_displacement_with(&k, &loads, &bcs, &opts) {
            Err(Error::SolverFailure {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12);
            }
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn uniaxial_stress_von_mises_is_absolute_value() {
        assert_eq!(von_mises(-3.5, 0.0, 0.0), 3.5);
        assert_eq!(von_mises(2.0, 0.0, 0.0), 2.0);
    }

    #[test]
    fn zero_displacement_gives_zero_fields() {
        let g = Grid::new(3, 3).unwrap();
        let u = DisplacementField {
            u: vec![0.0; g.n_dofs()],
        };
        let f = stress_energy_fields(&u, &DensityField::uniform(g, 1.0), &Material::default(), 3.0)
            .unwrap();
        assert!(f.von_mises.iter().chain(&f.strain_energy).all(|&v| v == 0.0));
    }
}
