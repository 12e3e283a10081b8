//! Compressed sparse row storage with the fixed sparsity of a structured
//! quadrilateral grid.

use crate::fea::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix whose pattern couples every DOF to the DOFs of the (up to)
    /// nine nodes in its 3x3 node neighbourhood.
    pub fn grid_pattern(grid: &Grid) -> Self {
        let n = grid.n_dofs();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n * 18);
        row_ptr.push(0);
        for node in 0..grid.n_nodes() {
            let (ix, iy) = grid.node_position(node);
            let mut neighbours = Vec::with_capacity(9);
            for jx in ix.saturating_sub(1)..=(ix + 1).min(grid.nelx) {
                for jy in iy.saturating_sub(1)..=(iy + 1).min(grid.nely) {
                    neighbours.push(grid.node(jx, jy));
                }
            }
            // node ids grow with (jx, jy) lexicographically, so already sorted
            for _ in 0..2 {
                for &m in &neighbours {
                    col_idx.push(2 * m);
                    col_idx.push(2 * m + 1);
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// Accumulate into an entry of the pattern.
    ///
    /// Panics if `(i, j)` is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *yi = self.col_idx[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                worst = worst.max((self.values[p] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.col_idx[p]] = self.values[p];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_row_lengths() {
        let g = Grid::new(2, 2).unwrap();
        let m = CsrMatrix::grid_pattern(&g);
        // corner node couples to 4 nodes, centre node to 9
        let corner = 2 * g.node(0, 0);
        let centre = 2 * g.node(1, 1);
        assert_eq!(m.row_ptr[corner + 1] - m.row_ptr[corner], 8);
        assert_eq!(m.row_ptr[centre + 1] - m.row_ptr[centre], 18);
    }

    #[test]
    fn add_get_and_matvec() {
        let g = Grid::new(1, 1).unwrap();
        let mut m = CsrMatrix::grid_pattern(&g);
        m.add(0, 3, 2.0);
        m.add(0, 3, 1.0);
        assert_eq!(m.get(0, 3), 3.0);
        assert_eq!(m.get(3, 0), 0.0);
        let y = m.mul_vec(&[0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(y[0], 6.0);
        assert_eq!(m.max_asymmetry(), 3.0);
    }
}
