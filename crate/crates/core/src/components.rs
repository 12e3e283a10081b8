//! Connected-component labeling of solid elements.

use serde::{Deserialize, Serialize};

use crate::fea::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Edge neighbours only.
    Four,
    /// Edge and corner neighbours.
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(&self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Component labels per element: 0 for void, `1..=count` for solid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub labels: Vec<usize>,
    pub count: usize,
}

pub fn label_components(grid: &Grid, solid: &[bool], connectivity: Connectivity) -> Labels {
    assert_eq!(solid.len(), grid.n_elements(), "mask shape");
    let mut labels = vec![0; solid.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for seed in 0..solid.len() {
        if !solid[seed] || labels[seed] != 0 {
            continue;
        }
        count += 1;
        labels[seed] = count;
        stack.push(seed);
        while let Some(e) = stack.pop() {
            let (ex, ey) = grid.element_position(e);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (ex as isize + dx, ey as isize + dy);
                if nx < 0 || ny < 0 || nx >= grid.nelx as isize || ny >= grid.nely as isize {
                    continue;
                }
                let n = grid.element(nx as usize, ny as usize);
                if solid[n] && labels[n] == 0 {
                    labels[n] = count;
                    stack.push(n);
                }
            }
        }
    }
    Labels { labels, count }
}

impl Labels {
    /// Components containing none of the anchor elements.
    pub fn unanchored(&self, anchors: &[usize]) -> Vec<usize> {
        let mut anchored = vec![false; self.count + 1];
        for &a in anchors {
            anchored[self.labels[a]] = true;
        }
        (1..=self.count).filter(|&c| !anchored[c]).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count + 1];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> (Grid, Vec<bool>) {
        // rows listed top to bottom, matching ey
        let nely = rows.len();
        let nelx = rows[0].len();
        let grid = Grid::new(nelx, nely).unwrap();
        let mut m = vec![false; nelx * nely];
        for (r, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                m[grid.element(x, r)] = ch == '#';
            }
        }
        (grid, m)
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let (g, m) = mask(&["#..", ".#.", "..#"]);
        assert_eq!(label_components(&g, &m, Connectivity::Eight).count, 1);
        assert_eq!(label_components(&g, &m, Connectivity::Four).count, 3);
    }

    #[test]
    fn counts_separate_blobs() {
        let (g, m) = mask(&["##..#", "##..#", "....."]);
        let l = label_components(&g, &m, Connectivity::Eight);
        assert_eq!(l.count, 2);
        assert_eq!(l.sizes()[1..].iter().sum::<usize>(), 6);
    }

    #[test]
    fn unanchored_lists_free_components() {
        let (g, m) = mask(&["##..#", "##..#"]);
        let l = label_components(&g, &m, Connectivity::Eight);
        let anchor = g.element(0, 0);
        let free = l.unanchored(&[anchor]);
        assert_eq!(free.len(), 1);
        assert_ne!(free[0], l.labels[anchor]);
    }
}
