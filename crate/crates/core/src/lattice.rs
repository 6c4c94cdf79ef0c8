//! Queen-adjacency lattices and intrinsic CAR (ICAR) densities.
//!
//! Sites are addressed internally by a zero-based index `i`; the external
//! `site_id` is always `i + 1`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grid cell of the areal lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub site_id: u32,
    pub row: i64,
    pub col: i64,
}

impl GridCell {
    /// Cells of a full `rows x cols` grid, numbered row-major from 1.
    pub fn regular(rows: usize, cols: usize) -> Vec<GridCell> {
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                cells.push(GridCell {
                    site_id: (r * cols + c + 1) as u32,
                    row: r as i64,
                    col: c as i64,
                });
            }
        }
        cells
    }
}

/// Immutable adjacency structure. Neighbor lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    neighbors: Vec<Vec<usize>>,
}

/// Build the queen adjacency: two cells are neighbors when they differ by at
/// most one in both row and column.
pub fn build_queen_adjacency(cells: &[GridCell]) -> Result<LatticeGraph> {
    if cells.len() < 2 {
        return Err(Error::TooFewSites(cells.len()));
    }
    let n = cells.len();
    let mut by_id: Vec<Option<&GridCell>> = vec![None; n];
    for cell in cells {
        let idx = cell.site_id as usize;
        if idx == 0 || idx > n || by_id[idx - 1].is_some() {
            return Err(Error::NonContiguousSites {
                expected: n,
                found: cell.site_id,
            });
        }
        by_id[idx - 1] = Some(cell);
    }
    let mut position: HashMap<(i64, i64), usize> = HashMap::with_capacity(n);
    for (i, cell) in by_id.iter().enumerate() {
        let cell = cell.expect("every id filled");
        if let Some(&other) = position.get(&(cell.row, cell.col)) {
            return Err(Error::DuplicateCell {
                row: cell.row,
                col: cell.col,
                first: other as u32 + 1,
                second: i as u32 + 1,
            });
        }
        position.insert((cell.row, cell.col), i);
    }
    let mut neighbors = vec![Vec::new(); n];
    for (i, cell) in by_id.iter().enumerate() {
        let cell = cell.expect("every id filled");
        for dr in -1..=1 {
            for dc in -1..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                if let Some(&j) = position.get(&(cell.row + dr, cell.col + dc)) {
                    neighbors[i].push(j);
                }
            }
        }
        if neighbors[i].is_empty() {
            return Err(Error::IsolatedSite(cell.site_id));
        }
        neighbors[i].sort_unstable();
    }
    Ok(LatticeGraph { neighbors })
}

impl LatticeGraph {
    /// Full `rows x cols` queen lattice.
    pub fn regular(rows: usize, cols: usize) -> Result<LatticeGraph> {
        build_queen_adjacency(&GridCell::regular(rows, cols))
    }

    pub fn n_sites(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Number of neighbors `a_{i+}`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Unordered neighbor pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn neighbor_mean(&self, values: &[f64], i: usize) -> f64 {
        let nb = &self.neighbors[i];
        nb.iter().map(|&j| values[j]).sum::<f64>() / nb.len() as f64
    }

    /// Mean and variance of the ICAR full conditional of site `i`.
    pub fn icar_conditional(&self, values: &[f64], i: usize, variance: f64) -> (f64, f64) {
        debug_assert!(variance > 0.0);
        (
            self.neighbor_mean(values, i),
            variance / self.degree(i) as f64,
        )
    }

    /// Normal log density of `value` under the ICAR conditional of site `i`,
    /// with all other sites taken from `values`.
    pub fn icar_conditional_log_pdf(
        &self,
        value: f64,
        values: &[f64],
        i: usize,
        variance: f64,
    ) -> f64 {
        let (mean, var) = self.icar_conditional(values, i, variance);
        crate::dist::normal_log_pdf(value, mean, var)
    }

    /// Sum over unordered neighbor pairs of `(v_i - v_j)^2`, i.e. `v'(D - A)v`.
    pub fn pairwise_sq_diff(&self, values: &[f64]) -> f64 {
        self.edges()
            .map(|(i, j)| {
                let d = values[i] - values[j];
                d * d
            })
            .sum()
    }

    /// Log of the improper ICAR density, without normalizing constant.
    pub fn icar_log_density_unnormalized(&self, values: &[f64], variance: f64) -> f64 {
        debug_assert!(variance > 0.0);
        -self.pairwise_sq_diff(values) / (2.0 * variance)
    }
}
