//! Uniform grid on `Ω = (−1,1)²`, nodal fields and cell-centered difference
//! operators.
//!
//! Nodes are stored row-major with `x₂` rows: node `(i, j)` (at
//! `x₁ = −1 + i h₁`, `x₂ = −1 + j h₂`) lives at `j (n₁+1) + i`. Cells are
//! stored the same way with `n₁` entries per row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid needs at least 2 cells per axis, got {n1}×{n2}")]
    TooSmall { n1: usize, n2: usize },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Cell counts per axis; spacings are `2/n₁` and `2/n₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub n1: usize,
    pub n2: usize,
}

impl Grid {
    pub fn new(n1: usize, n2: usize) -> Result<Self, GridError> {
        if n1 < 2 || n2 < 2 {
            return Err(GridError::TooSmall { n1, n2 });
        }
        Ok(Self { n1, n2 })
    }

    pub fn square(n: usize) -> Result<Self, GridError> {
        Self::new(n, n)
    }

    pub fn h1(&self) -> f64 {
        2.0 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        2.0 / self.n2 as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn nodes1(&self) -> usize {
        self.n1 + 1
    }

    pub fn nodes2(&self) -> usize {
        self.n2 + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes1() * self.nodes2()
    }

    pub fn cell_count(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.n1 + 1) + i
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    /// `x₁` of node column `i`; computed as `(2i − n₁)/n₁` so that symmetric
    /// nodes are exact mirrors.
    pub fn x1(&self, i: usize) -> f64 {
        (2.0 * i as f64 - self.n1 as f64) / self.n1 as f64
    }

    pub fn x2(&self, j: usize) -> f64 {
        (2.0 * j as f64 - self.n2 as f64) / self.n2 as f64
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (2.0 * i as f64 + 1.0 - self.n1 as f64) / self.n1 as f64,
            (2.0 * j as f64 + 1.0 - self.n2 as f64) / self.n2 as f64,
        )
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n1 || j == self.n2
    }

    /// Interior node indices in storage order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity((self.n1 - 1) * (self.n2 - 1));
        for j in 1..self.n2 {
            for i in 1..self.n1 {
                out.push(self.node(i, j));
            }
        }
        out
    }

    /// Cells whose centers lie in `[−1 + 2m, 1 − 2m]²`, i.e. `Ω` inset by the
    /// fraction `m` of each side.
    pub fn inset_cells(&self, margin: f64) -> Vec<usize> {
        let lim = 1.0 - 2.0 * margin;
        let mut out = Vec::new();
        for j in 0..self.n2 {
            for i in 0..self.n1 {
                let (x, y) = self.cell_center(i, j);
                if x.abs() <= lim + 1e-12 && y.abs() <= lim + 1e-12 {
                    out.push(self.cell(i, j));
                }
            }
        }
        out
    }
}

/// Nodal scalar field with a Dirichlet mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub boundary_mask: Vec<bool>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.node_count()], boundary_mask: vec![false; grid.node_count()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::Shape { expected: grid.node_count(), got: values.len() });
        }
        Ok(Self { grid, values, boundary_mask: vec![false; grid.node_count()] })
    }

    /// Samples `f(x₁, x₂)` at every node.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: Grid, f: F) -> Self {
        let mut u = Self::zeros(grid);
        for j in 0..grid.nodes2() {
            for i in 0..grid.nodes1() {
                u.values[grid.node(i, j)] = f(grid.x1(i), grid.x2(j));
            }
        }
        u
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.node(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.node(i, j);
        self.values[k] = v;
    }

    pub fn is_dirichlet_locked(&self) -> bool {
        let g = self.grid;
        (0..g.nodes2()).all(|j| (0..g.nodes1()).all(|i| !g.is_boundary(i, j) || self.boundary_mask[g.node(i, j)]))
    }

    /// Interior values in [`Grid::interior_nodes`] order.
    pub fn interior(&self) -> Vec<f64> {
        self.grid.interior_nodes().iter().map(|&k| self.values[k]).collect()
    }

    pub fn set_interior(&mut self, interior: &[f64]) {
        for (k, &v) in self.grid.interior_nodes().iter().zip(interior) {
            self.values[*k] = v;
        }
    }

    /// Bilinearly blended (Coons) interior from the boundary ring; exact for
    /// affine and bilinear data.
    pub fn fill_interior_from_boundary(&mut self) {
        let g = self.grid;
        let (n1, n2) = (g.n1, g.n2);
        let b = self.clone();
        for j in 1..n2 {
            let t = j as f64 / n2 as f64;
            for i in 1..n1 {
                let s = i as f64 / n1 as f64;
                let v = (1.0 - s) * b.at(0, j) + s * b.at(n1, j) + (1.0 - t) * b.at(i, 0) + t * b.at(i, n2)
                    - ((1.0 - s) * (1.0 - t) * b.at(0, 0)
                        + s * (1.0 - t) * b.at(n1, 0)
                        + (1.0 - s) * t * b.at(0, n2)
                        + s * t * b.at(n1, n2));
                self.set(i, j, v);
            }
        }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A two-component field with one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField2 {
    pub grid: Grid,
    pub comp1: Vec<f64>,
    pub comp2: Vec<f64>,
}

impl CellField2 {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, comp1: vec![0.0; grid.cell_count()], comp2: vec![0.0; grid.cell_count()] }
    }

    pub fn constant(grid: Grid, c1: f64, c2: f64) -> Self {
        Self { grid, comp1: vec![c1; grid.cell_count()], comp2: vec![c2; grid.cell_count()] }
    }

    pub fn check_shape(&self) -> Result<(), GridError> {
        let n = self.grid.cell_count();
        for got in [self.comp1.len(), self.comp2.len()] {
            if got != n {
                return Err(GridError::Shape { expected: n, got });
            }
        }
        Ok(())
    }
}

const PAR_MIN: usize = 4096;

/// Cell gradient of the bilinear interpolant at the cell center: forward
/// differences averaged over the two cell edges. Exact for affine data.
pub fn gradient(u: &GridFunction) -> CellField2 {
    let g = u.grid;
    let (h1, h2) = (g.h1(), g.h2());
    let v = &u.values;
    let per_cell = |c: usize| {
        let (i, j) = (c % g.n1, c / g.n1);
        let a = v[g.node(i, j)];
        let b = v[g.node(i + 1, j)];
        let cc = v[g.node(i, j + 1)];
        let d = v[g.node(i + 1, j + 1)];
        (((b - a) + (d - cc)) / (2.0 * h1), ((cc - a) + (d - b)) / (2.0 * h2))
    };
    let (comp1, comp2): (Vec<f64>, Vec<f64>) =
        (0..g.cell_count()).into_par_iter().with_min_len(PAR_MIN).map(per_cell).unzip();
    CellField2 { grid: g, comp1, comp2 }
}

/// Weak divergence residual `r = h₁h₂ Gᵀτ` on interior nodes (boundary
/// entries are zero), so that `h₁h₂ ⟨Gφ, τ⟩ = ⟨φ, r⟩` for every interior
/// nodal `φ`. Equals the gradient of `∫ F(∇u)` in the nodal values when
/// `τ = DF(∇u)`.
pub fn divergence_residual(tau: &CellField2) -> GridFunction {
    let g = tau.grid;
    let area = g.cell_area();
    let (w1, w2) = (area / (2.0 * g.h1()), area / (2.0 * g.h2()));
    let gather = |k: usize| {
        let (i, j) = (k % g.nodes1(), k / g.nodes1());
        if g.is_boundary(i, j) {
            return 0.0;
        }
        // node (i,j) is corner (a) of cell (i,j), (b) of (i−1,j), (c) of (i,j−1), (d) of (i−1,j−1)
        let mut acc = 0.0;
        let c = g.cell(i, j);
        acc += -w1 * tau.comp1[c] - w2 * tau.comp2[c];
        let c = g.cell(i - 1, j);
        acc += w1 * tau.comp1[c] - w2 * tau.comp2[c];
        let c = g.cell(i, j - 1);
        acc += -w1 * tau.comp1[c] + w2 * tau.comp2[c];
        let c = g.cell(i - 1, j - 1);
        acc += w1 * tau.comp1[c] + w2 * tau.comp2[c];
        acc
    };
    let values: Vec<f64> = (0..g.node_count()).into_par_iter().with_min_len(PAR_MIN).map(gather).collect();
    GridFunction { grid: g, values, boundary_mask: vec![false; g.node_count()] }
}

/// Sets boundary nodes to `u0(x₁, x₂)` and locks them.
pub fn apply_dirichlet<F: Fn(f64, f64) -> f64>(u: &GridFunction, u0: F) -> GridFunction {
    let g = u.grid;
    let mut out = u.clone();
    for j in 0..g.nodes2() {
        for i in 0..g.nodes1() {
            if g.is_boundary(i, j) {
                let k = g.node(i, j);
                out.values[k] = u0(g.x1(i), g.x2(j));
                out.boundary_mask[k] = true;
            }
        }
    }
    out
}

/// Copies the boundary ring of `data` into `u` and locks it.
pub fn apply_dirichlet_from(u: &GridFunction, data: &GridFunction) -> Result<GridFunction, GridError> {
    if u.grid != data.grid {
        return Err(GridError::GridMismatch);
    }
    let g = u.grid;
    Ok(apply_dirichlet(u, |x1, x2| {
        let i = ((x1 + 1.0) / g.h1()).round() as usize;
        let j = ((x2 + 1.0) / g.h2()).round() as usize;
        data.at(i, j)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_gradient_is_exact() {
        let g = Grid::new(7, 5).unwrap();
        let u = GridFunction::from_fn(g, |x, y| 3.0 * x - 2.0 * y + 0.25);
        let grad = gradient(&u);
        assert!(grad.comp1.iter().all(|&v| (v - 3.0).abs() < 1e-13));
        assert!(grad.comp2.iter().all(|&v| (v + 2.0).abs() < 1e-13));
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = Grid::square(4).unwrap();
        let u = GridFunction::from_fn(g, |_, _| 1.7);
        let grad = gradient(&u);
        assert!(grad.comp1.iter().chain(&grad.comp2).all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_gradient_hand_values() {
        // u = x₁x₂ on a 2×2 grid: comp1 in cell (i,j) is the center x₂ value
        let g = Grid::square(2).unwrap();
        let u = GridFunction::from_fn(g, |x, y| x * y);
        let grad = gradient(&u);
        for j in 0..2 {
            for i in 0..2 {
                let (cx, cy) = g.cell_center(i, j);
                assert!((grad.comp1[g.cell(i, j)] - cy).abs() < 1e-15);
                assert!((grad.comp2[g.cell(i, j)] - cx).abs() < 1e-15);
            }
        }
        assert_eq!(grad.comp1, vec![-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn constant_stress_has_zero_residual() {
        let g = Grid::new(6, 9).unwrap();
        let r = divergence_residual(&CellField2::constant(g, 1.3, -0.4));
        assert!(r.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dirichlet_is_idempotent() {
        let g = Grid::square(5).unwrap();
        let u = GridFunction::from_fn(g, |x, y| x * x + y);
        let a = apply_dirichlet(&u, |x, y| 2.0 * x + 0.5 * y);
        let b = apply_dirichlet(&a, |x, y| 2.0 * x + 0.5 * y);
        assert_eq!(a, b);
        assert!(a.is_dirichlet_locked());
        assert_eq!(a.at(0, 3), 2.0 * g.x1(0) + 0.5 * g.x2(3));
        assert_eq!(a.at(2, 2), u.at(2, 2));
        let z = apply_dirichlet(&u, |_, _| 0.0);
        for j in 0..g.nodes2() {
            for i in 0..g.nodes1() {
                if g.is_boundary(i, j) {
                    assert_eq!(z.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn coons_fill_reproduces_affine() {
        let g = Grid::new(8, 6).unwrap();
        let exact = GridFunction::from_fn(g, |x, y| 2.0 * x - y + 0.5 * x * y);
        let mut u = apply_dirichlet(&GridFunction::zeros(g), |x, y| 2.0 * x - y + 0.5 * x * y);
        u.fill_interior_from_boundary();
        assert!(u.max_abs_diff(&exact) < 1e-14);
    }

    #[test]
    fn too_small_grid() {
        assert!(Grid::new(1, 4).is_err());
    }
}
