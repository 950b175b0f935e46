//! Primal energies, the relaxed functional on BV-type candidates, and
//! Luxemburg norms of cell fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{Density2Spec, DensityPair, NFunctionSpec};
use crate::grid::{gradient, CellField2, Grid, GridError, GridFunction};
use crate::sum::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("non-finite energy density in cell {cell}")]
    NonFinite { cell: usize },
    #[error("Luxemburg norm unbounded: ∫A(|v|/l) > 1 at l = {l_max}")]
    Unbounded { l_max: f64 },
    #[error("candidate invalid: {0}")]
    Candidate(String),
    #[error("regularization parameter delta = {0} must lie in (0, 1)")]
    Delta(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Energy contributions. For `J`, `e_part` repeats `j_f2` and the singular
/// and boundary parts vanish; for `K`, `j_f1`/`e_part` are the absolutely
/// continuous parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub j_total: f64,
    pub j_f1: f64,
    pub j_f2: f64,
    pub k_singular: f64,
    pub k_boundary: f64,
    pub e_part: f64,
    pub delta_term: f64,
}

impl EnergyBreakdown {
    /// `K = ∫f₁(∂₁ᵃw) + singular + boundary + E[∂₂w]`.
    pub fn k_total(&self) -> f64 {
        self.j_f1 + self.k_singular + self.k_boundary + self.e_part
    }

    /// `J_δ = J + δ-term`.
    pub fn j_delta(&self) -> f64 {
        self.j_total + self.delta_term
    }
}

const PAR_MIN: usize = 4096;

fn cell_sums<F>(n: usize, per_cell: F) -> Result<Vec<f64>, EnergyError>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let vals: Vec<f64> = (0..n).into_par_iter().with_min_len(PAR_MIN).map(per_cell).collect();
    if let Some(cell) = vals.iter().position(|v| !v.is_finite()) {
        return Err(EnergyError::NonFinite { cell });
    }
    Ok(vals)
}

fn j_from_gradient(grad: &CellField2, d: &DensityPair) -> Result<EnergyBreakdown, EnergyError> {
    let area = grad.grid.cell_area();
    let f1 = cell_sums(grad.grid.cell_count(), |c| d.f1.eval(grad.comp1[c]))?;
    let f2 = cell_sums(grad.grid.cell_count(), |c| d.f2.eval(grad.comp2[c]))?;
    let j_f1 = area * pairwise_sum(&f1);
    let j_f2 = area * pairwise_sum(&f2);
    Ok(EnergyBreakdown { j_total: j_f1 + j_f2, j_f1, j_f2, e_part: j_f2, ..Default::default() })
}

/// `J[u] = ∫ f₁(∂₁u) + f₂(∂₂u)` with midpoint quadrature per cell.
pub fn eval_j(u: &GridFunction, d: &DensityPair) -> Result<EnergyBreakdown, EnergyError> {
    j_from_gradient(&gradient(u), d)
}

/// `δ ∫ (1 + |∂₁u|²)^{p/2}`.
pub fn delta_term(grad: &CellField2, delta: f64, p: f64) -> Result<f64, EnergyError> {
    let vals = cell_sums(grad.grid.cell_count(), |c| {
        let g = grad.comp1[c];
        (1.0 + g * g).powf(0.5 * p)
    })?;
    Ok(delta * grad.grid.cell_area() * pairwise_sum(&vals))
}

/// `J_δ[u]`: [`eval_j`] plus the regularization term, recorded separately.
pub fn eval_j_delta(u: &GridFunction, d: &DensityPair, delta: f64, p: f64) -> Result<EnergyBreakdown, EnergyError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EnergyError::Delta(delta));
    }
    let grad = gradient(u);
    let mut out = j_from_gradient(&grad, d)?;
    out.delta_term = delta_term(&grad, delta, p)?;
    Ok(out)
}

/// `E[v] = ∫ f₂(v)` for one value per cell.
pub fn eval_e(grid: Grid, v: &[f64], f2: &Density2Spec) -> Result<f64, EnergyError> {
    if v.len() != grid.cell_count() {
        return Err(GridError::Shape { expected: grid.cell_count(), got: v.len() }.into());
    }
    let vals = cell_sums(v.len(), |c| f2.eval(v[c]))?;
    Ok(grid.cell_area() * pairwise_sum(&vals))
}

/// A jump of `w` across the vertical grid line `x₁ = x₁(line)`, spanning
/// the cells `j_start..j_end` in `x₂`. Nodes strictly to the right of the
/// line on rows `j_start..=j_end` carry the extra `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSegment {
    pub line: usize,
    pub j_start: usize,
    pub j_end: usize,
    pub height: f64,
}

impl JumpSegment {
    pub fn length(&self, grid: Grid) -> f64 {
        (self.j_end - self.j_start) as f64 * grid.h2()
    }

    fn covers_node(&self, i: usize, j: usize) -> bool {
        i > self.line && j >= self.j_start && j <= self.j_end
    }
}

/// `w = smooth_part + Σ jumps`, with one-sided traces on `x₁ = ∓1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVCandidate {
    pub smooth_part: GridFunction,
    pub jumps: Vec<JumpSegment>,
    pub trace_left: Vec<f64>,
    pub trace_right: Vec<f64>,
}

impl BVCandidate {
    /// Builds the candidate and reads its traces off the nodal values.
    pub fn new(smooth_part: GridFunction, jumps: Vec<JumpSegment>) -> Self {
        let mut w = Self { smooth_part, jumps, trace_left: Vec::new(), trace_right: Vec::new() };
        let full = w.nodal_values();
        let g = full.grid;
        w.trace_left = (0..g.nodes2()).map(|j| full.at(0, j)).collect();
        w.trace_right = (0..g.nodes2()).map(|j| full.at(g.n1, j)).collect();
        w
    }

    /// A jump-free candidate.
    pub fn smooth(u: GridFunction) -> Self {
        Self::new(u, Vec::new())
    }

    pub fn grid(&self) -> Grid {
        self.smooth_part.grid
    }

    /// Nodal values of `w` including jump contributions.
    pub fn nodal_values(&self) -> GridFunction {
        let mut out = self.smooth_part.clone();
        let g = out.grid;
        for jump in &self.jumps {
            for j in 0..g.nodes2() {
                for i in 0..g.nodes1() {
                    if jump.covers_node(i, j) {
                        let k = g.node(i, j);
                        out.values[k] += jump.height;
                    }
                }
            }
        }
        out
    }

    /// Checks jump placement, trace consistency, and `w = u₀` on the
    /// horizontal sides (corners excluded, where `ν₂` is undefined).
    pub fn validate(&self, u0: &GridFunction) -> Result<(), EnergyError> {
        let g = self.grid();
        if u0.grid != g {
            return Err(GridError::GridMismatch.into());
        }
        for (n, jump) in self.jumps.iter().enumerate() {
            if jump.line == 0 || jump.line >= g.n1 {
                return Err(EnergyError::Candidate(format!("jump {n} is not on an interior vertical line")));
            }
            if jump.j_start >= jump.j_end || jump.j_end > g.n2 {
                return Err(EnergyError::Candidate(format!("jump {n} has an empty or out-of-range x2 span")));
            }
            if !jump.height.is_finite() {
                return Err(EnergyError::Candidate(format!("jump {n} has non-finite height")));
            }
        }
        if self.trace_left.len() != g.nodes2() || self.trace_right.len() != g.nodes2() {
            return Err(EnergyError::Candidate("trace arrays must have n2+1 entries".into()));
        }
        let w = self.nodal_values();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        for j in 0..g.nodes2() {
            if !close(self.trace_left[j], w.at(0, j)) || !close(self.trace_right[j], w.at(g.n1, j)) {
                return Err(EnergyError::Candidate(format!("trace does not match w on row {j}")));
            }
        }
        for i in 1..g.n1 {
            for j in [0, g.n2] {
                if !close(w.at(i, j), u0.at(i, j)) {
                    return Err(EnergyError::Candidate(format!(
                        "w differs from u0 on the horizontal boundary at node ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Relaxed functional `K[w]`: absolutely continuous energy, the recession
/// price of the jumps, and the recession price of boundary detachment on
/// `x₁ = ∓1` (trapezoid weights along each side).
pub fn eval_k(w: &BVCandidate, d: &DensityPair, u0: &GridFunction) -> Result<EnergyBreakdown, EnergyError> {
    w.validate(u0)?;
    let g = w.grid();
    let mut out = eval_j(&w.smooth_part, d)?;
    out.k_singular = w.jumps.iter().map(|jump| d.f1.recession_at(jump.height) * jump.length(g)).sum();
    let h2 = g.h2();
    let weight = |j: usize| if j == 0 || j == g.n2 { 0.5 * h2 } else { h2 };
    let mut boundary = Vec::with_capacity(2 * g.nodes2());
    for j in 0..g.nodes2() {
        // outward normal ν₁ = −1 on the left, +1 on the right
        boundary.push(weight(j) * d.f1.recession_at(-(u0.at(0, j) - w.trace_left[j])));
        boundary.push(weight(j) * d.f1.recession_at(u0.at(g.n1, j) - w.trace_right[j]));
    }
    out.k_boundary = pairwise_sum(&boundary);
    Ok(out)
}

/// `‖v‖_{L_A} = inf{ l > 0 : ∫ A(|v|/l) ≤ 1 }` for cell values `v`, by
/// bisection on `log l` over `[1e-12, 1e12]` to relative width `1e-10`. The
/// returned value satisfies `∫A(|v|/l) ≤ 1`.
pub fn luxemburg_norm(grid: Grid, v: &[f64], a: &NFunctionSpec) -> Result<f64, EnergyError> {
    if v.len() != grid.cell_count() {
        return Err(GridError::Shape { expected: grid.cell_count(), got: v.len() }.into());
    }
    if let Some(cell) = v.iter().position(|x| !x.is_finite()) {
        return Err(EnergyError::NonFinite { cell });
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let area = grid.cell_area();
    let excess = |l: f64| -> f64 {
        let vals: Vec<f64> = v.par_iter().with_min_len(PAR_MIN).map(|&x| a.eval(x.abs() / l)).collect();
        area * pairwise_sum(&vals) - 1.0
    };
    let (mut lo, mut hi) = (1e-12_f64, 1e12_f64);
    if excess(hi) > 0.0 {
        return Err(EnergyError::Unbounded { l_max: hi });
    }
    if excess(lo) <= 0.0 {
        return Ok(lo);
    }
    while hi / lo - 1.0 > 1e-10 {
        let mid = (lo * hi).sqrt();
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::DensityPair;
    use crate::grid::apply_dirichlet;

    fn pair() -> DensityPair {
        DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap()
    }

    #[test]
    fn affine_energy_is_area_times_density() {
        let d = pair();
        let g = Grid::new(10, 7).unwrap();
        let u = GridFunction::from_fn(g, |x, y| 0.7 * x - 1.3 * y);
        let e = eval_j(&u, &d).unwrap();
        let expected = 4.0 * (d.f1.eval(0.7) + d.f2.eval(-1.3));
        assert!((e.j_total - expected).abs() < 1e-12);
        assert_eq!(e.j_total, e.j_f1 + e.j_f2);
    }

    #[test]
    fn zero_field_zero_energy() {
        let d = pair();
        let u = GridFunction::zeros(Grid::square(8).unwrap());
        assert_eq!(eval_j(&u, &d).unwrap().j_total, 0.0);
        let e = eval_j_delta(&u, &d, 0.1, 2.0).unwrap();
        assert!((e.delta_term - 0.4).abs() < 1e-14);
        assert!(eval_j_delta(&u, &d, 1.0, 2.0).is_err());
    }

    #[test]
    fn delta_term_monotone_in_delta() {
        let d = pair();
        let u = GridFunction::from_fn(Grid::square(8).unwrap(), |x, y| (3.0 * x).sin() * y);
        let a = eval_j_delta(&u, &d, 0.5, 3.0).unwrap();
        let b = eval_j_delta(&u, &d, 0.25, 3.0).unwrap();
        assert!(a.j_delta() >= b.j_delta());
        assert_eq!(a.j_total, b.j_total);
        assert!((a.delta_term - 2.0 * b.delta_term).abs() <= 1e-14 * a.delta_term);
    }

    #[test]
    fn e_of_constant() {
        let d = pair();
        let g = Grid::square(4).unwrap();
        assert_eq!(eval_e(g, &vec![0.0; 16], &d.f2).unwrap(), 0.0);
        let e = eval_e(g, &vec![1.5; 16], &d.f2).unwrap();
        assert!((e - 4.0 * 2.25).abs() < 1e-14);
    }

    #[test]
    fn k_equals_j_without_jumps() {
        let d = pair();
        let g = Grid::square(6).unwrap();
        let u = apply_dirichlet(&GridFunction::from_fn(g, |x, y| x * y + x), |x, y| x * y + x);
        let w = BVCandidate::smooth(u.clone());
        let k = eval_k(&w, &d, &u).unwrap();
        let j = eval_j(&u, &d).unwrap();
        assert_eq!(k.k_total(), j.j_total);
        assert_eq!(k.k_singular, 0.0);
        assert_eq!(k.k_boundary, 0.0);
    }

    #[test]
    fn unit_jump_singular_mass() {
        let d = pair();
        let g = Grid::square(8).unwrap();
        let jump = JumpSegment { line: 4, j_start: 0, j_end: 8, height: 1.0 };
        let w = BVCandidate::new(GridFunction::zeros(g), vec![jump]);
        let u0 = w.nodal_values();
        let k = eval_k(&w, &d, &u0).unwrap();
        assert_eq!(k.k_singular, 2.0);
        assert_eq!(k.k_boundary, 0.0);
        assert_eq!(k.k_total(), 2.0);
    }

    #[test]
    fn boundary_detachment_price() {
        let d = pair();
        let g = Grid::square(8).unwrap();
        let w = BVCandidate::smooth(GridFunction::zeros(g));
        let u0 = GridFunction::from_fn(g, |x, _| if x.abs() == 1.0 { 1.0 } else { 0.0 });
        let k = eval_k(&w, &d, &u0).unwrap();
        assert!((k.k_boundary - 4.0).abs() < 1e-14);
    }

    #[test]
    fn candidate_validation() {
        let d = pair();
        let g = Grid::square(8).unwrap();
        let off_line = JumpSegment { line: 0, j_start: 0, j_end: 8, height: 1.0 };
        let w = BVCandidate::new(GridFunction::zeros(g), vec![off_line]);
        assert!(matches!(eval_k(&w, &d, &GridFunction::zeros(g)), Err(EnergyError::Candidate(_))));
        // top/bottom traces must match u0
        let jump = JumpSegment { line: 4, j_start: 0, j_end: 8, height: 1.0 };
        let w = BVCandidate::new(GridFunction::zeros(g), vec![jump]);
        assert!(eval_k(&w, &d, &GridFunction::zeros(g)).is_err());
    }

    #[test]
    fn luxemburg_quadratic_constant() {
        let g = Grid::square(4).unwrap();
        let a = NFunctionSpec::power(1.0, 2.0).unwrap();
        let v = vec![-0.75; 16];
        let n = luxemburg_norm(g, &v, &a).unwrap();
        assert!((n - 1.5).abs() < 1e-9);
        assert_eq!(luxemburg_norm(g, &vec![0.0; 16], &a).unwrap(), 0.0);
    }
}
