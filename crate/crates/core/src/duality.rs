//! Stress fields, the Lagrangian `l(v, τ)`, the dual functional `R`, the
//! duality gap and the pointwise Fenchel-equality check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{DensityError, DensityPair};
use crate::energy::{eval_j, EnergyError};
use crate::grid::{divergence_residual, gradient, CellField2, GridError, GridFunction};
use crate::sum::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualError {
    #[error("conjugate undefined in cell {cell}: {source}")]
    Conjugate { cell: usize, source: DensityError },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `σ_δ = τ + δ(X_δ, 0)` with `τ = (f₁'(∂₁u), f₂'(∂₂u))` and
/// `X_δ = p(1+|∂₁u|²)^{(p−2)/2} ∂₁u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressFields {
    pub sigma: CellField2,
    pub tau: CellField2,
    pub x_delta: Vec<f64>,
}

/// `p(1+t²)^{(p−2)/2} t`, the derivative of `(1+t²)^{p/2}`.
pub fn regularizer_deriv(t: f64, p: f64) -> f64 {
    p * (1.0 + t * t).powf(0.5 * (p - 2.0)) * t
}

/// Second derivative of `(1+t²)^{p/2}`: `p(1+t²)^{(p−4)/2}(1 + (p−1)t²)`.
pub fn regularizer_second_deriv(t: f64, p: f64) -> f64 {
    let s = 1.0 + t * t;
    p * s.powf(0.5 * (p - 4.0)) * (1.0 + (p - 1.0) * t * t)
}

pub fn stress_from_gradient(grad: &CellField2, d: &DensityPair, delta: f64, p_reg: f64) -> StressFields {
    let n = grad.grid.cell_count();
    let x_delta: Vec<f64> =
        (0..n).into_par_iter().with_min_len(4096).map(|c| regularizer_deriv(grad.comp1[c], p_reg)).collect();
    let (t1, t2): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .with_min_len(4096)
        .map(|c| d.gradient(grad.comp1[c], grad.comp2[c]))
        .unzip();
    let s1: Vec<f64> = t1.iter().zip(&x_delta).map(|(t, x)| t + delta * x).collect();
    StressFields {
        sigma: CellField2 { grid: grad.grid, comp1: s1, comp2: t2.clone() },
        tau: CellField2 { grid: grad.grid, comp1: t1, comp2: t2 },
        x_delta,
    }
}

pub fn stress(u: &GridFunction, d: &DensityPair, delta: f64, p_reg: f64) -> StressFields {
    stress_from_gradient(&gradient(u), d, delta, p_reg)
}

fn conjugate_cells(tau: &CellField2, d: &DensityPair) -> Result<Vec<f64>, DualError> {
    (0..tau.grid.cell_count())
        .into_par_iter()
        .with_min_len(4096)
        .map(|c| d.conjugate(tau.comp1[c], tau.comp2[c]).map_err(|source| DualError::Conjugate { cell: c, source }))
        .collect()
}

/// `l(v, τ) = ∫ τ·∇v − f₁*(τ₁) − A*(|τ₂|)`.
pub fn lagrangian(v: &GridFunction, tau: &CellField2, d: &DensityPair) -> Result<f64, DualError> {
    if v.grid != tau.grid {
        return Err(GridError::GridMismatch.into());
    }
    tau.check_shape()?;
    let grad = gradient(v);
    let conj = conjugate_cells(tau, d)?;
    let vals: Vec<f64> = (0..tau.grid.cell_count())
        .map(|c| tau.comp1[c] * grad.comp1[c] + tau.comp2[c] * grad.comp2[c] - conj[c])
        .collect();
    Ok(tau.grid.cell_area() * pairwise_sum(&vals))
}

/// `R[τ]` through the divergence-free reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RValue {
    /// `l(u₀, τ)`.
    pub value: f64,
    /// `max |div residual(τ)| ≤ div_tol`.
    pub certified: bool,
    pub residual_max: f64,
}

impl RValue {
    /// Bound on `|l(v, τ) − l(u₀, τ)|` for an admissible `v`:
    /// `residual_max · Σ|v − u₀|` over interior nodes.
    pub fn error_bar(&self, v: &GridFunction, u0: &GridFunction) -> f64 {
        let g = v.grid;
        let diffs: Vec<f64> = g.interior_nodes().iter().map(|&k| (v.values[k] - u0.values[k]).abs()).collect();
        self.residual_max * pairwise_sum(&diffs)
    }
}

pub fn max_interior_abs(r: &GridFunction) -> f64 {
    r.grid.interior_nodes().iter().map(|&k| r.values[k].abs()).fold(0.0, f64::max)
}

/// Evaluates `R[τ] = inf_v l(v, τ)` as `l(u₀, τ)`. When `τ` is discretely
/// divergence-free (to `div_tol`) the Lagrangian is independent of the
/// admissible `v` up to [`RValue::error_bar`]; otherwise the true infimum
/// may be `−∞` and the value is reported uncertified.
pub fn eval_r(tau: &CellField2, d: &DensityPair, u0: &GridFunction, div_tol: f64) -> Result<RValue, DualError> {
    let value = lagrangian(u0, tau, d)?;
    let residual_max = max_interior_abs(&divergence_residual(tau));
    Ok(RValue { value, certified: residual_max <= div_tol, residual_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    #[serde(rename = "r")]
    pub r_value: f64,
    #[serde(rename = "gap_abs")]
    pub gap_absolute: f64,
    #[serde(rename = "gap_rel")]
    pub gap_relative: f64,
    #[serde(rename = "div_residual")]
    pub div_residual_max: f64,
    #[serde(rename = "extremality")]
    pub extremality_max_violation: f64,
    pub delta_stress_norm: f64,
}

/// `u` with its interior replaced by the blended boundary data.
pub fn boundary_interpolant(u: &GridFunction) -> GridFunction {
    let mut out = u.clone();
    out.fill_interior_from_boundary();
    out
}

/// Gap `J[u] − R[τ]`, with `R[τ]` read off the boundary interpolant of `u`.
/// The value is a lower bound for `J` only up to `div_residual_max` times
/// the distance of the admissible fields to that interpolant.
pub fn duality_gap(u: &GridFunction, tau: &CellField2, d: &DensityPair) -> Result<DualReport, DualError> {
    let j = eval_j(u, d)?.j_total;
    let r = eval_r(tau, d, &boundary_interpolant(u), f64::INFINITY)?;
    let gap = j - r.value;
    Ok(DualReport {
        r_value: r.value,
        gap_absolute: gap,
        gap_relative: gap / (1.0 + j.abs()),
        div_residual_max: r.residual_max,
        extremality_max_violation: extremality_check(u, tau, d)?,
        delta_stress_norm: 0.0,
    })
}

/// `max_cells |f(∇u) + f*(σ) − σ·∇u| / (1 + |σ·∇u|)`.
pub fn extremality_check(u: &GridFunction, sigma: &CellField2, d: &DensityPair) -> Result<f64, DualError> {
    if u.grid != sigma.grid {
        return Err(GridError::GridMismatch.into());
    }
    let grad = gradient(u);
    let conj = conjugate_cells(sigma, d)?;
    Ok((0..u.grid.cell_count())
        .map(|c| {
            let pairing = sigma.comp1[c] * grad.comp1[c] + sigma.comp2[c] * grad.comp2[c];
            (d.eval(grad.comp1[c], grad.comp2[c]) + conj[c] - pairing).abs() / (1.0 + pairing.abs())
        })
        .fold(0.0, f64::max))
}

/// Pointwise Fenchel–Young defect `f(∇u) + f*(τ) − τ·∇u` per cell.
pub fn fenchel_young_defects(u: &GridFunction, tau: &CellField2, d: &DensityPair) -> Result<Vec<f64>, DualError> {
    let grad = gradient(u);
    let conj = conjugate_cells(tau, d)?;
    Ok((0..u.grid.cell_count())
        .map(|c| {
            d.eval(grad.comp1[c], grad.comp2[c]) + conj[c] - tau.comp1[c] * grad.comp1[c] - tau.comp2[c] * grad.comp2[c]
        })
        .collect())
}

/// `‖δ X_δ‖_{L^{p/(p−1)}}`.
pub fn delta_stress_norm(grid: crate::grid::Grid, x_delta: &[f64], delta: f64, p_reg: f64) -> f64 {
    let q = p_reg / (p_reg - 1.0);
    let vals: Vec<f64> = x_delta.iter().map(|x| (delta * x).abs().powf(q)).collect();
    (grid.cell_area() * pairwise_sum(&vals)).powf(1.0 / q)
}

/// Dual bookkeeping for one regularization level. The dual field is the
/// regularized stress `σ_δ`, divergence-free at a converged `u_δ`; when
/// `σ_δ` leaves the domain of `f*` it falls back to `Df(∇u_δ)`, which is
/// in range but carries the divergence defect of `δX_δ`.
pub fn level_report(u: &GridFunction, d: &DensityPair, delta: f64, p_reg: f64) -> Result<DualReport, DualError> {
    let fields = stress(u, d, delta, p_reg);
    let dual = if conjugate_cells(&fields.sigma, d).is_ok() { &fields.sigma } else { &fields.tau };
    let mut report = duality_gap(u, dual, d)?;
    report.delta_stress_norm = delta_stress_norm(u.grid, &fields.x_delta, delta, p_reg);
    Ok(report)
}
