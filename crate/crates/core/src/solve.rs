//! Minimization of the discrete regularized energy
//! `J_δ[u] = ∫ δ(1+|∂₁u|²)^{p/2} + f₁(∂₁u) + f₂(∂₂u)` over the interior nodal
//! values, and the continuation `δ ↓ 0` built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::DensityPair;
use crate::duality::{max_interior_abs, regularizer_second_deriv, stress_from_gradient};
use crate::energy::{delta_term, eval_j, EnergyError};
use crate::grid::{divergence_residual, gradient, CellField2, Grid, GridFunction};
use crate::sum::pairwise_sum;

const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const CG_RTOL: f64 = 1e-8;
const NEGATIVE_CURVATURE: f64 = -1e-10;
const MAX_CURVATURE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid solve configuration: {0}")]
    Config(String),
    #[error("iteration cap reached at delta = {delta} (residual {})", record.euler_residual_max)]
    IterationCapExceeded { delta: f64, best: Box<GridFunction>, record: LevelRecord },
    #[error("line search stalled at delta = {delta} (residual {})", record.euler_residual_max)]
    Stalled { delta: f64, best: Box<GridFunction>, record: LevelRecord },
    #[error("negative curvature {curvature} at delta = {delta}: energy is not convex")]
    NonConvexDetected { delta: f64, curvature: f64 },
    #[error("energy evaluation failed at delta = {delta}: {source}")]
    Energy { delta: f64, source: EnergyError },
    #[error("continuation contract violated: {0}")]
    Contract(String),
}

impl SolveError {
    pub fn delta(&self) -> Option<f64> {
        match self {
            SolveError::IterationCapExceeded { delta, .. }
            | SolveError::Stalled { delta, .. }
            | SolveError::NonConvexDetected { delta, .. }
            | SolveError::Energy { delta, .. } => Some(*delta),
            _ => None,
        }
    }
}

/// Default geometric schedule `1e-1, 1e-2, …, 1e-6`.
pub fn default_schedule() -> Vec<f64> {
    (1..=6).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub grid: Grid,
    pub densities: DensityPair,
    /// Boundary data; only the boundary ring is read.
    pub u0: GridFunction,
    pub delta_schedule: Vec<f64>,
    pub p_reg: f64,
    pub tol_grad: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl SolveConfig {
    /// Config with the default schedule, `p_reg` taken from `f₂`,
    /// `tol_grad = 1e-8` and `max_iter = 200`.
    pub fn new(densities: DensityPair, u0: GridFunction) -> Self {
        let p_reg = densities.f2.regularization_exponent();
        Self {
            grid: u0.grid,
            densities,
            u0,
            delta_schedule: default_schedule(),
            p_reg,
            tol_grad: 1e-8,
            max_iter: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let fail = |m: String| Err(SolveError::Config(m));
        if self.u0.grid != self.grid {
            return fail("boundary data lives on a different grid".into());
        }
        if self.delta_schedule.is_empty() {
            return fail("empty delta schedule".into());
        }
        for (k, &d) in self.delta_schedule.iter().enumerate() {
            if !(d > 0.0 && d < 1.0) {
                return fail(format!("delta {d} outside (0, 1)"));
            }
            if k > 0 && !(d < self.delta_schedule[k - 1]) {
                return fail("delta schedule must be strictly decreasing".into());
            }
        }
        if !(self.tol_grad > 0.0) {
            return fail("tol_grad must be positive".into());
        }
        if !(self.p_reg >= 2.0) || !self.p_reg.is_finite() {
            return fail(format!("p_reg = {} must be >= 2", self.p_reg));
        }
        if self.max_iter == 0 {
            return fail("max_iter must be positive".into());
        }
        self.densities.validate().map_err(|e| SolveError::Config(format!("densities: {e}")))
    }

    /// `u0` locked on the boundary with a blended interior.
    pub fn initial_guess(&self) -> GridFunction {
        let mut u = crate::grid::apply_dirichlet_from(&GridFunction::zeros(self.grid), &self.u0)
            .expect("grids checked by validate");
        u.fill_interior_from_boundary();
        u
    }

    fn boundary_matches(&self, u: &GridFunction) -> bool {
        let g = self.grid;
        u.grid == g
            && (0..g.nodes2()).all(|j| {
                (0..g.nodes1()).all(|i| !g.is_boundary(i, j) || u.at(i, j) == self.u0.at(i, j))
            })
    }
}

/// Diagnostics for one regularization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub delta: f64,
    pub j_value: f64,
    pub j_delta_value: f64,
    /// `δ ∫ (1+|∂₁u_δ|²)^{p/2}`.
    pub delta_term: f64,
    pub euler_residual_max: f64,
    pub iterations: usize,
}

/// The regularized energy at fixed `δ`.
struct Regularized<'a> {
    d: &'a DensityPair,
    delta: f64,
    p: f64,
    grid: Grid,
}

impl Regularized<'_> {
    fn energy_of(&self, grad: &CellField2) -> f64 {
        let (d, delta, p) = (self.d, self.delta, self.p);
        let vals: Vec<f64> = (0..self.grid.cell_count())
            .into_par_iter()
            .with_min_len(4096)
            .map(|c| {
                let (g1, g2) = (grad.comp1[c], grad.comp2[c]);
                delta * (1.0 + g1 * g1).powf(0.5 * p) + d.f1.eval(g1) + d.f2.eval(g2)
            })
            .collect();
        self.grid.cell_area() * pairwise_sum(&vals)
    }

    fn energy(&self, u: &GridFunction) -> f64 {
        self.energy_of(&gradient(u))
    }

    /// Nodal gradient of the energy (zero on the boundary).
    fn residual(&self, u: &GridFunction) -> GridFunction {
        let fields = stress_from_gradient(&gradient(u), self.d, self.delta, self.p);
        divergence_residual(&fields.sigma)
    }

    fn curvatures(&self, u: &GridFunction) -> CellField2 {
        let grad = gradient(u);
        let (d, delta, p) = (self.d, self.delta, self.p);
        let (c1, c2): (Vec<f64>, Vec<f64>) = (0..self.grid.cell_count())
            .into_par_iter()
            .with_min_len(4096)
            .map(|c| {
                let (g1, g2) = (grad.comp1[c], grad.comp2[c]);
                let c1 = d.f1.second_deriv(g1) + delta * regularizer_second_deriv(g1, p);
                // power densities with p < 2 are infinitely curved at 0
                (c1.min(MAX_CURVATURE), d.f2.second_deriv(g2).min(MAX_CURVATURE))
            })
            .unzip();
        CellField2 { grid: self.grid, comp1: c1, comp2: c2 }
    }
}

/// `H v = h₁h₂ Gᵀ diag(curv) G v` on a nodal vector with zero boundary.
fn hess_vec(curv: &CellField2, v: &GridFunction) -> GridFunction {
    let mut gv = gradient(v);
    for c in 0..gv.comp1.len() {
        gv.comp1[c] *= curv.comp1[c];
        gv.comp2[c] *= curv.comp2[c];
    }
    divergence_residual(&gv)
}

fn hess_diag(curv: &CellField2) -> GridFunction {
    let g = curv.grid;
    let (a1, a2) = (g.cell_area() / (4.0 * g.h1() * g.h1()), g.cell_area() / (4.0 * g.h2() * g.h2()));
    let mut out = GridFunction::zeros(g);
    for j in 1..g.n2 {
        for i in 1..g.n1 {
            let mut acc = 0.0;
            for (ci, cj) in [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)] {
                let c = g.cell(ci, cj);
                acc += a1 * curv.comp1[c] + a2 * curv.comp2[c];
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prod)
}

enum CgOutcome {
    Converged(GridFunction),
    NotConverged,
    NegativeCurvature(f64),
}

/// Preconditioned CG for `H x = rhs` on interior nodes.
fn pcg(curv: &CellField2, rhs: &GridFunction, max_iter: usize) -> CgOutcome {
    let g = curv.grid;
    let interior = g.interior_nodes();
    let diag = hess_diag(curv);
    let precond = |r: &GridFunction| -> GridFunction {
        let mut z = GridFunction::zeros(g);
        for &k in &interior {
            let dk = diag.values[k];
            z.values[k] = if dk > 0.0 { r.values[k] / dk } else { r.values[k] };
        }
        z
    };
    let mut x = GridFunction::zeros(g);
    let mut r = rhs.clone();
    let rhs_norm = dot(&rhs.values, &rhs.values).sqrt();
    if rhs_norm == 0.0 {
        return CgOutcome::Converged(x);
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r.values, &z.values);
    for _ in 0..max_iter {
        let hp = hess_vec(curv, &p);
        let php = dot(&p.values, &hp.values);
        let pp = dot(&p.values, &p.values);
        if php < NEGATIVE_CURVATURE * pp {
            return CgOutcome::NegativeCurvature(php / pp);
        }
        if php <= 0.0 {
            return CgOutcome::NotConverged;
        }
        let alpha = rz / php;
        for &k in &interior {
            x.values[k] += alpha * p.values[k];
            r.values[k] -= alpha * hp.values[k];
        }
        if dot(&r.values, &r.values).sqrt() <= CG_RTOL * rhs_norm {
            return CgOutcome::Converged(x);
        }
        z = precond(&r);
        let rz_new = dot(&r.values, &z.values);
        let beta = rz_new / rz;
        rz = rz_new;
        for &k in &interior {
            p.values[k] = z.values[k] + beta * p.values[k];
        }
    }
    CgOutcome::NotConverged
}

fn axpy(u: &GridFunction, alpha: f64, dir: &GridFunction) -> GridFunction {
    let mut out = u.clone();
    for &k in &u.grid.interior_nodes() {
        out.values[k] += alpha * dir.values[k];
    }
    out
}

fn make_record(cfg: &SolveConfig, delta: f64, u: &GridFunction, residual: f64, iterations: usize) -> Result<LevelRecord, SolveError> {
    let wrap = |source| SolveError::Energy { delta, source };
    let j = eval_j(u, &cfg.densities).map_err(wrap)?;
    let dt = delta_term(&gradient(u), delta, cfg.p_reg).map_err(wrap)?;
    Ok(LevelRecord {
        delta,
        j_value: j.j_total,
        j_delta_value: j.j_total + dt,
        delta_term: dt,
        euler_residual_max: residual,
        iterations,
    })
}

/// Minimizes `J_δ` from `warm_start` (or the blended boundary data).
///
/// Newton directions come from preconditioned CG on the assembled
/// Hessian-vector product; a CG failure falls back to steepest descent.
/// Every accepted step satisfies the Armijo condition, except once the
/// predicted decrease drops below the energy's rounding level, where a
/// step is accepted only if it reduces the residual.
pub fn minimize_j_delta(
    cfg: &SolveConfig,
    delta: f64,
    warm_start: Option<&GridFunction>,
) -> Result<(GridFunction, LevelRecord), SolveError> {
    cfg.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SolveError::Config(format!("delta {delta} outside (0, 1)")));
    }
    let mut u = match warm_start {
        Some(w) => {
            if !cfg.boundary_matches(w) {
                return Err(SolveError::Config("warm start does not carry the boundary data".into()));
            }
            let mut w = w.clone();
            for (m, b) in w.boundary_mask.iter_mut().enumerate() {
                let (i, j) = (m % cfg.grid.nodes1(), m / cfg.grid.nodes1());
                *b = cfg.grid.is_boundary(i, j);
            }
            w
        }
        None => cfg.initial_guess(),
    };
    let problem = Regularized { d: &cfg.densities, delta, p: cfg.p_reg, grid: cfg.grid };
    let cg_cap = cfg.grid.interior_nodes().len().clamp(200, 5000);

    let mut energy = problem.energy(&u);
    let mut res = problem.residual(&u);
    let mut res_max = max_interior_abs(&res);
    if !energy.is_finite() {
        return Err(SolveError::Energy { delta, source: EnergyError::NonFinite { cell: 0 } });
    }

    for iter in 0..cfg.max_iter {
        if res_max <= cfg.tol_grad {
            let record = make_record(cfg, delta, &u, res_max, iter)?;
            return Ok((u, record));
        }
        let curv = problem.curvatures(&u);
        let mut neg = res.clone();
        neg.values.iter_mut().for_each(|v| *v = -*v);
        let mut dir = match pcg(&curv, &neg, cg_cap) {
            CgOutcome::Converged(x) => x,
            CgOutcome::NotConverged => neg.clone(),
            CgOutcome::NegativeCurvature(curvature) => {
                return Err(SolveError::NonConvexDetected { delta, curvature });
            }
        };
        let mut slope = dot(&res.values, &dir.values);
        if !(slope < 0.0) {
            dir = neg;
            slope = dot(&res.values, &dir.values);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial = axpy(&u, alpha, &dir);
            let e = problem.energy(&trial);
            if e.is_finite() && e <= energy + ARMIJO_SLOPE * alpha * slope && e < energy {
                accepted = Some((trial, e));
                break;
            }
            if (alpha * slope).abs() < 1e-14 * (1.0 + energy.abs()) {
                // decrease below rounding: fall back to residual reduction
                let trial_res = problem.residual(&trial);
                if e.is_finite() && max_interior_abs(&trial_res) < res_max {
                    accepted = Some((trial, e));
                }
                break;
            }
            alpha *= BACKTRACK;
        }
        match accepted {
            Some((trial, e)) => {
                u = trial;
                energy = e;
                res = problem.residual(&u);
                res_max = max_interior_abs(&res);
            }
            None => {
                let record = make_record(cfg, delta, &u, res_max, iter)?;
                return Err(SolveError::Stalled { delta, best: Box::new(u), record });
            }
        }
    }
    let record = make_record(cfg, delta, &u, res_max, cfg.max_iter)?;
    if res_max <= cfg.tol_grad {
        return Ok((u, record));
    }
    Err(SolveError::IterationCapExceeded { delta, best: Box::new(u), record })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub records: Vec<LevelRecord>,
    pub u_final: GridFunction,
    /// `σ_δ` at the last level.
    pub stress_final: CellField2,
    /// `δ`-term ratio between consecutive levels stayed within
    /// `1.1 · δ_{k+1}/δ_k`.
    pub delta_term_ratio_ok: bool,
    /// Minimizers `u_δ`, one per level.
    #[serde(skip)]
    pub history: Vec<GridFunction>,
}

impl SolveReport {
    pub fn final_record(&self) -> &LevelRecord {
        self.records.last().expect("continuation runs at least one level")
    }

    pub fn records_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["delta", "j", "j_delta", "delta_term", "euler_residual", "iterations"])?;
        for r in &self.records {
            w.serialize((r.delta, r.j_value, r.j_delta_value, r.delta_term, r.euler_residual_max, r.iterations))?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Warm-started sweep over the δ schedule.
pub fn continuation(cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
    continuation_from(cfg, None)
}

/// [`continuation`] starting from a given field at the first level.
pub fn continuation_from(cfg: &SolveConfig, start: Option<&GridFunction>) -> Result<SolveReport, SolveError> {
    cfg.validate()?;
    let mut records: Vec<LevelRecord> = Vec::with_capacity(cfg.delta_schedule.len());
    let mut history = Vec::with_capacity(cfg.delta_schedule.len());
    let mut current = start.cloned();
    let mut ratio_ok = true;
    for &delta in &cfg.delta_schedule {
        let (u, rec) = minimize_j_delta(cfg, delta, current.as_ref())?;
        if let Some(prev) = records.last() {
            let slack = 1e-10 * (1.0 + prev.j_value.abs());
            if rec.j_value > prev.j_value + slack {
                return Err(SolveError::Contract(format!(
                    "J increased from {} to {} at delta = {delta}",
                    prev.j_value, rec.j_value
                )));
            }
            if rec.j_value > prev.j_delta_value + slack {
                return Err(SolveError::Contract(format!("J[u_δ'] exceeds J_δ[u_δ] at delta = {delta}")));
            }
            if rec.delta_term > prev.delta_term * (delta / prev.delta) * 1.1 {
                ratio_ok = false;
            }
        }
        records.push(rec);
        history.push(u.clone());
        current = Some(u);
    }
    let u_final = current.expect("schedule is nonempty");
    let last = *records.last().expect("schedule is nonempty");
    let stress_final = stress_from_gradient(&gradient(&u_final), &cfg.densities, last.delta, cfg.p_reg).sigma;
    Ok(SolveReport { records, u_final, stress_final, delta_term_ratio_ok: ratio_ok, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartResult {
    pub max_gradient_discrepancy: f64,
    pub reports: Vec<SolveReport>,
}

/// Random interior start, uniform in `[−1, 1]`, with the boundary data.
pub fn random_start(cfg: &SolveConfig, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = cfg.initial_guess();
    for k in cfg.grid.interior_nodes() {
        u.values[k] = rng.gen_range(-1.0..=1.0);
    }
    u
}

/// Continuation from `n_starts` random starts with seeds `seed, seed+1, …`.
pub fn multi_start(cfg: &SolveConfig, n_starts: usize) -> Result<MultiStartResult, SolveError> {
    let seeds: Vec<u64> = (0..n_starts as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    multi_start_with_seeds(cfg, &seeds)
}

/// Largest pairwise 2-norm difference of final cell gradients over cells
/// inset by 10% of each side.
pub fn multi_start_with_seeds(cfg: &SolveConfig, seeds: &[u64]) -> Result<MultiStartResult, SolveError> {
    if seeds.len() < 2 {
        return Err(SolveError::Config("multi-start needs at least 2 starts".into()));
    }
    let reports = seeds
        .iter()
        .map(|&s| continuation_from(cfg, Some(&random_start(cfg, s))))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = cfg.grid.inset_cells(0.1);
    let grads: Vec<CellField2> = reports.iter().map(|r| gradient(&r.u_final)).collect();
    let mut worst = 0.0_f64;
    for a in 0..grads.len() {
        for b in a + 1..grads.len() {
            for &c in &cells {
                let d1 = grads[a].comp1[c] - grads[b].comp1[c];
                let d2 = grads[a].comp2[c] - grads[b].comp2[c];
                worst = worst.max(d1.hypot(d2));
            }
        }
    }
    Ok(MultiStartResult { max_gradient_discrepancy: worst, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::apply_dirichlet;

    fn cfg(n: usize, u0: impl Fn(f64, f64) -> f64) -> SolveConfig {
        let g = Grid::square(n).unwrap();
        let d = DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap();
        SolveConfig::new(d, apply_dirichlet(&GridFunction::zeros(g), u0))
    }

    #[test]
    fn hessian_matches_residual_differences() {
        let c = cfg(6, |x, y| x * x - y);
        let problem = Regularized { d: &c.densities, delta: 0.1, p: 3.0, grid: c.grid };
        let u = GridFunction::from_fn(c.grid, |x, y| (2.0 * x).sin() + x * y * y);
        let v = {
            let mut v = GridFunction::from_fn(c.grid, |x, y| (x + 2.0 * y).cos());
            for j in 0..c.grid.nodes2() {
                for i in 0..c.grid.nodes1() {
                    if c.grid.is_boundary(i, j) {
                        v.set(i, j, 0.0);
                    }
                }
            }
            v
        };
        let hv = hess_vec(&problem.curvatures(&u), &v);
        let eps = 1e-6;
        let rp = problem.residual(&axpy(&u, eps, &v));
        let rm = problem.residual(&axpy(&u, -eps, &v));
        for k in c.grid.interior_nodes() {
            let fd = (rp.values[k] - rm.values[k]) / (2.0 * eps);
            assert!((fd - hv.values[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", hv.values[k]);
        }
    }

    #[test]
    fn residual_is_energy_gradient() {
        let c = cfg(5, |x, y| x + y);
        let problem = Regularized { d: &c.densities, delta: 0.2, p: 2.0, grid: c.grid };
        let u = GridFunction::from_fn(c.grid, |x, y| x * x + 0.3 * y + x * y);
        let r = problem.residual(&u);
        for k in c.grid.interior_nodes() {
            let eps = 1e-6;
            let mut up = u.clone();
            up.values[k] += eps;
            let mut um = u.clone();
            um.values[k] -= eps;
            let fd = (problem.energy(&up) - problem.energy(&um)) / (2.0 * eps);
            assert!((fd - r.values[k]).abs() < 1e-7, "{fd} vs {}", r.values[k]);
        }
    }

    #[test]
    fn zero_data_returns_zero() {
        let c = cfg(8, |_, _| 0.0);
        let (u, rec) = minimize_j_delta(&c, 0.1, None).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.j_value, 0.0);
    }

    #[test]
    fn schedule_validation() {
        let mut c = cfg(4, |x, _| x);
        c.delta_schedule = vec![1e-3, 1e-2];
        assert!(matches!(continuation(&c), Err(SolveError::Config(_))));
        c.delta_schedule = vec![0.5, 0.5];
        assert!(continuation(&c).is_err());
        c.delta_schedule = vec![1.0];
        assert!(continuation(&c).is_err());
        c.delta_schedule = vec![0.1];
        c.tol_grad = 0.0;
        assert!(continuation(&c).is_err());
    }

    #[test]
    fn single_level_matches_direct_call() {
        let mut c = cfg(8, |x, y| x * y + 0.5 * x);
        c.delta_schedule = vec![0.05];
        let report = continuation(&c).unwrap();
        let (u, rec) = minimize_j_delta(&c, 0.05, None).unwrap();
        assert_eq!(report.u_final, u);
        assert_eq!(report.records, vec![rec]);
    }

    #[test]
    fn multi_start_needs_two() {
        let c = cfg(4, |x, _| x);
        assert!(matches!(multi_start(&c, 1), Err(SolveError::Config(_))));
    }

    #[test]
    fn csv_columns() {
        let mut c = cfg(4, |x, _| x);
        c.delta_schedule = vec![0.1, 0.01];
        let csv = continuation(&c).unwrap().records_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("delta,j,j_delta,delta_term,euler_residual,iterations"));
        assert_eq!(lines.count(), 2);
    }
}
