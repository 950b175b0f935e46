//! Experiment drivers: interior integrability of the regularized family,
//! smoothing of jump candidates, and the gap between the relaxed energy and
//! the Sobolev infimum.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::DensityPair;
use crate::energy::{eval_j, eval_k, BVCandidate, EnergyError};
use crate::grid::{gradient, Grid, GridFunction};
use crate::solve::{continuation, SolveConfig, SolveError, SolveReport};
use crate::sum::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("invalid experiment input: {0}")]
    Config(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("experiment contract violated: {0}")]
    Contract(String),
}

/// Relative change between the last two levels below which an integral
/// counts as bounded.
pub const BOUNDED_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentKind {
    /// `∫(1+|∂₂u|²)^{χ/2}`
    Chi,
    /// `∫(1+|∂₁u|²)^{κ/2}`
    Kappa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Trend {
    Bounded,
    Growing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub kind: ExponentKind,
    pub exponent: f64,
    pub integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepFlag {
    pub kind: ExponentKind,
    pub exponent: f64,
    pub relative_change: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub interior_margin: f64,
    pub rows: Vec<SweepRow>,
    pub flags: Vec<SweepFlag>,
}

impl SweepTable {
    pub fn all_bounded(&self) -> bool {
        self.flags.iter().all(|f| f.trend == Trend::Bounded)
    }

    pub fn integral(&self, delta: f64, kind: ExponentKind, exponent: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.delta == delta && r.kind == kind && r.exponent == exponent)
            .map(|r| r.integral)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["delta", "kind", "exponent", "integral"])?;
        for r in &self.rows {
            let kind = match r.kind {
                ExponentKind::Chi => "chi",
                ExponentKind::Kappa => "kappa",
            };
            w.serialize((r.delta, kind, r.exponent, r.integral))?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, csv::Error> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `∫_{Ω'} (1+g²)^{e/2}` over the given cells.
fn power_integral(grid: Grid, comp: &[f64], cells: &[usize], e: f64) -> f64 {
    let vals: Vec<f64> = cells.iter().map(|&c| (1.0 + comp[c] * comp[c]).powf(0.5 * e)).collect();
    grid.cell_area() * pairwise_sum(&vals)
}

/// Interior integrals of the stored minimizers `u_δ` on `Ω` inset by
/// `margin` on each side. Each exponent is flagged by comparing the last two
/// levels.
pub fn integrability_sweep(
    report: &SolveReport,
    chis: &[f64],
    kappas: &[f64],
    margin: f64,
) -> Result<SweepTable, DiagError> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(DiagError::Config(format!("margin {margin} outside (0, 0.5)")));
    }
    if report.history.len() < 3 || report.history.len() != report.records.len() {
        return Err(DiagError::Config("sweep needs at least 3 stored levels".into()));
    }
    if chis.iter().chain(kappas).any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(DiagError::Config("exponents must be positive and finite".into()));
    }
    let grid = report.u_final.grid;
    let cells = grid.inset_cells(margin);
    let exps: Vec<(ExponentKind, f64)> = chis
        .iter()
        .map(|&e| (ExponentKind::Chi, e))
        .chain(kappas.iter().map(|&e| (ExponentKind::Kappa, e)))
        .collect();

    let per_level: Vec<Vec<SweepRow>> = report
        .history
        .par_iter()
        .zip(&report.records)
        .map(|(u, rec)| {
            let g = gradient(u);
            exps.iter()
                .map(|&(kind, e)| {
                    let comp = match kind {
                        ExponentKind::Chi => &g.comp2,
                        ExponentKind::Kappa => &g.comp1,
                    };
                    SweepRow { delta: rec.delta, kind, exponent: e, integral: power_integral(grid, comp, &cells, e) }
                })
                .collect()
        })
        .collect();

    let n = per_level.len();
    let flags = exps
        .iter()
        .enumerate()
        .map(|(k, &(kind, exponent))| {
            let (prev, last) = (per_level[n - 2][k].integral, per_level[n - 1][k].integral);
            let relative_change = (last - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            let trend = if relative_change <= BOUNDED_THRESHOLD && last.is_finite() {
                Trend::Bounded
            } else {
                Trend::Growing
            };
            SweepFlag { kind, exponent, relative_change, trend }
        })
        .collect();
    Ok(SweepTable { interior_margin: margin, rows: per_level.into_iter().flatten().collect(), flags })
}

/// CDF of the standard bump kernel `C exp(−1/(1−y²))` on `(−1, 1)`.
struct BumpCdf {
    table: Vec<f64>,
    norm: f64,
}

const BUMP_INTERVALS: usize = 4000;

impl BumpCdf {
    fn get() -> &'static BumpCdf {
        static CELL: OnceLock<BumpCdf> = OnceLock::new();
        CELL.get_or_init(|| {
            // cumulative Simpson on pairs of subintervals
            let h = 2.0 / BUMP_INTERVALS as f64;
            let mut table = vec![0.0; BUMP_INTERVALS + 1];
            let mut acc = 0.0;
            for k in 0..BUMP_INTERVALS {
                let a = -1.0 + k as f64 * h;
                acc += h / 6.0 * (bump(a) + 4.0 * bump(a + 0.5 * h) + bump(a + h));
                table[k + 1] = acc;
            }
            let norm = acc;
            table.iter_mut().for_each(|v| *v /= norm);
            BumpCdf { table, norm }
        })
    }

    fn density(&self, y: f64) -> f64 {
        bump(y) / self.norm
    }

    fn eval(&self, y: f64) -> f64 {
        if y <= -1.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        let h = 2.0 / BUMP_INTERVALS as f64;
        let pos = (y + 1.0) / h;
        let k = (pos.floor() as usize).min(BUMP_INTERVALS - 1);
        let t = pos - k as f64;
        let (y0, y1) = (self.table[k], self.table[k + 1]);
        let x0 = -1.0 + k as f64 * h;
        let (m0, m1) = (self.density(x0) * h, self.density(x0 + h) * h);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }
}

fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp()
    }
}

/// Nodal values of `w(x + shift·e₂)`, linear in `x₂` between rows and
/// constant beyond `x₂ = 1`.
fn shift_x2(u: &GridFunction, shift: f64) -> GridFunction {
    if shift == 0.0 {
        return u.clone();
    }
    let g = u.grid;
    let mut out = u.clone();
    for j in 0..g.nodes2() {
        let pos = ((g.x2(j) + shift + 1.0) / g.h2()).clamp(0.0, g.n2 as f64);
        let j0 = (pos.floor() as usize).min(g.n2 - 1);
        let t = pos - j0 as f64;
        for i in 0..g.nodes1() {
            out.set(i, j, (1.0 - t) * u.at(i, j0) + t * u.at(i, j0 + 1));
        }
    }
    out
}

/// The candidate with each jump replaced by a bump-mollified step of width
/// `eps` in `x₁`, after shifting by `x2_shift` in `x₂`.
pub fn smoothed_candidate(w: &BVCandidate, eps: f64, x2_shift: f64) -> GridFunction {
    let g = w.grid();
    let cdf = BumpCdf::get();
    let mut out = w.smooth_part.clone();
    for jump in &w.jumps {
        let x_line = g.x1(jump.line);
        for j in jump.j_start..=jump.j_end {
            for i in 0..g.nodes1() {
                let k = g.node(i, j);
                out.values[k] += jump.height * cdf.eval((g.x1(i) - x_line) / eps);
            }
        }
    }
    shift_x2(&out, x2_shift)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxRow {
    pub width: f64,
    /// `∫|w_ε − w|`, trapezoid rule on the nodes.
    pub l1_distance: f64,
    /// `∫√(1+|∇w_ε|²)`.
    pub area: f64,
    /// `∫f₂(∂₂w_ε)`.
    pub f2_energy: f64,
    pub j_value: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxTable {
    pub k_value: f64,
    /// Area functional of `w` itself, jump mass included.
    pub area_target: f64,
    pub rows: Vec<ApproxRow>,
    pub terminal_deviation: f64,
    pub terminal_relative: f64,
}

impl ApproxTable {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["width", "l1_distance", "area", "f2_energy", "j", "deviation"])?;
        for r in &self.rows {
            w.serialize((r.width, r.l1_distance, r.area, r.f2_energy, r.j_value, r.deviation))?;
        }
        finish_csv(w)
    }
}

fn trapezoid_l1(a: &GridFunction, b: &GridFunction) -> f64 {
    let g = a.grid;
    let wt = |k: usize, n: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    let vals: Vec<f64> = (0..g.node_count())
        .map(|k| {
            let (i, j) = (k % g.nodes1(), k / g.nodes1());
            wt(i, g.n1) * wt(j, g.n2) * (a.values[k] - b.values[k]).abs()
        })
        .collect();
    g.cell_area() * pairwise_sum(&vals)
}

fn area_functional(u: &GridFunction) -> f64 {
    let g = gradient(u);
    let vals: Vec<f64> = (0..u.grid.cell_count())
        .into_par_iter()
        .with_min_len(4096)
        .map(|c| (1.0 + g.comp1[c] * g.comp1[c] + g.comp2[c] * g.comp2[c]).sqrt())
        .collect();
    u.grid.cell_area() * pairwise_sum(&vals)
}

/// Smooths `w` at each width and compares `J[w_ε]` with `K[w]`, where
/// `u0` is the boundary data `K` is measured against.
pub fn approximation_experiment(
    w: &BVCandidate,
    d: &DensityPair,
    u0: &GridFunction,
    widths: &[f64],
    x2_shift: f64,
) -> Result<ApproxTable, DiagError> {
    let g = w.grid();
    if widths.is_empty() {
        return Err(DiagError::Config("no widths given".into()));
    }
    for (k, &eps) in widths.iter().enumerate() {
        if !(eps > 0.0) || (k > 0 && !(eps < widths[k - 1])) {
            return Err(DiagError::Config("widths must be positive and strictly decreasing".into()));
        }
    }
    for jump in &w.jumps {
        let x = g.x1(jump.line);
        let room = (x + 1.0).min(1.0 - x);
        if widths[0] >= room {
            return Err(DiagError::Config(format!(
                "width {} exceeds the distance {room} from the jump to the boundary",
                widths[0]
            )));
        }
    }
    if !(x2_shift.abs() < 1.0) {
        return Err(DiagError::Config("x2 shift must be below 1 in magnitude".into()));
    }
    let k_value = eval_k(w, d, u0)?.k_total();
    let nodal = w.nodal_values();
    let jump_mass: f64 = w.jumps.iter().map(|j| j.height.abs() * j.length(g)).sum();
    let area_target = area_functional(&w.smooth_part) + jump_mass;

    let mut rows = Vec::with_capacity(widths.len());
    for &eps in widths {
        let we = smoothed_candidate(w, eps, x2_shift);
        let j = eval_j(&we, d)?;
        rows.push(ApproxRow {
            width: eps,
            l1_distance: trapezoid_l1(&we, &nodal),
            area: area_functional(&we),
            f2_energy: j.j_f2,
            j_value: j.j_total,
            deviation: (j.j_total - k_value).abs(),
        });
    }
    let terminal_deviation = rows.last().expect("widths nonempty").deviation;
    Ok(ApproxTable {
        k_value,
        area_target,
        rows,
        terminal_deviation,
        terminal_relative: terminal_deviation / k_value.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationGap {
    /// `min_w K[w] − J[u_solver]`.
    pub gap: f64,
    pub k_values: Vec<f64>,
    pub j_solver: f64,
}

/// Compares the relaxed energy of each candidate with the continuation
/// solver's final energy. A gap below `−1e-3 (1+|J|)` is a contract error.
pub fn relaxation_gap(candidates: &[BVCandidate], cfg: &SolveConfig) -> Result<RelaxationGap, DiagError> {
    let report = continuation(cfg)?;
    relaxation_gap_against(candidates, cfg, &report)
}

/// [`relaxation_gap`] against an existing solve.
pub fn relaxation_gap_against(
    candidates: &[BVCandidate],
    cfg: &SolveConfig,
    report: &SolveReport,
) -> Result<RelaxationGap, DiagError> {
    if candidates.is_empty() {
        return Err(DiagError::Config("empty candidate list".into()));
    }
    let k_values = candidates
        .iter()
        .map(|w| eval_k(w, &cfg.densities, &cfg.u0).map(|b| b.k_total()))
        .collect::<Result<Vec<_>, _>>()?;
    let j_solver = report.final_record().j_value;
    let gap = k_values.iter().copied().fold(f64::INFINITY, f64::min) - j_solver;
    if gap < -1e-3 * (1.0 + j_solver.abs()) {
        return Err(DiagError::Contract(format!("K undercuts the solver energy by {}", -gap)));
    }
    Ok(RelaxationGap { gap, k_values, j_solver })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::JumpSegment;
    use crate::grid::apply_dirichlet;

    #[test]
    fn bump_cdf_shape() {
        let cdf = BumpCdf::get();
        assert_eq!(cdf.eval(-1.0), 0.0);
        assert_eq!(cdf.eval(1.0), 1.0);
        assert!((cdf.eval(0.0) - 0.5).abs() < 1e-12);
        for k in 0..200 {
            let y = -1.0 + 0.01 * k as f64;
            assert!(cdf.eval(y + 0.01) >= cdf.eval(y));
            assert!((cdf.eval(y) + cdf.eval(-y) - 1.0).abs() < 1e-12);
        }
        // density integrates to one: midpoint oracle
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mass: f64 = (0..n).map(|k| cdf.density(-1.0 + (k as f64 + 0.5) * h) * h).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jump_free_rows_are_unsmoothed() {
        let g = Grid::square(16).unwrap();
        let u = GridFunction::from_fn(g, |x, y| x * x + 0.5 * y);
        let w = BVCandidate::smooth(u.clone());
        let d = DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap();
        let t = approximation_experiment(&w, &d, &u, &[0.3, 0.1, 0.01], 0.0).unwrap();
        let j = eval_j(&u, &d).unwrap().j_total;
        for r in &t.rows {
            assert!((r.j_value - j).abs() <= 1e-6);
            assert!(r.l1_distance <= 1e-6);
        }
    }

    #[test]
    fn vertical_jump_keeps_f2_energy() {
        let g = Grid::new(64, 8).unwrap();
        let smooth = GridFunction::from_fn(g, |_, y| y);
        let w = BVCandidate::new(smooth, vec![JumpSegment { line: 32, j_start: 0, j_end: 8, height: 1.0 }]);
        let u0 = w.nodal_values();
        let d = DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap();
        let t = approximation_experiment(&w, &d, &u0, &[0.5, 0.25, 0.1], 0.0).unwrap();
        for r in &t.rows {
            assert!((r.f2_energy - t.rows[0].f2_energy).abs() < 1e-12);
        }
        assert!(t.rows.windows(2).all(|p| p[1].l1_distance < p[0].l1_distance));
    }

    #[test]
    fn width_beyond_boundary_fails() {
        let g = Grid::new(8, 4).unwrap();
        let w = BVCandidate::new(GridFunction::zeros(g), vec![JumpSegment { line: 6, j_start: 0, j_end: 4, height: 1.0 }]);
        let u0 = w.nodal_values();
        let d = DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap();
        assert!(matches!(approximation_experiment(&w, &d, &u0, &[0.6], 0.0), Err(DiagError::Config(_))));
        assert!(approximation_experiment(&w, &d, &u0, &[0.4], 0.0).is_ok());
    }

    fn affine_cfg(n: usize) -> SolveConfig {
        let g = Grid::square(n).unwrap();
        let d = DensityPair::from_ids("phi_nu:1.5", "power:2").unwrap();
        SolveConfig::new(d, apply_dirichlet(&GridFunction::zeros(g), |x, y| 2.0 * x - y))
    }

    #[test]
    fn sweep_margin_and_levels() {
        let cfg = affine_cfg(8);
        let report = continuation(&cfg).unwrap();
        assert!(matches!(integrability_sweep(&report, &[3.0], &[], 0.6), Err(DiagError::Config(_))));
        assert!(integrability_sweep(&report, &[3.0], &[], 0.0).is_err());
        let t = integrability_sweep(&report, &[3.0, 4.0], &[4.0], 0.1).unwrap();
        assert!(t.all_bounded());
        assert_eq!(t.rows.len(), 6 * 3);
        let mut short = report.clone();
        short.history.truncate(2);
        short.records.truncate(2);
        assert!(integrability_sweep(&short, &[3.0], &[], 0.1).is_err());
    }

    #[test]
    fn relaxation_gap_cases() {
        let cfg = affine_cfg(8);
        assert!(matches!(relaxation_gap(&[], &cfg), Err(DiagError::Config(_))));
        let report = continuation(&cfg).unwrap();
        let lifted = BVCandidate::smooth(report.u_final.clone());
        let r = relaxation_gap_against(&[lifted], &cfg, &report).unwrap();
        assert!(r.gap.abs() < 1e-6, "{r:?}");
    }
}
