//! One runner per command. Each returns the `report.json` payload; tables
//! and fields are written into the output directory as side files.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use splitvar::densities::{predict_integrability, ConjugateTable, DensityError};
use splitvar::diagnostics::{approximation_experiment, integrability_sweep, relaxation_gap_against, DiagError, Trend};
use splitvar::duality::{boundary_interpolant, eval_r, level_report, stress, DualError, RValue};
use splitvar::energy::{BVCandidate, EnergyError};
use splitvar::grid::{apply_dirichlet_from, GridFunction};
use splitvar::io::{save_vsgf, write_grid_csv, IoError};
use splitvar::solve::{continuation, SolveError, SolveReport};

use crate::config::{CandidateBase, CandidateSpec, Command, ExperimentConfig, Which};
use crate::Failure;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub base_dir: &'a Path,
    pub out: &'a Path,
    pub strict: bool,
    pub warnings: Vec<String>,
}

impl Context<'_> {
    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        fs::write(self.out.join(name), text).map_err(|e| Failure::validation(format!("{name}: {e}")))
    }

    fn write_field(&self, stem: &str, u: &GridFunction) -> Result<(), Failure> {
        save_vsgf(u, &self.out.join(format!("{stem}.vsgf"))).map_err(io_failure)?;
        let mut bytes = Vec::new();
        write_grid_csv(u, &mut bytes).map_err(io_failure)?;
        fs::write(self.out.join(format!("{stem}.csv")), bytes).map_err(|e| Failure::validation(e.to_string()))
    }
}

fn io_failure(e: IoError) -> Failure {
    Failure::validation(e.to_string())
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::validation(e.to_string())
}

pub fn solve_failure(e: SolveError) -> Failure {
    let delta = e.delta();
    let f = match e {
        SolveError::Config(_) => Failure::validation(e.to_string()),
        SolveError::Contract(_) => Failure::contract(e.to_string()),
        _ => Failure::solver(e.to_string()),
    };
    f.with_delta(delta)
}

fn diag_failure(e: DiagError) -> Failure {
    match e {
        DiagError::Config(_) => Failure::validation(e.to_string()),
        DiagError::Contract(_) => Failure::contract(e.to_string()),
        DiagError::Solve(inner) => solve_failure(inner),
        DiagError::Energy(EnergyError::Candidate(_)) | DiagError::Energy(EnergyError::Grid(_)) => {
            Failure::validation(e.to_string())
        }
        DiagError::Energy(_) => Failure::solver(e.to_string()),
    }
}

fn dual_failure(e: DualError) -> Failure {
    Failure::solver(e.to_string())
}

fn density_failure(e: DensityError) -> Failure {
    match e {
        DensityError::BoundaryMaximizer { .. } => Failure::contract(e.to_string()),
        _ => Failure::validation(e.to_string()),
    }
}

pub fn run(ctx: &mut Context) -> Result<Value, Failure> {
    match ctx.cfg.command {
        Command::Solve => solve(ctx),
        Command::DualReport => dual_report(ctx),
        Command::Sweep => sweep(ctx),
        Command::ApproxDemo => approx_demo(ctx),
        Command::ConjugateTable => conjugate_table(ctx),
        Command::Predict => predict(ctx),
        Command::RelaxGap => relax_gap(ctx),
    }
}

fn run_continuation(ctx: &mut Context) -> Result<(splitvar::solve::SolveConfig, SolveReport, f64), Failure> {
    let (cfg, boundary) = ctx.cfg.solve_config(ctx.base_dir)?;
    let report = continuation(&cfg).map_err(solve_failure)?;
    if !report.delta_term_ratio_ok {
        ctx.warn("delta term decreased more slowly than 1.1 times the delta ratio".into());
    }
    ctx.write("records.csv", &report.records_csv().map_err(csv_failure)?)?;
    ctx.write_field("u_final", &report.u_final)?;
    Ok((cfg, report, boundary.lipschitz))
}

fn solve(ctx: &mut Context) -> Result<Value, Failure> {
    let (_, report, lipschitz) = run_continuation(ctx)?;
    Ok(json!({
        "records": report.records,
        "final": report.final_record(),
        "delta_term_ratio_ok": report.delta_term_ratio_ok,
        "u0_lipschitz": lipschitz,
        "files": ["records.csv", "u_final.vsgf", "u_final.csv"],
    }))
}

fn dual_report(ctx: &mut Context) -> Result<Value, Failure> {
    let (cfg, report, lipschitz) = run_continuation(ctx)?;
    let div_tol = ctx.cfg.tolerances.div_tol();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["delta", "r", "gap_abs", "gap_rel", "div_residual", "extremality", "delta_stress_norm"])
        .map_err(csv_failure)?;
    let mut levels = Vec::new();
    let mut violations = Vec::new();
    for (u, rec) in report.history.iter().zip(&report.records) {
        let r = level_report(u, &cfg.densities, rec.delta, cfg.p_reg).map_err(dual_failure)?;
        w.serialize((rec.delta, r.r_value, r.gap_absolute, r.gap_relative, r.div_residual_max, r.extremality_max_violation, r.delta_stress_norm))
            .map_err(csv_failure)?;
        let blend = boundary_interpolant(u);
        let bar = RValue { value: r.r_value, certified: true, residual_max: r.div_residual_max }.error_bar(u, &blend);
        if r.div_residual_max <= div_tol {
            if r.gap_absolute < -(1e-9 * (1.0 + rec.j_value.abs()) + bar) {
                violations.push(format!("negative gap {} at delta = {}", r.gap_absolute, rec.delta));
            }
        } else {
            ctx.warn(format!("dual field at delta = {} is not certified (residual {:.3e})", rec.delta, r.div_residual_max));
        }
        levels.push(r);
    }
    let bytes = w.into_inner().map_err(|e| Failure::validation(e.to_string()))?;
    ctx.write("dual.csv", &String::from_utf8_lossy(&bytes))?;

    let last = report.final_record();
    let sigma = stress(&report.u_final, &cfg.densities, last.delta, cfg.p_reg).sigma;
    let certification = eval_r(&sigma, &cfg.densities, &boundary_interpolant(&report.u_final), div_tol).ok();
    let payload = json!({
        "levels": levels,
        "final": levels.last(),
        "final_stress_certified": certification.map(|r| r.certified),
        "div_tol": div_tol,
        "u0_lipschitz": lipschitz,
        "files": ["records.csv", "dual.csv", "u_final.vsgf", "u_final.csv"],
    });
    if let Some(first) = violations.first() {
        return Err(Failure::contract(format!("weak duality violated: {first}")).with_payload(payload));
    }
    Ok(payload)
}

fn sweep(ctx: &mut Context) -> Result<Value, Failure> {
    let (cfg, report, _) = run_continuation(ctx)?;
    let p = cfg.densities.f2.p;
    let opts = &ctx.cfg.sweep;
    let chis = opts.chis.clone().unwrap_or_else(|| vec![p + 1.0, p + 2.0, p + 4.0]);
    let table = integrability_sweep(&report, &chis, &opts.kappas, opts.margin).map_err(diag_failure)?;
    ctx.write("sweep.csv", &table.to_csv().map_err(csv_failure)?)?;
    for f in table.flags.iter().filter(|f| f.trend == Trend::Growing) {
        ctx.warn(format!("{:?} exponent {} flagged GROWING", f.kind, f.exponent));
    }
    Ok(json!({
        "interior_margin": table.interior_margin,
        "flags": table.flags,
        "all_bounded": table.all_bounded(),
        "gamma": cfg.densities.f1.gamma,
        "mu": cfg.densities.f1.mu,
        "files": ["records.csv", "sweep.csv", "u_final.vsgf", "u_final.csv"],
    }))
}

fn approx_demo(ctx: &mut Context) -> Result<Value, Failure> {
    let grid = ctx.cfg.grid()?;
    let d = ctx.cfg.densities()?;
    let smooth = if ctx.cfg.u0.is_some() {
        let mut b = ctx.cfg.boundary(grid, ctx.base_dir)?.u0;
        b.fill_interior_from_boundary();
        b
    } else {
        GridFunction::zeros(grid)
    };
    let w = BVCandidate::new(smooth, vec![ctx.cfg.approx_jump(grid)]);
    let reference = w.nodal_values();
    let opts = &ctx.cfg.approx;
    let table = approximation_experiment(&w, &d, &reference, &opts.widths, opts.x2_shift).map_err(diag_failure)?;
    ctx.write("approx.csv", &table.to_csv().map_err(csv_failure)?)?;
    Ok(json!({
        "k_value": table.k_value,
        "area_target": table.area_target,
        "terminal_deviation": table.terminal_deviation,
        "terminal_relative": table.terminal_relative,
        "rows": table.rows,
        "files": ["approx.csv"],
    }))
}

fn conjugate_table(ctx: &mut Context) -> Result<Value, Failure> {
    let d = ctx.cfg.densities()?;
    let opts = ctx
        .cfg
        .table
        .as_ref()
        .ok_or_else(|| Failure::validation("command conjugate-table needs `table`"))?;
    let (eval, closed): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> Result<f64, DensityError>>) = match opts.density {
        Which::F1 => (Box::new(|t| d.f1.eval(t)), Box::new(|s| d.f1.conjugate(s))),
        Which::F2 => (Box::new(|t| d.f2.eval(t)), Box::new(|s| d.f2.conjugate(s))),
    };
    let table = ConjugateTable::build(&*eval, opts.s_max, opts.points, opts.t_max, ctx.strict).map_err(density_failure)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "conjugate", "closed_form", "at_boundary"]).map_err(csv_failure)?;
    let mut worst = 0.0_f64;
    for ((s, v), flag) in table.nodes().iter().zip(table.values()).zip(table.boundary_flags()) {
        let exact = closed(*s).ok();
        if let (Some(e), false) = (exact, *flag) {
            worst = worst.max((v - e).abs() / (1.0 + e.abs()));
        }
        let exact_text = exact.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([s.to_string(), v.to_string(), exact_text, flag.to_string()]).map_err(csv_failure)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::validation(e.to_string()))?;
    ctx.write("conjugate_table.csv", &String::from_utf8_lossy(&bytes))?;
    let boundary_hits = table.boundary_flags().iter().filter(|f| **f).count();
    if boundary_hits > 0 {
        ctx.warn(format!("{boundary_hits} table nodes hit t_max; the slope may exceed the growth of the density"));
    }
    Ok(json!({
        "density": match opts.density { Which::F1 => "f1", Which::F2 => "f2" },
        "points": table.nodes().len(),
        "s_max": opts.s_max,
        "max_relative_error_vs_closed_form": worst,
        "boundary_hits": boundary_hits,
        "files": ["conjugate_table.csv"],
    }))
}

fn predict(ctx: &mut Context) -> Result<Value, Failure> {
    let p = ctx.cfg.p.ok_or_else(|| Failure::validation("command predict needs `p`"))?;
    let gamma = ctx.cfg.gamma.ok_or_else(|| Failure::validation("command predict needs `gamma`"))?;
    let pred = predict_integrability(p, gamma, ctx.cfg.mu).map_err(density_failure)?;
    serde_json::to_value(pred).map_err(|e| Failure::validation(e.to_string()))
}

fn build_candidate(spec: &CandidateSpec, solution: &GridFunction, u0: &GridFunction) -> Result<BVCandidate, Failure> {
    let base = match spec.base {
        CandidateBase::Solution => solution.clone(),
        CandidateBase::Blend => {
            let mut b = apply_dirichlet_from(&GridFunction::zeros(u0.grid), u0).map_err(|e| Failure::validation(e.to_string()))?;
            b.fill_interior_from_boundary();
            b
        }
    };
    Ok(BVCandidate::new(base, spec.jumps.clone()))
}

fn relax_gap(ctx: &mut Context) -> Result<Value, Failure> {
    let (cfg, report, _) = run_continuation(ctx)?;
    let specs = if ctx.cfg.candidates.is_empty() {
        vec![
            CandidateSpec { base: CandidateBase::Solution, jumps: Vec::new() },
            CandidateSpec { base: CandidateBase::Blend, jumps: Vec::new() },
        ]
    } else {
        ctx.cfg.candidates.clone()
    };
    let candidates = specs
        .iter()
        .map(|s| build_candidate(s, &report.u_final, &cfg.u0))
        .collect::<Result<Vec<_>, _>>()?;
    let gap = relaxation_gap_against(&candidates, &cfg, &report).map_err(diag_failure)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["candidate", "k_value", "gap"]).map_err(csv_failure)?;
    for (k, v) in gap.k_values.iter().enumerate() {
        w.serialize((k, v, v - gap.j_solver)).map_err(csv_failure)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::validation(e.to_string()))?;
    ctx.write("relax.csv", &String::from_utf8_lossy(&bytes))?;
    Ok(json!({
        "gap": gap.gap,
        "j_solver": gap.j_solver,
        "k_values": gap.k_values,
        "files": ["records.csv", "relax.csv", "u_final.vsgf", "u_final.csv"],
    }))
}
