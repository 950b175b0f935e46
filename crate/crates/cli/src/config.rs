//! Experiment configuration: the JSON schema and its resolution into
//! library objects.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use splitvar::energy::JumpSegment;
use splitvar::grid::{apply_dirichlet, Grid, GridFunction};
use splitvar::io::{locate_node, read_point_csv};
use splitvar::solve::{default_schedule, SolveConfig};
use splitvar::DensityPair;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    DualReport,
    Sweep,
    ApproxDemo,
    ConjugateTable,
    Predict,
    RelaxGap,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::DualReport => "dual-report",
            Command::Sweep => "sweep",
            Command::ApproxDemo => "approx-demo",
            Command::ConjugateTable => "conjugate-table",
            Command::Predict => "predict",
            Command::RelaxGap => "relax-gap",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol_grad")]
    pub tol_grad: f64,
    /// Divergence tolerance certifying `R[τ]`; defaults to `10 · tol_grad`.
    pub div_tol: Option<f64>,
}

fn default_tol_grad() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_grad: default_tol_grad(), div_tol: None }
    }
}

impl Tolerances {
    pub fn div_tol(&self) -> f64 {
        self.div_tol.unwrap_or(10.0 * self.tol_grad)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    /// Defaults to `p+1, p+2, p+4`.
    pub chis: Option<Vec<f64>>,
    #[serde(default)]
    pub kappas: Vec<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.1
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { chis: None, kappas: Vec::new(), margin: default_margin() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxOptions {
    #[serde(default = "default_height")]
    pub height: f64,
    /// Vertical grid line carrying the jump; defaults to `x₁ = 0`.
    pub line: Option<usize>,
    #[serde(default = "default_widths")]
    pub widths: Vec<f64>,
    #[serde(default)]
    pub x2_shift: f64,
}

fn default_height() -> f64 {
    1.0
}

fn default_widths() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

impl Default for ApproxOptions {
    fn default() -> Self {
        Self { height: default_height(), line: None, widths: default_widths(), x2_shift: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    F1,
    F2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableOptions {
    pub density: Which,
    pub s_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_points() -> usize {
    201
}

fn default_t_max() -> f64 {
    splitvar::densities::DEFAULT_T_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateBase {
    /// The continuation solver's final field.
    Solution,
    /// Blended boundary data.
    Blend,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub base: CandidateBase,
    #[serde(default)]
    pub jumps: Vec<JumpSegment>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub grid: Option<GridSpec>,
    pub f1: Option<String>,
    pub f2: Option<String>,
    pub u0: Option<String>,
    pub delta_schedule: Option<Vec<f64>>,
    pub p_reg: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    pub max_iter: Option<usize>,
    pub output_dir: PathBuf,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub approx: ApproxOptions,
    pub table: Option<TableOptions>,
    #[serde(default)]
    pub candidates: Vec<CandidateSpec>,
}

/// Boundary data plus the largest slope between adjacent boundary nodes.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub u0: GridFunction,
    pub lipschitz: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::validation(format!("config: {e}")))
    }

    fn require<'a, T>(&self, v: &'a Option<T>, field: &str) -> Result<&'a T, Failure> {
        v.as_ref()
            .ok_or_else(|| Failure::validation(format!("command {} needs `{field}`", self.command.name())))
    }

    pub fn grid(&self) -> Result<Grid, Failure> {
        let g = self.require(&self.grid, "grid")?;
        Grid::new(g.n1, g.n2).map_err(|e| Failure::validation(e.to_string()))
    }

    pub fn densities(&self) -> Result<DensityPair, Failure> {
        let f1 = self.require(&self.f1, "f1")?;
        let f2 = self.require(&self.f2, "f2")?;
        let d = DensityPair::from_ids(f1, f2).map_err(|e| Failure::validation(e.to_string()))?;
        d.validate().map_err(|e| Failure::validation(e.to_string()))?;
        Ok(d)
    }

    /// Parses `affine:<a>:<b>` or `custom-table:<path>`; relative paths
    /// resolve against `base_dir`.
    pub fn boundary(&self, grid: Grid, base_dir: &Path) -> Result<BoundaryData, Failure> {
        let spec = self.require(&self.u0, "u0")?;
        let u0 = if let Some(rest) = spec.strip_prefix("affine:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let nums: Vec<f64> = parts.iter().filter_map(|s| s.trim().parse().ok()).collect();
            if parts.len() != 2 || nums.len() != 2 || nums.iter().any(|v| !v.is_finite()) {
                return Err(Failure::validation(format!("u0 `{spec}` is not affine:<a>:<b>")));
            }
            apply_dirichlet(&GridFunction::zeros(grid), |x, y| nums[0] * x + nums[1] * y)
        } else if let Some(path) = spec.strip_prefix("custom-table:") {
            let path = base_dir.join(path);
            boundary_from_table(grid, &path)?
        } else {
            return Err(Failure::validation(format!("unknown u0 `{spec}`")));
        };
        Ok(BoundaryData { lipschitz: boundary_lipschitz(&u0), u0 })
    }

    pub fn solve_config(&self, base_dir: &Path) -> Result<(SolveConfig, BoundaryData), Failure> {
        let grid = self.grid()?;
        let d = self.densities()?;
        let boundary = self.boundary(grid, base_dir)?;
        let mut cfg = SolveConfig::new(d, boundary.u0.clone());
        cfg.delta_schedule = self.delta_schedule.clone().unwrap_or_else(default_schedule);
        if let Some(p) = self.p_reg {
            cfg.p_reg = p;
        }
        cfg.tol_grad = self.tolerances.tol_grad;
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        cfg.seed = self.seed;
        cfg.validate().map_err(|e| Failure::validation(e.to_string()))?;
        if let Some(t) = self.tolerances.div_tol {
            if !(t > 0.0) {
                return Err(Failure::validation("div_tol must be positive"));
            }
        }
        Ok((cfg, boundary))
    }

    pub fn approx_jump(&self, grid: Grid) -> JumpSegment {
        JumpSegment {
            line: self.approx.line.unwrap_or(grid.n1 / 2),
            j_start: 0,
            j_end: grid.n2,
            height: self.approx.height,
        }
    }
}

/// Boundary values from `x1,x2,value` rows; every boundary node is required.
fn boundary_from_table(grid: Grid, path: &Path) -> Result<GridFunction, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let rows = read_point_csv(file).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let mut u = GridFunction::zeros(grid);
    let mut seen = vec![false; grid.node_count()];
    for (x1, x2, v) in rows {
        let k = locate_node(grid, x1, x2).map_err(|e| Failure::validation(e.to_string()))?;
        let (i, j) = (k % grid.nodes1(), k / grid.nodes1());
        if !grid.is_boundary(i, j) {
            return Err(Failure::validation(format!("({x1}, {x2}) is not a boundary node")));
        }
        if !v.is_finite() {
            return Err(Failure::validation(format!("non-finite boundary value at ({x1}, {x2})")));
        }
        u.values[k] = v;
        seen[k] = true;
    }
    for j in 0..grid.nodes2() {
        for i in 0..grid.nodes1() {
            if grid.is_boundary(i, j) && !seen[grid.node(i, j)] {
                return Err(Failure::validation(format!(
                    "boundary node ({}, {}) missing from table",
                    grid.x1(i),
                    grid.x2(j)
                )));
            }
        }
    }
    for (k, m) in u.boundary_mask.iter_mut().enumerate() {
        *m = grid.is_boundary(k % grid.nodes1(), k / grid.nodes1());
    }
    Ok(u)
}

/// Largest `|Δu|/h` between neighboring boundary nodes.
pub fn boundary_lipschitz(u: &GridFunction) -> f64 {
    let g = u.grid;
    let mut worst = 0.0_f64;
    for j in [0, g.n2] {
        for i in 0..g.n1 {
            worst = worst.max((u.at(i + 1, j) - u.at(i, j)).abs() / g.h1());
        }
    }
    for i in [0, g.n1] {
        for j in 0..g.n2 {
            worst = worst.max((u.at(i, j + 1) - u.at(i, j)).abs() / g.h2());
        }
    }
    worst
}
