//! N-functions, the split densities `f = f₁ + f₂`, their conjugates and
//! recession functions, and the integrability exponent predictor.
//!
//! Density families are addressable by string id:
//!
//! | id | map | role |
//! |----|-----|------|
//! | `phi_nu:<nu>` | `Φ_ν(|t|)`, `1 < ν < 2` | `f₁` |
//! | `hencky:<k>:<nu>` | Hencky density | `f₁` |
//! | `power:<p>` | `|t|ᵖ` | `f₂` |
//! | `nfun_tlog` | `|t| ln(1+|t|)` | `f₂` |

mod conjugate;
mod predict;
mod scalar;
mod spec;

use thiserror::Error;

pub use conjugate::{
    check_condition_dual4, conjugate_scalar, recession, young_residual, ConjugateTable, ConjugateValue, Direction,
    Dual4Fit, DEFAULT_T_MAX,
};
pub use predict::{
    condition_gamma, condition_tau_gap, predict_integrability, IntegrabilityCase, IntegrabilityPrediction,
    SCAN_POINTS,
};
pub use scalar::{conjugate_by_stationarity, ConvexScalar, Hencky, PhiNu, Power, TLog};
pub use spec::{
    make_hencky, make_phi_nu, parse_density1, parse_density2, sample_grid, Density1Spec, Density2Spec, DensityPair,
    NFunctionSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain { name: &'static str, value: f64, expected: &'static str },
    #[error("conjugate argument {s} outside the effective domain (slope bound {bound})")]
    ConjugateRange { s: f64, bound: f64 },
    #[error("search objective is not concave near t = {t}; the input map is not convex")]
    NonConcave { t: f64 },
    #[error("conjugate maximizer reached the search boundary t_max = {t_max}")]
    BoundaryMaximizer { t_max: f64 },
    #[error("recession limit does not exist (secant slopes {estimates:?})")]
    NonLinearGrowth { estimates: Vec<f64> },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unknown density id `{0}`")]
    UnknownId(String),
}
