//! Numerical toolkit for splitting-type variational problems
//! `J[u] = ∫_Ω f₁(∂₁u) + f₂(∂₂u)` on `Ω = (−1, 1)²` with Dirichlet data,
//! where `f₁` has linear growth and `f₂` is an N-function.
//!
//! Reductions go through [`sum::pairwise_sum`] over values collected in
//! index order, so results do not depend on the rayon thread count.

pub mod densities;
pub mod diagnostics;
pub mod duality;
pub mod energy;
pub mod grid;
pub mod io;
pub mod solve;
pub mod sum;

pub use densities::{DensityError, DensityPair};
pub use grid::{CellField2, Grid, GridFunction};
