use std::fmt;
use std::sync::Arc;

use super::conjugate::{recession, Direction};
use super::scalar::{conjugate_by_stationarity, ConvexScalar, Hencky, PhiNu, Power, TLog};
use super::DensityError;

/// Sample grid used for fitting constants and checking invariants: `0`
/// followed by 199 log-spaced points on `[1e-4, 1e4]`.
pub fn sample_grid() -> Vec<f64> {
    let mut t = Vec::with_capacity(200);
    t.push(0.0);
    for k in 0..199 {
        let e = -4.0 + 8.0 * k as f64 / 198.0;
        t.push(10f64.powf(e));
    }
    t
}

/// A scalar N-function `A` with its Δ₂ data.
#[derive(Clone)]
pub struct NFunctionSpec {
    func: Arc<dyn ConvexScalar>,
    pub delta2_k: f64,
    pub delta2_t0: f64,
    pub growth_p: f64,
    closed_conjugate: bool,
}

impl fmt::Debug for NFunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NFunctionSpec")
            .field("id", &self.func.id())
            .field("delta2_k", &self.delta2_k)
            .field("delta2_t0", &self.delta2_t0)
            .field("growth_p", &self.growth_p)
            .finish()
    }
}

impl NFunctionSpec {
    pub fn new(func: Arc<dyn ConvexScalar>, delta2_k: f64, delta2_t0: f64, growth_p: f64) -> Self {
        Self { func, delta2_k, delta2_t0, growth_p, closed_conjugate: true }
    }

    /// `A(t) = c tᵖ`.
    pub fn power(coeff: f64, p: f64) -> Result<Self, DensityError> {
        let func = Power::new(coeff, p)?;
        Ok(Self::new(Arc::new(func), 2f64.powf(p), 1.0, p))
    }

    /// `A(t) = tᵖ/p`.
    pub fn power_over_p(p: f64) -> Result<Self, DensityError> {
        Self::power(1.0 / p, p)
    }

    /// `A(t) = t ln(1 + t)`.
    pub fn t_log() -> Self {
        // A(2t)/A(t) = 2 ln(1+2t)/ln(1+t) decreases from 2 ln3/ln2 ≈ 3.17 at t = 1
        Self::new(Arc::new(TLog), 3.2, 1.0, 1.0)
    }

    /// Same function, but conjugates are always computed numerically.
    pub fn with_numeric_conjugate(mut self) -> Self {
        self.closed_conjugate = false;
        self
    }

    pub fn id(&self) -> String {
        self.func.id()
    }

    pub fn scalar(&self) -> &Arc<dyn ConvexScalar> {
        &self.func
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.func.value(t.abs())
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.func.deriv(t.abs())
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        self.func.second_deriv(t.abs())
    }

    /// `A*(s) = max_{t ≥ 0} { s t − A(t) }`, evaluated at `|s|`.
    pub fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        if self.closed_conjugate {
            self.func.conjugate(s.abs())
        } else {
            conjugate_by_stationarity(self.func.as_ref(), s.abs())
        }
    }

    /// Checks the N-function axioms and the Δ₂ bound on the sample grid.
    pub fn validate(&self) -> Result<(), DensityError> {
        let a0 = self.eval(0.0);
        if a0 != 0.0 {
            return Err(DensityError::Invariant(format!("A(0) = {a0} != 0")));
        }
        let grid = sample_grid();
        let vals: Vec<f64> = grid.iter().map(|&t| self.eval(t)).collect();
        for k in 1..grid.len() {
            if !(vals[k] > vals[k - 1]) {
                return Err(DensityError::Invariant(format!("A not strictly increasing near t = {}", grid[k])));
            }
        }
        for k in 1..grid.len() - 1 {
            let left = (vals[k] - vals[k - 1]) / (grid[k] - grid[k - 1]);
            let right = (vals[k + 1] - vals[k]) / (grid[k + 1] - grid[k]);
            if right - left < -1e-10 * (1.0 + left.abs()) {
                return Err(DensityError::Invariant(format!("A not convex near t = {}", grid[k])));
            }
        }
        if self.eval(1e-6) / 1e-6 > 1e-2 {
            return Err(DensityError::Invariant("A(t)/t does not vanish at 0".into()));
        }
        if self.eval(1e6) / 1e6 < 10.0 {
            return Err(DensityError::Invariant("A(t)/t does not blow up at infinity".into()));
        }
        for &t in grid.iter().filter(|&&t| t >= self.delta2_t0) {
            if self.eval(2.0 * t) > self.delta2_k * self.eval(t) * (1.0 + 1e-12) {
                return Err(DensityError::Invariant(format!("Δ₂ bound fails at t = {t}")));
            }
        }
        Ok(())
    }
}

/// The linear-growth part `f₁` with its growth, ellipticity and recession data.
#[derive(Clone)]
pub struct Density1Spec {
    func: Arc<dyn ConvexScalar>,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// Lower ellipticity exponent; `+∞` when `f₁''` is not bounded below by
    /// any power of `1+|t|` (e.g. the Hencky density).
    pub mu: f64,
    pub gamma: f64,
    /// Fitted `c₁` with `c₁(1+|t|)^{−μ} ≤ f₁''(t)`.
    pub c_low: f64,
    /// Fitted `c̄₁` with `f₁''(t) ≤ c̄₁(1+|t|)^{γ}`.
    pub c_high: f64,
    pub recession_plus: f64,
    pub recession_minus: f64,
}

impl fmt::Debug for Density1Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density1Spec")
            .field("id", &self.func.id())
            .field("a", &[self.a1, self.a2, self.a3, self.a4])
            .field("mu", &self.mu)
            .field("gamma", &self.gamma)
            .field("c_low", &self.c_low)
            .field("c_high", &self.c_high)
            .field("recession", &(self.recession_plus, self.recession_minus))
            .finish()
    }
}

impl Density1Spec {
    /// Wraps a linear-growth map, estimating the recession values
    /// numerically and fitting the remaining constants.
    pub fn from_scalar(func: Arc<dyn ConvexScalar>, mu: f64, gamma: f64) -> Result<Self, DensityError> {
        let plus = recession(|t| func.value(t), Direction::Plus)?;
        let minus = recession(|t| func.value(t), Direction::Minus)?;
        Ok(Self::with_recession(func, mu, gamma, plus, minus))
    }

    fn with_recession(func: Arc<dyn ConvexScalar>, mu: f64, gamma: f64, plus: f64, minus: f64) -> Self {
        let grid = sample_grid();
        let slope_hi = plus.max(minus);
        let slope_lo = 0.5 * plus.min(minus);
        let mut a2 = 0.0_f64;
        let mut a4 = 0.0_f64;
        let mut c_low = f64::INFINITY;
        let mut c_high = 0.0_f64;
        for &t in &grid {
            for x in [t, -t] {
                let v = func.value(x);
                a2 = a2.max(slope_lo * t - v);
                a4 = a4.max(v - slope_hi * t);
                let d2 = func.second_deriv(x);
                if mu.is_finite() {
                    c_low = c_low.min(d2 * (1.0 + t).powf(mu));
                }
                c_high = c_high.max(d2 * (1.0 + t).powf(-gamma));
            }
        }
        if !mu.is_finite() {
            c_low = 0.0;
        }
        Self {
            func,
            a1: slope_lo,
            a2,
            a3: slope_hi,
            a4,
            mu,
            gamma,
            c_low,
            c_high,
            recession_plus: plus,
            recession_minus: minus,
        }
    }

    pub fn id(&self) -> String {
        self.func.id()
    }

    pub fn scalar(&self) -> &Arc<dyn ConvexScalar> {
        &self.func
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.func.value(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.func.deriv(t)
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        self.func.second_deriv(t)
    }

    /// `f₁*(s)`; a range error outside `(−f₁^∞(−1), f₁^∞(1))`.
    pub fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        self.func.conjugate(s)
    }

    /// Positively 1-homogeneous recession function `f₁^∞(s)`.
    pub fn recession_at(&self, s: f64) -> f64 {
        if s >= 0.0 {
            self.recession_plus * s
        } else {
            self.recession_minus * (-s)
        }
    }

    /// Whether the map is elliptic in the sense `f₁'' ≥ c(1+|t|)^{−μ}`.
    pub fn is_elliptic(&self) -> bool {
        self.mu.is_finite() && self.c_low > 0.0
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let tol = 1e-10;
        let f0 = self.eval(0.0);
        let rmax = self.recession_plus.max(self.recession_minus);
        for &t in &sample_grid() {
            for x in [t, -t] {
                let v = self.eval(x);
                if v < self.a1 * t - self.a2 - tol * (1.0 + v.abs()) || v > self.a3 * t + self.a4 + tol * (1.0 + v.abs()) {
                    return Err(DensityError::Invariant(format!("linear growth bounds fail at t = {x}")));
                }
                if v > f0 + rmax * t + tol * (1.0 + v.abs()) {
                    return Err(DensityError::Invariant(format!("recession bound fails at t = {x}")));
                }
                let d2 = self.second_deriv(x);
                if self.mu.is_finite() && d2 < self.c_low * (1.0 + t).powf(-self.mu) * (1.0 - tol) {
                    return Err(DensityError::Invariant(format!("lower ellipticity fails at t = {x}")));
                }
                if d2 > self.c_high * (1.0 + t).powf(self.gamma) * (1.0 + tol) {
                    return Err(DensityError::Invariant(format!("upper ellipticity fails at t = {x}")));
                }
            }
        }
        if self.mu.is_finite() && !(self.c_low > 0.0) {
            return Err(DensityError::Invariant("no positive ellipticity constant".into()));
        }
        if !(self.recession_plus.is_finite() && self.recession_minus.is_finite()) {
            return Err(DensityError::Invariant("recession values not finite".into()));
        }
        Ok(())
    }
}

/// `Φ_ν` as a linear-growth density: `μ = ν`, `γ = 0`, recession 1.
pub fn make_phi_nu(nu: f64) -> Result<Density1Spec, DensityError> {
    let phi = PhiNu::new(nu)?;
    Ok(Density1Spec::with_recession(Arc::new(phi), nu, 0.0, 1.0, 1.0))
}

/// The Hencky density. It has linear growth and is only usable as `f₁`.
pub fn make_hencky(k: f64, nu: f64) -> Result<Density1Spec, DensityError> {
    let h = Hencky::new(k, nu)?;
    let slope = h.slope_limit();
    Ok(Density1Spec::with_recession(Arc::new(h), f64::INFINITY, 0.0, slope, slope))
}

/// The superlinear part `f₂`.
#[derive(Clone)]
pub struct Density2Spec {
    func: Arc<dyn ConvexScalar>,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub p: f64,
    pub mu_hat: f64,
    pub c3: f64,
    /// Fitted `c₂` with `c₂(1+|t|)^{p−2} ≤ f₂''(t)`; zero when no such bound holds.
    pub c_low: f64,
    pub c_high: f64,
    pub nfunction: Option<NFunctionSpec>,
    regularization_exponent: f64,
}

impl fmt::Debug for Density2Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density2Spec")
            .field("id", &self.func.id())
            .field("b", &[self.b1, self.b2, self.b3, self.b4])
            .field("p", &self.p)
            .field("mu_hat", &self.mu_hat)
            .field("c3", &self.c3)
            .field("c_low", &self.c_low)
            .field("c_high", &self.c_high)
            .finish()
    }
}

impl Density2Spec {
    /// `f₂(t) = A(|t|)`.
    pub fn from_nfunction(a: NFunctionSpec) -> Result<Self, DensityError> {
        let func = a.scalar().clone();
        if func.slope_limit().is_finite() {
            return Err(DensityError::Invariant(format!("{} has linear growth and cannot serve as f2", func.id())));
        }
        let p = a.growth_p;
        let grid = sample_grid();
        let mut c_low = f64::INFINITY;
        let mut c_high = 0.0_f64;
        for &t in &grid {
            let d2 = func.second_deriv(t);
            let w = (1.0 + t).powf(2.0 - p);
            if d2.is_finite() {
                c_low = c_low.min(d2 * w);
                c_high = c_high.max(d2 * w);
            } else {
                c_high = f64::INFINITY;
            }
        }
        let pairs: Vec<f64> = grid.iter().step_by(5).flat_map(|&t| [t, -t]).collect();
        let mut c3 = 1.0_f64;
        for &t in &pairs {
            for &u in &pairs {
                let den = func.value(t) + func.value(u);
                if den > 0.0 {
                    c3 = c3.max(func.value(t + u) / den);
                }
            }
        }
        let regularization_exponent = if a.id().starts_with("power") { p.max(2.0) } else { 2.0 };
        Ok(Self {
            func,
            b1: 1.0,
            b2: 0.0,
            b3: 1.0,
            b4: 0.0,
            p,
            mu_hat: 2.0 - p,
            c3,
            c_low,
            c_high,
            nfunction: Some(a),
            regularization_exponent,
        })
    }

    pub fn id(&self) -> String {
        self.func.id()
    }

    pub fn scalar(&self) -> &Arc<dyn ConvexScalar> {
        &self.func
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.func.value(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.func.deriv(t)
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        self.func.second_deriv(t)
    }

    /// `A*(|s|)`.
    pub fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        match &self.nfunction {
            Some(a) => a.conjugate(s.abs()),
            None => self.func.conjugate(s),
        }
    }

    /// Exponent of the `δ(1+|ξ₁|²)^{p/2}` regularization: the growth
    /// exponent for power densities, 2 for general N-functions.
    pub fn regularization_exponent(&self) -> f64 {
        self.regularization_exponent
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let tol = 1e-10;
        if let Some(a) = &self.nfunction {
            a.validate()?;
            for &t in &sample_grid() {
                if self.eval(t) < self.b1 * a.eval(t) - self.b2 - tol * (1.0 + self.eval(t)) {
                    return Err(DensityError::Invariant(format!("lower growth bound fails at t = {t}")));
                }
            }
        }
        let pairs: Vec<f64> = sample_grid().iter().step_by(5).flat_map(|&t| [t, -t]).collect();
        for &t in &pairs {
            for &u in &pairs {
                let lhs = self.eval(t + u);
                let rhs = self.c3 * (self.eval(t) + self.eval(u));
                if lhs > rhs * (1.0 + tol) + tol {
                    return Err(DensityError::Invariant(format!("triangle condition fails at ({t}, {u})")));
                }
            }
        }
        Ok(())
    }
}

/// `f(ξ) = f₁(ξ₁) + f₂(ξ₂)`.
#[derive(Clone, Debug)]
pub struct DensityPair {
    pub f1: Density1Spec,
    pub f2: Density2Spec,
}

impl DensityPair {
    pub fn new(f1: Density1Spec, f2: Density2Spec) -> Self {
        Self { f1, f2 }
    }

    pub fn from_ids(f1: &str, f2: &str) -> Result<Self, DensityError> {
        Ok(Self::new(parse_density1(f1)?, parse_density2(f2)?))
    }

    pub fn eval(&self, xi1: f64, xi2: f64) -> f64 {
        self.f1.eval(xi1) + self.f2.eval(xi2)
    }

    pub fn gradient(&self, xi1: f64, xi2: f64) -> (f64, f64) {
        (self.f1.deriv(xi1), self.f2.deriv(xi2))
    }

    /// `f*(τ) = f₁*(τ₁) + A*(|τ₂|)`.
    pub fn conjugate(&self, tau1: f64, tau2: f64) -> Result<f64, DensityError> {
        Ok(self.f1.conjugate(tau1)? + self.f2.conjugate(tau2)?)
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        self.f1.validate()?;
        self.f2.validate()
    }
}

fn parse_num(id: &str, s: &str) -> Result<f64, DensityError> {
    s.trim().parse::<f64>().map_err(|_| DensityError::UnknownId(id.to_string()))
}

/// Parses `phi_nu:<nu>` or `hencky:<k>:<nu>`.
pub fn parse_density1(id: &str) -> Result<Density1Spec, DensityError> {
    let parts: Vec<&str> = id.split(':').collect();
    match parts.as_slice() {
        ["phi_nu", nu] => make_phi_nu(parse_num(id, nu)?),
        ["hencky", k, nu] => make_hencky(parse_num(id, k)?, parse_num(id, nu)?),
        ["power", _] | ["nfun_tlog"] => Err(DensityError::Invariant(format!("{id} is superlinear and cannot serve as f1"))),
        _ => Err(DensityError::UnknownId(id.to_string())),
    }
}

/// Parses `power:<p>` (`|t|ᵖ`) or `nfun_tlog`.
pub fn parse_density2(id: &str) -> Result<Density2Spec, DensityError> {
    let parts: Vec<&str> = id.split(':').collect();
    match parts.as_slice() {
        ["power", p] => Density2Spec::from_nfunction(NFunctionSpec::power(1.0, parse_num(id, p)?)?),
        ["nfun_tlog"] => Density2Spec::from_nfunction(NFunctionSpec::t_log()),
        ["phi_nu", _] | ["hencky", _, _] => {
            Err(DensityError::Invariant(format!("{id} has linear growth and cannot serve as f2")))
        }
        _ => Err(DensityError::UnknownId(id.to_string())),
    }
}
