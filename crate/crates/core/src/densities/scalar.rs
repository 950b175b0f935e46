//! Even convex scalar maps used as building blocks for the split densities.

use std::fmt;

use super::DensityError;

/// An even, convex, C¹ scalar map `g: ℝ → ℝ`.
///
/// Implementations provide closed forms for value and derivatives. The
/// Legendre conjugate defaults to a stationarity solve (`g'(t) = |s|`) which
/// is exact up to root-finding precision; families with a closed-form
/// conjugate override it.
pub trait ConvexScalar: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64;
    fn deriv(&self, t: f64) -> f64;
    fn second_deriv(&self, t: f64) -> f64;

    /// `sup_t g'(t)`; `+∞` for superlinear maps.
    fn slope_limit(&self) -> f64 {
        f64::INFINITY
    }

    /// `g*(s) = sup_t { s t − g(t) }`.
    fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        conjugate_by_stationarity(self, s)
    }

    /// Short identifier, e.g. `phi_nu:1.5`.
    fn id(&self) -> String;
}

/// Conjugate of an even convex map by solving `g'(t) = |s|` with a
/// safeguarded Newton iteration.
pub fn conjugate_by_stationarity<G: ConvexScalar + ?Sized>(g: &G, s: f64) -> Result<f64, DensityError> {
    let a = s.abs();
    if !a.is_finite() {
        return Err(DensityError::ConjugateRange { s, bound: g.slope_limit() });
    }
    if a <= g.deriv(0.0) {
        return Ok(-g.value(0.0));
    }
    let bound = g.slope_limit();
    if a >= bound {
        return Err(DensityError::ConjugateRange { s, bound });
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while g.deriv(hi) < a {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(DensityError::ConjugateRange { s, bound });
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..400 {
        let r = g.deriv(t) - a;
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let curv = g.second_deriv(t);
        let newton = t - r / curv;
        t = if curv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(a * t - g.value(t))
}

/// `Φ_ν(t) = (ν−1)∫₀^|t|∫₀ˢ(1+r)^{−ν} dr ds`, closed form
/// `|t| − ((1+|t|)^{2−ν} − 1)/(2−ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiNu {
    nu: f64,
}

impl PhiNu {
    pub fn new(nu: f64) -> Result<Self, DensityError> {
        if !(nu > 1.0 && nu < 2.0) {
            return Err(DensityError::Domain { name: "nu", value: nu, expected: "1 < nu < 2" });
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

impl ConvexScalar for PhiNu {
    fn value(&self, t: f64) -> f64 {
        let a = t.abs();
        let m = 2.0 - self.nu;
        a - (m * a.ln_1p()).exp_m1() / m
    }

    fn deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        let d = -((1.0 - self.nu) * a.ln_1p()).exp_m1();
        d.copysign(t)
    }

    fn second_deriv(&self, t: f64) -> f64 {
        (self.nu - 1.0) * (1.0 + t.abs()).powf(-self.nu)
    }

    fn slope_limit(&self) -> f64 {
        1.0
    }

    fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        let a = s.abs();
        if a >= 1.0 || !a.is_finite() {
            return Err(DensityError::ConjugateRange { s, bound: 1.0 });
        }
        // maximizer 1+t = (1−a)^{−1/(ν−1)}; the constant terms cancel exactly
        let nu = self.nu;
        let r = (2.0 - nu) / (nu - 1.0);
        let scale = (nu - 1.0) / (2.0 - nu);
        Ok(scale * (-r * (-a).ln_1p()).exp_m1() - a)
    }

    fn id(&self) -> String {
        format!("phi_nu:{}", self.nu)
    }
}

/// Hencky-type density: `ν s²` on `|s| ≤ k/(√2 ν)`, `√2 k|s| − k²/(2ν)` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hencky {
    k: f64,
    nu: f64,
}

impl Hencky {
    pub fn new(k: f64, nu: f64) -> Result<Self, DensityError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(DensityError::Domain { name: "k", value: k, expected: "k > 0" });
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(DensityError::Domain { name: "nu", value: nu, expected: "nu > 0" });
        }
        Ok(Self { k, nu })
    }

    /// Branch point `k/(√2 ν)`.
    pub fn threshold(&self) -> f64 {
        self.k / (std::f64::consts::SQRT_2 * self.nu)
    }

    pub fn quadratic_branch(&self, s: f64) -> f64 {
        self.nu * s * s
    }

    pub fn linear_branch(&self, s: f64) -> f64 {
        std::f64::consts::SQRT_2 * self.k * s.abs() - self.k * self.k / (2.0 * self.nu)
    }
}

impl ConvexScalar for Hencky {
    fn value(&self, t: f64) -> f64 {
        if t.abs() <= self.threshold() {
            self.quadratic_branch(t)
        } else {
            self.linear_branch(t)
        }
    }

    fn deriv(&self, t: f64) -> f64 {
        if t.abs() <= self.threshold() {
            2.0 * self.nu * t
        } else {
            (std::f64::consts::SQRT_2 * self.k).copysign(t)
        }
    }

    fn second_deriv(&self, t: f64) -> f64 {
        if t.abs() <= self.threshold() {
            2.0 * self.nu
        } else {
            0.0
        }
    }

    fn slope_limit(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.k
    }

    fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        let bound = self.slope_limit();
        // the slope bound itself is attained on the whole linear branch
        if s.abs() > bound || !s.is_finite() {
            return Err(DensityError::ConjugateRange { s, bound });
        }
        Ok(s * s / (4.0 * self.nu))
    }

    fn id(&self) -> String {
        format!("hencky:{}:{}", self.k, self.nu)
    }
}

/// `c |t|^p`, `p > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power {
    coeff: f64,
    p: f64,
}

impl Power {
    pub fn new(coeff: f64, p: f64) -> Result<Self, DensityError> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(DensityError::Domain { name: "p", value: p, expected: "p > 1" });
        }
        if !(coeff > 0.0 && coeff.is_finite()) {
            return Err(DensityError::Domain { name: "coeff", value: coeff, expected: "coeff > 0" });
        }
        Ok(Self { coeff, p })
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }
}

impl ConvexScalar for Power {
    fn value(&self, t: f64) -> f64 {
        self.coeff * t.abs().powf(self.p)
    }

    fn deriv(&self, t: f64) -> f64 {
        (self.coeff * self.p * t.abs().powf(self.p - 1.0)).copysign(t)
    }

    fn second_deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        if a == 0.0 && self.p < 2.0 {
            return f64::INFINITY;
        }
        self.coeff * self.p * (self.p - 1.0) * a.powf(self.p - 2.0)
    }

    fn conjugate(&self, s: f64) -> Result<f64, DensityError> {
        if !s.is_finite() {
            return Err(DensityError::ConjugateRange { s, bound: f64::INFINITY });
        }
        let a = s.abs();
        let t = (a / (self.coeff * self.p)).powf(1.0 / (self.p - 1.0));
        Ok(a * t * (self.p - 1.0) / self.p)
    }

    fn id(&self) -> String {
        if self.coeff == 1.0 {
            format!("power:{}", self.p)
        } else {
            format!("power:{}*{}", self.coeff, self.p)
        }
    }
}

/// `|t| ln(1 + |t|)`; Δ₂ near infinity but not of power type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TLog;

impl ConvexScalar for TLog {
    fn value(&self, t: f64) -> f64 {
        let a = t.abs();
        a * a.ln_1p()
    }

    fn deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        (a.ln_1p() + a / (1.0 + a)).copysign(t)
    }

    fn second_deriv(&self, t: f64) -> f64 {
        let q = 1.0 / (1.0 + t.abs());
        q + q * q
    }

    fn id(&self) -> String {
        "nfun_tlog".to_string()
    }
}
