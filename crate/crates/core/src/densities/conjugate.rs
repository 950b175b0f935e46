//! Numeric Legendre–Fenchel machinery: direct conjugate search, tabulated
//! conjugates, Young residuals and recession limits.

use serde::{Deserialize, Serialize};

use super::{DensityError, NFunctionSpec};

/// Default upper end of the search interval for [`conjugate_scalar`].
pub const DEFAULT_T_MAX: f64 = 1e6;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Result of a conjugate search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateValue {
    pub value: f64,
    pub argmax: f64,
    /// The maximizer sits within `1e-6 · t_max` of `t_max`; the true
    /// supremum may lie beyond the search interval.
    pub at_boundary: bool,
}

/// `max_{t ∈ [0, t_max]} { s t − g(t) }` by golden-section search on the
/// concave objective, refined to relative width `1e-10`.
///
/// In strict mode a boundary maximizer is an error rather than a flag.
pub fn conjugate_scalar<G>(g: G, s: f64, t_max: f64, strict: bool) -> Result<ConjugateValue, DensityError>
where
    G: Fn(f64) -> f64,
{
    if !(s >= 0.0) || !s.is_finite() {
        return Err(DensityError::Domain { name: "s", value: s, expected: "s >= 0" });
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(DensityError::Domain { name: "t_max", value: t_max, expected: "t_max > 0" });
    }
    let phi = |t: f64| s * t - g(t);

    let (mut a, mut b) = (0.0_f64, t_max);
    let (mut fa, mut fb) = (phi(a), phi(b));
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = phi(c);
    let mut fd = phi(d);

    let mut best = if fa >= fb { (a, fa) } else { (b, fb) };
    for _ in 0..400 {
        for (t, v) in [(c, fc), (d, fd)] {
            if v > best.1 {
                best = (t, v);
            }
        }
        let slack = 1e-12 * (1.0 + fa.abs().max(fb.abs()).max(fc.abs()).max(fd.abs()));
        // a concave objective lies above its chords
        if fc < chord(a, fa, d, fd, c) - slack {
            return Err(DensityError::NonConcave { t: c });
        }
        if fd < chord(c, fc, b, fb, d) - slack {
            return Err(DensityError::NonConcave { t: d });
        }
        let mid = 0.5 * (a + b);
        if b - a <= 1e-10 * mid.abs() || b - a <= 1e-300 {
            break;
        }
        if fc >= fd {
            b = d;
            fb = fd;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = phi(c);
        } else {
            a = c;
            fa = fc;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = phi(d);
        }
    }
    for (t, v) in [(a, fa), (b, fb)] {
        if v > best.1 {
            best = (t, v);
        }
    }
    let at_boundary = best.0 >= t_max * (1.0 - 1e-6);
    if at_boundary && strict {
        return Err(DensityError::BoundaryMaximizer { t_max });
    }
    Ok(ConjugateValue { value: best.1, argmax: best.0, at_boundary })
}

fn chord(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Conjugate tabulated on `[0, s_max]` and read back by cubic Hermite
/// interpolation. Node slopes are the maximizers, which are the exact
/// derivatives of `g*` and nondecreasing, so the interpolant is monotone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateTable {
    s: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    boundary_flags: Vec<bool>,
}

impl ConjugateTable {
    /// Tabulate `g*` at `points` equispaced nodes of `[0, s_max]` with
    /// [`conjugate_scalar`].
    pub fn build<G>(g: G, s_max: f64, points: usize, t_max: f64, strict: bool) -> Result<Self, DensityError>
    where
        G: Fn(f64) -> f64,
    {
        if points < 2 {
            return Err(DensityError::Domain { name: "points", value: points as f64, expected: "points >= 2" });
        }
        if !(s_max > 0.0) {
            return Err(DensityError::Domain { name: "s_max", value: s_max, expected: "s_max > 0" });
        }
        let mut s = Vec::with_capacity(points);
        let mut values = Vec::with_capacity(points);
        let mut slopes = Vec::with_capacity(points);
        let mut boundary_flags = Vec::with_capacity(points);
        for i in 0..points {
            let si = s_max * i as f64 / (points - 1) as f64;
            let cv = conjugate_scalar(&g, si, t_max, strict)?;
            s.push(si);
            values.push(cv.value);
            slopes.push(cv.argmax);
            boundary_flags.push(cv.at_boundary);
        }
        Ok(Self { s, values, slopes, boundary_flags })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    /// Interpolated conjugate at `|s|`.
    pub fn eval(&self, s: f64) -> Result<f64, DensityError> {
        let a = s.abs();
        let last = *self.s.last().expect("table has at least two nodes");
        if a > last {
            return Err(DensityError::ConjugateRange { s, bound: last });
        }
        let h = self.s[1] - self.s[0];
        let k = ((a / h).floor() as usize).min(self.s.len() - 2);
        let (x0, x1) = (self.s[k], self.s[k + 1]);
        let t = (a - x0) / (x1 - x0);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * (x1 - x0), self.slopes[k + 1] * (x1 - x0));
        let t2 = t * t;
        let t3 = t2 * t;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1)
    }
}

/// `|A(t) + A*(A'(t)) − t A'(t)|`, the defect in the Fenchel equality.
pub fn young_residual(a: &NFunctionSpec, t: f64) -> Result<f64, DensityError> {
    if !(t >= 0.0) {
        return Err(DensityError::Domain { name: "t", value: t, expected: "t >= 0" });
    }
    let slope = a.deriv(t);
    let conj = a.conjugate(slope)?;
    Ok((a.eval(t) + conj - t * slope).abs())
}

/// Fit of the constant in `A*(A'(t)) ≤ c [A(t) + 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dual4Fit {
    pub c_fit: f64,
    pub holds: bool,
}

/// Smallest `c` with `A*(A'(t)) ≤ c (A(t) + 1)` on `samples`; `holds` when the
/// fit is finite and moves by at most 5% when the samples are doubled.
pub fn check_condition_dual4(a: &NFunctionSpec, samples: &[f64]) -> Dual4Fit {
    let fit = |scale: f64| -> Option<f64> {
        let mut c = 0.0_f64;
        for &t in samples {
            let t = t * scale;
            if !(t >= 0.0) {
                return None;
            }
            let lhs = a.conjugate(a.deriv(t)).ok()?;
            let ratio = lhs / (a.eval(t) + 1.0);
            if !ratio.is_finite() {
                return None;
            }
            c = c.max(ratio);
        }
        Some(c)
    };
    if samples.is_empty() {
        return Dual4Fit { c_fit: f64::NAN, holds: false };
    }
    match (fit(1.0), fit(2.0)) {
        (Some(c1), Some(c2)) => {
            let stable = (c2 - c1).abs() <= 0.05 * c1.abs() || (c1 == 0.0 && c2 == 0.0);
            Dual4Fit { c_fit: c1, holds: stable }
        }
        (Some(c1), None) => Dual4Fit { c_fit: c1, holds: false },
        _ => Dual4Fit { c_fit: f64::INFINITY, holds: false },
    }
}

/// Direction argument of [`recession`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

/// `f^∞(±1) = lim_{R→∞} f(±R)/R`.
///
/// Uses the secant slopes `(f(2R s) − f(R s))/R`, which share the limit but
/// drop constant offsets, at `R ∈ {1e4, 1e6, 1e8}` and removes the leading
/// algebraic error term by Aitken extrapolation. The result must agree with
/// the extrapolation from the shifted triple `{1e5, 1e7, 1e9}` to `1e-4`
/// relative.
pub fn recession<F>(f: F, dir: Direction) -> Result<f64, DensityError>
where
    F: Fn(f64) -> f64,
{
    let s = dir.sign();
    let slope = |r: f64| (f(2.0 * r * s) - f(r * s)) / r;
    let main: Vec<f64> = [1e4, 1e6, 1e8].iter().map(|&r| slope(r)).collect();
    let shifted: Vec<f64> = [1e5, 1e7, 1e9].iter().map(|&r| slope(r)).collect();
    let fail = |estimates: Vec<f64>| DensityError::NonLinearGrowth { estimates };

    let (l1, l2) = match (aitken(&main), aitken(&shifted)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(fail(main)),
    };
    if !l1.is_finite() || !l2.is_finite() || (l1 - l2).abs() > 1e-4 * l1.abs().max(1.0) {
        return Err(fail(main));
    }
    Ok(l1)
}

/// Aitken Δ² limit of three estimates; `None` when they do not contract.
fn aitken(e: &[f64]) -> Option<f64> {
    let d1 = e[1] - e[0];
    let d2 = e[2] - e[1];
    if e.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = e[2].abs().max(1.0);
    if d2.abs() <= 1e-12 * scale {
        return Some(e[2]);
    }
    let ratio = d2 / d1;
    if !(ratio.abs() < 1.0) {
        return None;
    }
    Some(e[2] - d2 * d2 / (d2 - d1))
}
