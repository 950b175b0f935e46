//! Exponent bookkeeping for the higher-integrability results.

use serde::{Deserialize, Serialize};

use super::DensityError;

/// Side of the `(τ_s, τ_α)` scan grid on `(0, 2]²`.
pub const SCAN_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrabilityCase {
    GammaZero,
    GammaSmall,
    FullGradient,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityPrediction {
    pub p: f64,
    pub gamma: f64,
    pub mu: Option<f64>,
    pub tau_s: f64,
    pub tau_alpha: f64,
    /// `s = (p−2)/2 + τ_s`.
    pub s: f64,
    /// `α = −1/2 + τ_α`.
    pub alpha: f64,
    /// Predicted local integrability exponent of `∂₂u`; `+∞` encodes "every
    /// finite exponent", and an infeasible prediction falls back to `p`.
    #[serde(with = "crate::io::json_f64")]
    pub chi: f64,
    pub feasible: bool,
    pub which_case: IntegrabilityCase,
    /// `∂₁u ∈ L^κ` for every finite κ (requires `γ = 0`, `μ < 2`).
    pub full_gradient: bool,
    /// Sign condition `3(2−μ) − (p−2) > 0`; `None` without `μ`.
    pub remark_condition: Option<bool>,
}

/// `|τ_s − τ_α| < 1/2`.
pub fn condition_tau_gap(tau_s: f64, tau_alpha: f64) -> bool {
    (tau_s - tau_alpha).abs() < 0.5
}

/// `γ < (p − 1 + 2(τ_s − τ_α)) / (p + 2τ_s)`.
pub fn condition_gamma(p: f64, gamma: f64, tau_s: f64, tau_alpha: f64) -> bool {
    gamma < (p - 1.0 + 2.0 * (tau_s - tau_alpha)) / (p + 2.0 * tau_s)
}

pub fn predict_integrability(p: f64, gamma: f64, mu: Option<f64>) -> Result<IntegrabilityPrediction, DensityError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(DensityError::Domain { name: "p", value: p, expected: "p > 1" });
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(DensityError::Domain { name: "gamma", value: gamma, expected: "gamma >= 0" });
    }
    if let Some(m) = mu {
        if !(m > 1.0) {
            return Err(DensityError::Domain { name: "mu", value: m, expected: "mu > 1" });
        }
    }
    let remark_condition = mu.map(|m| 3.0 * (2.0 - m) - (p - 2.0) > 0.0);

    let base = |tau_s: f64, tau_alpha: f64, chi: f64, feasible: bool, which_case| IntegrabilityPrediction {
        p,
        gamma,
        mu,
        tau_s,
        tau_alpha,
        s: (p - 2.0) / 2.0 + tau_s,
        alpha: -0.5 + tau_alpha,
        chi,
        feasible,
        which_case,
        full_gradient: false,
        remark_condition,
    };

    if gamma == 0.0 {
        // any τ_s > 1/4 works with τ_α = τ_s − 1/4
        let mut pred = base(0.5, 0.25, f64::INFINITY, true, IntegrabilityCase::GammaZero);
        if mu.is_some_and(|m| m < 2.0) {
            pred.full_gradient = true;
            pred.which_case = IntegrabilityCase::FullGradient;
        }
        return Ok(pred);
    }

    if gamma < p / (p + 1.0) {
        let step = 2.0 / SCAN_POINTS as f64;
        let mut best: Option<(f64, f64)> = None;
        for i in 1..=SCAN_POINTS {
            let tau_s = step * i as f64;
            for j in 1..=SCAN_POINTS {
                let tau_alpha = step * j as f64;
                if condition_tau_gap(tau_s, tau_alpha) && condition_gamma(p, gamma, tau_s, tau_alpha) {
                    if best.map_or(true, |(bs, _)| tau_s > bs) {
                        best = Some((tau_s, tau_alpha));
                    }
                }
            }
        }
        if let Some((tau_s, tau_alpha)) = best {
            let chi = p + 2.0 * tau_s;
            if chi > p + 1.0 {
                return Ok(base(tau_s, tau_alpha, chi, true, IntegrabilityCase::GammaSmall));
            }
        }
    }
    Ok(base(0.0, 0.0, p, false, IntegrabilityCase::Infeasible))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_is_unbounded() {
        for p in [2.0, 3.0, 5.0] {
            let pred = predict_integrability(p, 0.0, None).unwrap();
            assert!(pred.feasible);
            assert!(pred.chi.is_infinite());
            assert_eq!(pred.which_case, IntegrabilityCase::GammaZero);
        }
    }

    #[test]
    fn small_gamma_beats_p_plus_one() {
        let pred = predict_integrability(3.0, 0.7, None).unwrap();
        assert!(pred.feasible);
        assert!(pred.chi > 4.0, "{pred:?}");
        assert!(condition_tau_gap(pred.tau_s, pred.tau_alpha));
        assert!(condition_gamma(3.0, 0.7, pred.tau_s, pred.tau_alpha));
        assert!(pred.tau_alpha > 0.0);
    }

    #[test]
    fn large_gamma_is_infeasible() {
        let pred = predict_integrability(3.0, 0.8, None).unwrap();
        assert!(!pred.feasible);
        assert_eq!(pred.which_case, IntegrabilityCase::Infeasible);
    }

    #[test]
    fn mu_flags() {
        let pred = predict_integrability(2.0, 0.0, Some(1.5)).unwrap();
        assert!(pred.full_gradient);
        assert_eq!(pred.which_case, IntegrabilityCase::FullGradient);
        assert_eq!(pred.remark_condition, Some(true));
        let pred = predict_integrability(10.0, 0.0, Some(1.9)).unwrap();
        assert_eq!(pred.remark_condition, Some(false));
        assert!(predict_integrability(1.0, 0.0, None).is_err());
    }

    #[test]
    fn chi_is_monotone_in_gamma() {
        for p in [1.5, 2.0, 3.0, 6.0] {
            let mut last = f64::INFINITY;
            for k in 0..=60 {
                let gamma = k as f64 * 0.0125;
                let chi = predict_integrability(p, gamma, None).unwrap().chi;
                assert!(chi <= last, "p={p} gamma={gamma}: {chi} > {last}");
                last = chi;
            }
        }
    }
}
