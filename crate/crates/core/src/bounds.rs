//! Closed-form settling-time bounds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::robust_condition_from_envelope;
use crate::error::{validation, Result};

/// Which result a bound comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    Lemma2,
    Nominal,
    Robust,
    Newton,
    ExponentialL2,
    ExponentialL1,
    FiniteTime,
    Projected,
    Feasibility,
    Proximal,
    Consensus,
    ConsensusExponential,
    ConsensusRobust,
}

impl fmt::Display for BoundSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingBound {
    pub value: f64,
    pub source: BoundSource,
    pub parameters: Vec<(String, f64)>,
}

impl SettlingBound {
    fn new(value: f64, source: BoundSource, parameters: &[(&str, f64)]) -> Self {
        Self { value, source, parameters: parameters.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }
}

impl fmt::Display for SettlingBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.value, self.source)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(validation(format!("{name} must be positive and finite, got {v}")))
    }
}

fn exponents(p: f64, q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(validation(format!("p must lie in [0, 1), got {p}")));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(validation(format!("q must exceed 1, got {q}")));
    }
    Ok(())
}

/// `1/(σ(1−p)) + 1/(ρ(q−1))`, the shape shared by most bounds.
fn two_term(sigma: f64, rho: f64, p: f64, q: f64) -> Result<f64> {
    positive("sigma", sigma)?;
    positive("rho", rho)?;
    exponents(p, q)?;
    Ok(1.0 / (sigma * (1.0 - p)) + 1.0 / (rho * (q - 1.0)))
}

/// `V̇ ≤ −(c₁V^{r₁} + c₂V^{r₂})^k` settles within
/// `1/(c₁ᵏ(1−r₁k)) + 1/(c₂ᵏ(r₂k−1))`.
pub fn lemma2_bound(c1: f64, c2: f64, r1: f64, r2: f64, k: f64) -> Result<SettlingBound> {
    positive("c1", c1)?;
    positive("c2", c2)?;
    positive("k", k)?;
    if !(r1 * k >= 0.0 && r1 * k < 1.0) {
        return Err(validation(format!("need 0 ≤ r1·k < 1, got {}", r1 * k)));
    }
    if !(r2 * k > 1.0) {
        return Err(validation(format!("need r2·k > 1, got {}", r2 * k)));
    }
    let v = 1.0 / (c1.powf(k) * (1.0 - r1 * k)) + 1.0 / (c2.powf(k) * (r2 * k - 1.0));
    Ok(SettlingBound::new(v, BoundSource::Lemma2, &[("c1", c1), ("c2", c2), ("r1", r1), ("r2", r2), ("k", k)]))
}

/// `1/(μσ(1−p)) + 1/(μρ(q−1))`.
pub fn nominal_bound(mu: f64, sigma: f64, rho: f64, p: f64, q: f64) -> Result<SettlingBound> {
    positive("mu", mu)?;
    let v = two_term(sigma, rho, p, q)? / mu;
    Ok(SettlingBound::new(v, BoundSource::Nominal, &[("mu", mu), ("sigma", sigma), ("rho", rho), ("p", p), ("q", q)]))
}

/// `1/(μk₁) + 1/(μk₂(q−1))` with `k₁ = σ − d̄ − ε/(2√μ)`, `k₂ = ρ − ε/(2√μ)`.
pub fn robust_bound(mu: f64, sigma: f64, rho: f64, q: f64, epsilon: f64, dbar: f64) -> Result<SettlingBound> {
    positive("mu", mu)?;
    positive("sigma", sigma)?;
    positive("rho", rho)?;
    if !(epsilon >= 0.0 && dbar >= 0.0) {
        return Err(validation("disturbance envelope must be nonnegative"));
    }
    let c = robust_condition_from_envelope(sigma, rho, q, epsilon, dbar, mu, 1.0)?;
    if !(c.k1 > 0.0) {
        return Err(validation(format!("k1 = {} is not positive", c.k1)));
    }
    if !(c.k2 > 0.0) {
        return Err(validation(format!("k2 = {} is not positive", c.k2)));
    }
    let v = (1.0 / c.k1 + 1.0 / (c.k2 * (q - 1.0))) / mu;
    Ok(SettlingBound::new(
        v,
        BoundSource::Robust,
        &[("mu", mu), ("sigma", sigma), ("rho", rho), ("q", q), ("epsilon", epsilon), ("dbar", dbar)],
    ))
}

/// `1/(σ(1−p)) + 1/(ρ(q−1))`, independent of `μ`.
pub fn newton_bound(sigma: f64, rho: f64, p: f64, q: f64) -> Result<SettlingBound> {
    let v = two_term(sigma, rho, p, q)?;
    Ok(SettlingBound::new(v, BoundSource::Newton, &[("sigma", sigma), ("rho", rho), ("p", p), ("q", q)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentialVariant {
    L2,
    L1,
}

/// `1/(αμ)` for the l2 form and `n/(αμ)` for the componentwise form.
pub fn exponential_bound(alpha: f64, mu: f64, variant: ExponentialVariant, n: usize) -> Result<SettlingBound> {
    positive("alpha", alpha)?;
    positive("mu", mu)?;
    let (v, src) = match variant {
        ExponentialVariant::L2 => (1.0 / (alpha * mu), BoundSource::ExponentialL2),
        ExponentialVariant::L1 => {
            if n == 0 {
                return Err(validation("dimension must be positive"));
            }
            (n as f64 / (alpha * mu), BoundSource::ExponentialL1)
        }
    };
    Ok(SettlingBound::new(v, src, &[("alpha", alpha), ("mu", mu), ("n", n as f64)]))
}

/// Gain `α` that makes the exponential bound equal `target`.
pub fn exponential_gain_for(target: f64, mu: f64, variant: ExponentialVariant, n: usize) -> Result<f64> {
    positive("target", target)?;
    positive("mu", mu)?;
    Ok(match variant {
        ExponentialVariant::L2 => 1.0 / (target * mu),
        ExponentialVariant::L1 => n as f64 / (target * mu),
    })
}

/// `(2μV₀)^{(1−p)/2} / (μσ(1−p))`.
pub fn finite_time_bound(mu: f64, sigma: f64, p: f64, v0: f64) -> Result<SettlingBound> {
    positive("mu", mu)?;
    positive("sigma", sigma)?;
    if !(0.0..1.0).contains(&p) {
        return Err(validation(format!("p must lie in [0, 1), got {p}")));
    }
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(validation(format!("V0 must be nonnegative, got {v0}")));
    }
    let v = (2.0 * mu * v0).powf((1.0 - p) / 2.0) / (mu * sigma * (1.0 - p));
    Ok(SettlingBound::new(v, BoundSource::FiniteTime, &[("mu", mu), ("sigma", sigma), ("p", p), ("v0", v0)]))
}

/// Nominal bound with `μ` replaced by `μλ₂(PᵀP)`.
pub fn projected_bound(mu: f64, lambda2: f64, sigma: f64, rho: f64, p: f64, q: f64) -> Result<SettlingBound> {
    positive("mu", mu)?;
    positive("lambda2", lambda2)?;
    let v = two_term(sigma, rho, p, q)? / (mu * lambda2);
    Ok(SettlingBound::new(
        v,
        BoundSource::Projected,
        &[("mu", mu), ("lambda2", lambda2), ("sigma", sigma), ("rho", rho), ("p", p), ("q", q)],
    ))
}

/// Time for `Ax − b` to vanish: `1/(σλ₂(AAᵀ)(1−p)) + 1/(ρλ₂(AAᵀ)(q−1))`.
pub fn feasibility_bound(sigma: f64, rho: f64, p: f64, q: f64, lambda2: f64) -> Result<SettlingBound> {
    positive("lambda2", lambda2)?;
    let v = two_term(sigma, rho, p, q)? / lambda2;
    Ok(SettlingBound::new(
        v,
        BoundSource::Feasibility,
        &[("sigma", sigma), ("rho", rho), ("p", p), ("q", q), ("lambda2", lambda2)],
    ))
}

/// `(1/(μ(1−λL_f))) (1/(κ_p(1−p)) + 1/(κ_q(q−1)))`.
pub fn proximal_bound(
    mu: f64,
    lambda: f64,
    lipschitz: f64,
    kappa_p: f64,
    kappa_q: f64,
    p: f64,
    q: f64,
) -> Result<SettlingBound> {
    positive("mu", mu)?;
    positive("lambda", lambda)?;
    positive("lipschitz", lipschitz)?;
    if !(lambda * lipschitz < 1.0) {
        return Err(validation(format!("need lambda·L_f < 1, got {}", lambda * lipschitz)));
    }
    let v = two_term(kappa_p, kappa_q, p, q)? / (mu * (1.0 - lambda * lipschitz));
    Ok(SettlingBound::new(
        v,
        BoundSource::Proximal,
        &[("mu", mu), ("lambda", lambda), ("lipschitz", lipschitz), ("kappa_p", kappa_p), ("kappa_q", kappa_q), ("p", p), ("q", q)],
    ))
}

/// Consensus on a connected graph with algebraic connectivity `λ₂(L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ConsensusForm {
    /// `g = g_p + g_q` componentwise.
    Power { sigma: f64, rho: f64, p: f64, q: f64 },
    /// `g = α sign(y) ⊙ e^{|y|}` on `n` agents.
    Exponential { alpha: f64, n: usize },
    /// Disturbed, `p = 0`.
    Robust { sigma: f64, rho: f64, q: f64, epsilon: f64, dbar: f64 },
}

pub fn consensus_bound(lambda2: f64, form: ConsensusForm) -> Result<SettlingBound> {
    positive("lambda2", lambda2)?;
    match form {
        ConsensusForm::Power { sigma, rho, p, q } => {
            let v = two_term(sigma, rho, p, q)? / lambda2;
            Ok(SettlingBound::new(
                v,
                BoundSource::Consensus,
                &[("lambda2", lambda2), ("sigma", sigma), ("rho", rho), ("p", p), ("q", q)],
            ))
        }
        ConsensusForm::Exponential { alpha, n } => {
            let mut b = exponential_bound(alpha, lambda2, ExponentialVariant::L1, n)?;
            b.source = BoundSource::ConsensusExponential;
            Ok(b)
        }
        ConsensusForm::Robust { sigma, rho, q, epsilon, dbar } => {
            let mut b = robust_bound(lambda2, sigma, rho, q, epsilon, dbar)?;
            b.source = BoundSource::ConsensusRobust;
            Ok(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(b: Result<SettlingBound>) -> f64 {
        b.unwrap().value
    }

    #[test]
    fn lemma2_examples() {
        assert_eq!(v(lemma2_bound(1.0, 1.0, 0.5, 1.5, 1.0)), 4.0);
        assert_eq!(v(lemma2_bound(1.0, 1.0, 0.0, 2.0, 1.0)), 2.0);
        assert!(lemma2_bound(1.0, 1.0, 1.0, 2.0, 1.0).is_err());
        assert!(lemma2_bound(1.0, 1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn nominal_and_newton_examples() {
        assert_eq!(v(nominal_bound(1.0, 1.0, 1.0, 0.0, 2.0)), 2.0);
        assert!((v(nominal_bound(1.0, 3.0, 3.0, 0.0, 2.0)) - 2.0 / 3.0).abs() < 1e-15);
        assert!(nominal_bound(1.0, 1.0, 1.0, 1.0, 2.0).is_err());
        assert_eq!(v(newton_bound(1.0, 1.0, 0.0, 2.0)), 2.0);
        assert_eq!(v(newton_bound(2.0, 2.0, 0.5, 3.0)), 1.25);
        assert!(newton_bound(1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn robust_examples() {
        // σ = ρ = 3, μ = 1, ε = d̄ = 1
        let b = v(robust_bound(1.0, 3.0, 3.0, 2.0, 1.0, 1.0));
        assert!((b - 1.0666666666666667).abs() < 1e-12);
        assert_eq!(format!("{:.4}", b), "1.0667");
        assert_eq!(v(robust_bound(0.7, 2.0, 1.5, 3.0, 0.0, 0.0)), v(nominal_bound(0.7, 2.0, 1.5, 0.0, 3.0)));
        assert!(robust_bound(1.0, 1.0, 3.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn exponential_examples() {
        assert_eq!(v(exponential_bound(2.0, 1.0, ExponentialVariant::L2, 1)), 0.5);
        assert_eq!(v(exponential_bound(1.0, 1.0, ExponentialVariant::L1, 4)), 4.0);
        assert_eq!(exponential_gain_for(1.0, 1.0, ExponentialVariant::L2, 1).unwrap(), 1.0);
        let a = exponential_gain_for(2.5, 0.3, ExponentialVariant::L1, 3).unwrap();
        assert!((v(exponential_bound(a, 0.3, ExponentialVariant::L1, 3)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn finite_time_examples() {
        assert_eq!(v(finite_time_bound(1.0, 1.0, 0.0, 0.0)), 0.0);
        assert_eq!(v(finite_time_bound(1.0, 1.0, 0.0, 2.0)), 2.0);
        assert_eq!(v(finite_time_bound(1.0, 1.0, 0.5, 0.5)), 2.0);
    }

    #[test]
    fn constrained_examples() {
        let nom = v(nominal_bound(0.8, 1.0, 2.0, 0.2, 2.5));
        assert_eq!(v(projected_bound(0.8, 1.0, 1.0, 2.0, 0.2, 2.5)), nom);
        assert_eq!(v(projected_bound(0.8, 0.5, 1.0, 2.0, 0.2, 2.5)), 2.0 * nom);
        assert_eq!(v(feasibility_bound(1.0, 1.0, 0.0, 2.0, 1.0)), 2.0);
        assert!(feasibility_bound(1.0, 1.0, 0.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn proximal_examples() {
        let tiny = v(proximal_bound(0.5, 1e-12, 1.0, 1.0, 2.0, 0.5, 2.0));
        let nom = v(nominal_bound(0.5, 1.0, 2.0, 0.5, 2.0));
        assert!((tiny - nom).abs() < 1e-9);
        assert!(v(proximal_bound(0.5, 0.1, 7.83, 1.0, 1.0, 0.5, 2.0)).is_finite());
        assert!(proximal_bound(0.5, 0.2, 5.0, 1.0, 1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn consensus_examples() {
        let pw = ConsensusForm::Power { sigma: 1.0, rho: 1.0, p: 0.0, q: 2.0 };
        assert_eq!(v(consensus_bound(4.0, pw)), 0.5);
        assert_eq!(v(consensus_bound(2.0, pw)), 0.5 * v(consensus_bound(1.0, pw)));
        assert_eq!(v(consensus_bound(1.0, ConsensusForm::Exponential { alpha: 1.0, n: 4 })), 4.0);
        let r = consensus_bound(1.0, ConsensusForm::Robust { sigma: 3.0, rho: 3.0, q: 2.0, epsilon: 1.0, dbar: 1.0 });
        assert_eq!(r.unwrap().source, BoundSource::ConsensusRobust);
    }

    proptest! {
        #[test]
        fn bounds_decrease_in_gains(
            mu in 0.05f64..5.0, s in 0.1f64..5.0, r in 0.1f64..5.0, p in 0.0f64..0.95,
            q in 1.05f64..5.0, l in 0.05f64..5.0, k in 1.01f64..3.0,
        ) {
            let base = v(nominal_bound(mu, s, r, p, q));
            prop_assert!(base > 0.0);
            prop_assert!(v(nominal_bound(mu * k, s, r, p, q)) < base);
            prop_assert!(v(nominal_bound(mu, s * k, r, p, q)) < base);
            prop_assert!(v(nominal_bound(mu, s, r * k, p, q)) < base);
            prop_assert!(v(newton_bound(s * k, r, p, q)) < v(newton_bound(s, r, p, q)));
            prop_assert!(v(projected_bound(mu, l * k, s, r, p, q)) < v(projected_bound(mu, l, s, r, p, q)));
            prop_assert!(v(feasibility_bound(s, r * k, p, q, l)) < v(feasibility_bound(s, r, p, q, l)));
            let pw = |l: f64| v(consensus_bound(l, ConsensusForm::Power { sigma: s, rho: r, p, q }));
            prop_assert!(pw(l * k) < pw(l));
            let lam = 0.5 / (l + 1.0);
            let prox = |kp: f64, kq: f64, m: f64| v(proximal_bound(m, lam, l + 1.0, kp, kq, p, q));
            prop_assert!(prox(s * k, r, mu) < prox(s, r, mu));
            prop_assert!(prox(s, r * k, mu) < prox(s, r, mu));
            prop_assert!(prox(s, r, mu * k) < prox(s, r, mu));
        }

        #[test]
        fn robust_reduces_to_nominal(mu in 0.05f64..5.0, s in 0.1f64..5.0, r in 0.1f64..5.0, q in 1.05f64..5.0) {
            prop_assert_eq!(v(robust_bound(mu, s, r, q, 0.0, 0.0)), v(nominal_bound(mu, s, r, 0.0, q)));
        }

        #[test]
        fn robust_decreases_in_gains(mu in 0.5f64..5.0, s in 2.0f64..5.0, r in 1.5f64..5.0, k in 1.01f64..3.0) {
            let b = |mu, s, r| v(robust_bound(mu, s, r, 2.0, 1.0, 0.5));
            prop_assert!(b(mu * k, s, r) < b(mu, s, r));
            prop_assert!(b(mu, s * k, r) < b(mu, s, r));
            prop_assert!(b(mu, s, r * k) < b(mu, s, r));
        }
    }
}
