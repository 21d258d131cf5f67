//! Separable proximal operators, Moreau and forward-backward envelopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::objective::Objective;

/// Convex, proper, lsc, separable `h`.
///
/// Box bounds of length 1 are broadcast to every coordinate; infinite bounds
/// are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxFunction {
    Zero,
    L1 { gamma: f64 },
    BoxIndicator { lower: Vec<f64>, upper: Vec<f64> },
    L1PlusBox { gamma: f64, lower: Vec<f64>, upper: Vec<f64> },
}

fn bound(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl ProxFunction {
    pub fn l1(gamma: f64) -> Result<Self> {
        let h = ProxFunction::L1 { gamma };
        h.validate(1)?;
        Ok(h)
    }

    /// Indicator of `[lower, upper]ⁿ`.
    pub fn uniform_box(lower: f64, upper: f64) -> Result<Self> {
        let h = ProxFunction::BoxIndicator { lower: vec![lower], upper: vec![upper] };
        h.validate(1)?;
        Ok(h)
    }

    pub fn l1_plus_uniform_box(gamma: f64, lower: f64, upper: f64) -> Result<Self> {
        let h = ProxFunction::L1PlusBox { gamma, lower: vec![lower], upper: vec![upper] };
        h.validate(1)?;
        Ok(h)
    }

    /// Checks parameter ranges for dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let check_gamma = |g: f64| {
            if g > 0.0 && g.is_finite() {
                Ok(())
            } else {
                Err(validation(format!("l1 weight must be positive, got {g}")))
            }
        };
        let check_box = |lo: &[f64], hi: &[f64]| {
            if lo.is_empty() || lo.len() != hi.len() || (lo.len() != 1 && lo.len() != n) {
                return Err(validation("box bounds must have length 1 or n, and matching lengths"));
            }
            if lo.iter().zip(hi).any(|(l, u)| !(l < u) || l.is_nan() || u.is_nan()) {
                return Err(validation("box bounds need lower < upper componentwise"));
            }
            Ok(())
        };
        match self {
            ProxFunction::Zero => Ok(()),
            ProxFunction::L1 { gamma } => check_gamma(*gamma),
            ProxFunction::BoxIndicator { lower, upper } => check_box(lower, upper),
            ProxFunction::L1PlusBox { gamma, lower, upper } => {
                check_gamma(*gamma)?;
                check_box(lower, upper)
            }
        }
    }

    fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match self {
            ProxFunction::BoxIndicator { lower, upper } | ProxFunction::L1PlusBox { lower, upper, .. } => {
                Some((lower, upper))
            }
            _ => None,
        }
    }

    fn gamma(&self) -> f64 {
        match self {
            ProxFunction::L1 { gamma } | ProxFunction::L1PlusBox { gamma, .. } => *gamma,
            _ => 0.0,
        }
    }

    /// `h(x)`, `+∞` outside the box.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        if let Some((lo, hi)) = self.bounds() {
            if x.iter().enumerate().any(|(i, v)| *v < bound(lo, i) || *v > bound(hi, i)) {
                return f64::INFINITY;
            }
        }
        self.gamma() * x.lp_norm(1)
    }

    /// `x ∈ dom h`.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.value(x).is_finite()
    }

    /// `prox_{λh}(x)`: soft-threshold by `λγ`, then clamp to the box.
    pub fn prox(&self, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
        let t = lambda * self.gamma();
        let mut out = if t > 0.0 { x.map(|v| soft_threshold(v, t)) } else { x.clone() };
        if let Some((lo, hi)) = self.bounds() {
            for (i, v) in out.iter_mut().enumerate() {
                *v = v.clamp(bound(lo, i), bound(hi, i));
            }
        }
        out
    }

    /// `M_{λh}(x) = h(p) + ‖p − x‖²/(2λ)` with `p = prox_{λh}(x)`.
    pub fn moreau(&self, lambda: f64, x: &DVector<f64>) -> f64 {
        let p = self.prox(lambda, x);
        self.value(&p) + (p - x).norm_squared() / (2.0 * lambda)
    }

    /// `∇M_{λh}(x) = (x − prox_{λh}(x))/λ`.
    pub fn moreau_gradient(&self, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
        (x - self.prox(lambda, x)) / lambda
    }
}

fn check_lambda(f: &Objective, lambda: f64) -> Result<()> {
    let lf = f.lipschitz().ok_or(Error::CertificateMissing("lipschitz"))?;
    if !(lambda > 0.0 && lambda * lf < 1.0) {
        return Err(validation(format!("lambda must lie in (0, 1/L_f) = (0, {}), got {lambda}", 1.0 / lf)));
    }
    Ok(())
}

fn check_positive(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(validation(format!("lambda must be positive, got {lambda}")))
    }
}

/// `H_λ(x) = (x − prox_{λh}(x − λ∇f(x)))/λ`.
pub fn fb_residual(f: &Objective, h: &ProxFunction, lambda: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_positive(lambda)?;
    Ok(fb_residual_unchecked(f, h, lambda, x))
}

pub(crate) fn fb_residual_unchecked(f: &Objective, h: &ProxFunction, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
    let g = f.gradient(x);
    (x - h.prox(lambda, &(x - &g * lambda))) / lambda
}

/// `𝓕_λ(x) = f(x) + M_{λh}(x − λ∇f(x)) − (λ/2)‖∇f(x)‖²`.
pub fn fb_envelope(f: &Objective, h: &ProxFunction, lambda: f64, x: &DVector<f64>) -> Result<f64> {
    check_lambda(f, lambda)?;
    let g = f.gradient(x);
    Ok(f.value(x) + h.moreau(lambda, &(x - &g * lambda)) - 0.5 * lambda * g.norm_squared())
}

/// `∇𝓕_λ(x) = (I − λ∇²f(x)) H_λ(x)`.
pub fn fb_envelope_gradient(f: &Objective, h: &ProxFunction, lambda: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_lambda(f, lambda)?;
    let hess = f.hessian(x).ok_or(Error::CertificateMissing("hessian"))?;
    let r = fb_residual_unchecked(f, h, lambda, x);
    let n = x.len();
    Ok((DMatrix::identity(n, n) - hess * lambda) * r)
}

/// `½‖H_λ(x)‖² − μ(𝓕_λ(x) − 𝓕*_λ)`.
pub fn proximal_pl_residual(
    f: &Objective,
    h: &ProxFunction,
    lambda: f64,
    mu: f64,
    envelope_star: Option<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    let star = envelope_star.ok_or(Error::CertificateMissing("envelope optimum"))?;
    let r = fb_residual(f, h, lambda, x)?;
    Ok(0.5 * r.norm_squared() - mu * (fb_envelope(f, h, lambda, x)? - star))
}

/// Largest `μ` with a nonnegative proximal PL residual at every sample.
///
/// Samples whose envelope gap is below `1e-12` carry no information and are
/// skipped. Returns `None` when no sample has a positive gap.
pub fn fit_proximal_pl(
    f: &Objective,
    h: &ProxFunction,
    lambda: f64,
    envelope_star: f64,
    samples: &[DVector<f64>],
) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for x in samples {
        let gap = fb_envelope(f, h, lambda, x)? - envelope_star;
        if gap <= 1e-12 {
            continue;
        }
        let ratio = 0.5 * fb_residual_unchecked(f, h, lambda, x).norm_squared() / gap;
        best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{finite_difference_gradient, quadratic_objective, relative_error};
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn half_sq(n: usize) -> Objective {
        quadratic_objective(DMatrix::identity(n, n), DVector::zeros(n)).unwrap()
    }

    #[test]
    fn prox_examples() {
        let h = ProxFunction::l1(1.0).unwrap();
        assert_eq!(h.prox(1.0, &dvector![2.0, -0.5]), dvector![1.0, 0.0]);
        let b = ProxFunction::uniform_box(-5.0, 5.0).unwrap();
        assert_eq!(b.prox(0.3, &dvector![7.0, -2.0]), dvector![5.0, -2.0]);
        assert_eq!(ProxFunction::Zero.prox(2.0, &dvector![1.5, -3.0]), dvector![1.5, -3.0]);
    }

    #[test]
    fn moreau_examples() {
        let h = ProxFunction::l1(1.0).unwrap();
        assert!((h.moreau(1.0, &dvector![2.0]) - 1.5).abs() < 1e-15);
        let b = ProxFunction::uniform_box(-1.0, 1.0).unwrap();
        assert_eq!(b.moreau(0.5, &dvector![0.2, -0.9]), 0.0);
        assert_eq!(ProxFunction::Zero.moreau(0.5, &dvector![3.0]), 0.0);
    }

    #[test]
    fn residual_with_zero_h_is_gradient() {
        let q = nalgebra::dmatrix![2.0, 0.5; 0.5, 1.0];
        let f = quadratic_objective(q, dvector![1.0, -1.0]).unwrap();
        let x = dvector![0.3, -2.0];
        let r = fb_residual(&f, &ProxFunction::Zero, 0.1, &x).unwrap();
        assert!((r - f.gradient(&x)).norm() < 1e-12);
        let env = fb_envelope(&f, &ProxFunction::Zero, 0.1, &x).unwrap();
        let g = f.gradient(&x);
        assert!((env - (f.value(&x) - 0.05 * g.norm_squared())).abs() < 1e-12);
    }

    #[test]
    fn constant_f_with_l1_at_origin() {
        let f = quadratic_objective(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let r = fb_residual(&f, &ProxFunction::l1(1.0).unwrap(), 0.5, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(r, dvector![0.0, 0.0]);
    }

    #[test]
    fn envelope_at_quadratic_minimizer() {
        let f = quadratic_objective(DMatrix::identity(2, 2), dvector![-1.0, 2.0]).unwrap();
        let xs = dvector![1.0, -2.0];
        let env = fb_envelope(&f, &ProxFunction::Zero, 0.5, &xs).unwrap();
        assert!((env - f.f_star().unwrap()).abs() < 1e-14);
    }

    #[test]
    fn lambda_range_enforced() {
        let f = half_sq(2);
        let x = dvector![1.0, 1.0];
        assert!(fb_envelope(&f, &ProxFunction::Zero, 1.0, &x).is_err());
        assert!(fb_envelope(&f, &ProxFunction::Zero, 0.0, &x).is_err());
        assert!(fb_residual(&f, &ProxFunction::Zero, -1.0, &x).is_err());
    }

    #[test]
    fn pl_residual_strongly_convex_zero_h() {
        let f = quadratic_objective(nalgebra::dmatrix![2.0, 0.0; 0.0, 1.0], DVector::zeros(2)).unwrap();
        let lambda = 0.2;
        let h = ProxFunction::Zero;
        assert_eq!(proximal_pl_residual(&f, &h, lambda, 1.0, None, &dvector![1.0, 1.0]), Err(Error::CertificateMissing("envelope optimum")));
        assert!(proximal_pl_residual(&f, &h, lambda, 1.0, Some(0.0), &dvector![0.0, 0.0]).unwrap().abs() < 1e-15);
        for x in [dvector![1.0, 1.0], dvector![-3.0, 0.5], dvector![0.1, -4.0]] {
            assert!(proximal_pl_residual(&f, &h, lambda, 1.0, Some(0.0), &x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn validation_of_parameters() {
        assert!(ProxFunction::l1(0.0).is_err());
        assert!(ProxFunction::uniform_box(1.0, 1.0).is_err());
        let b = ProxFunction::BoxIndicator { lower: vec![0.0, 0.0], upper: vec![1.0] };
        assert!(b.validate(2).is_err());
        let h: ProxFunction = toml::from_str("kind = \"l1_plus_box\"\ngamma = 1.0\nlower = [-5.0]\nupper = [5.0]\n").unwrap();
        assert_eq!(h, ProxFunction::l1_plus_uniform_box(1.0, -5.0, 5.0).unwrap());
    }

    fn kinds() -> Vec<ProxFunction> {
        vec![
            ProxFunction::Zero,
            ProxFunction::l1(0.7).unwrap(),
            ProxFunction::uniform_box(-2.0, 3.0).unwrap(),
            ProxFunction::l1_plus_uniform_box(1.3, -1.0, 4.0).unwrap(),
            ProxFunction::l1_plus_uniform_box(0.5, 0.5, 2.0).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn prox_is_nonexpansive(
            k in 0usize..5,
            lambda in 0.01f64..3.0,
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            y in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let h = &kinds()[k];
            let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
            prop_assert!((h.prox(lambda, &x) - h.prox(lambda, &y)).norm() <= (x - y).norm() * (1.0 + 1e-14));
        }

        #[test]
        fn moreau_gradient_matches_differences(
            k in 0usize..5,
            lambda in 0.1f64..2.0,
            x in proptest::collection::vec(-6.0f64..6.0, 3),
        ) {
            let h = &kinds()[k];
            let x = DVector::from_vec(x);
            let fd = finite_difference_gradient(|z| h.moreau(lambda, z), &x, 1e-6);
            prop_assert!(relative_error(&fd, &h.moreau_gradient(lambda, &x)) <= 1e-5);
        }

        #[test]
        fn composite_prox_matches_grid_search(v in -8.0f64..8.0, lambda in 0.1f64..2.0) {
            let h = ProxFunction::l1_plus_uniform_box(1.0, -2.0, 3.0).unwrap();
            let p = h.prox(lambda, &dvector![v])[0];
            let obj = |z: f64| z.abs() + (z - v).powi(2) / (2.0 * lambda);
            let mut best = (f64::INFINITY, 0.0);
            let mut z = -2.0;
            while z <= 3.0 + 1e-12 {
                let o = obj(z);
                if o < best.0 {
                    best = (o, z);
                }
                z += 1e-4;
            }
            prop_assert!((p - best.1).abs() <= 1e-3);
        }
    }
}
