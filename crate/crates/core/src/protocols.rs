//! Sign-preserving gradient maps `g = g_p + g_q` and their class constants.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::norm_r;

/// The functional form of a protocol term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kind {
    /// Subgradient of `‖y‖_r`; `r = ∞` selects the largest-magnitude entry.
    NormSubgradient { r: f64 },
    /// `y / ‖y‖_r^{1−p}`
    Rescaled { p: f64, r: f64 },
    /// `y ‖y‖_r^{q−1}`
    Power { q: f64, r: f64 },
    /// `sign(y) ⊙ |y|^α`
    ComponentwisePower { alpha: f64 },
    Signum,
    /// `y e^{‖y‖₂} / ‖y‖₂`
    ExponentialL2,
    /// `sign(y) ⊙ e^{|y|}`
    ExponentialL1,
    /// `(e^{‖y‖_s} − 1) ∂‖y‖_r`; added to `NormSubgradient { r }` it gives `e^{‖y‖_s} ∂‖y‖_r`.
    ExponentialScaled { s: f64, r: f64 },
    Identity,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::NormSubgradient { r } => write!(f, "norm_subgradient(r={r})"),
            Kind::Rescaled { p, r } => write!(f, "rescaled(p={p}, r={r})"),
            Kind::Power { q, r } => write!(f, "power(q={q}, r={r})"),
            Kind::ComponentwisePower { alpha } => write!(f, "componentwise_power(alpha={alpha})"),
            Kind::Signum => write!(f, "signum"),
            Kind::ExponentialL2 => write!(f, "exponential_l2"),
            Kind::ExponentialL1 => write!(f, "exponential_l1"),
            Kind::ExponentialScaled { s, r } => write!(f, "exponential_scaled(s={s}, r={r})"),
            Kind::Identity => write!(f, "identity"),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct ProtocolConfig {
    #[serde(flatten)]
    kind: Kind,
    #[serde(default = "one")]
    scale: f64,
}

/// A single scaled protocol term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProtocolConfig")]
pub struct Protocol {
    #[serde(flatten)]
    kind: Kind,
    scale: f64,
}

impl TryFrom<ProtocolConfig> for Protocol {
    type Error = Error;
    fn try_from(c: ProtocolConfig) -> Result<Self> {
        Protocol::new(c.kind, c.scale)
    }
}

fn check_r(r: f64, allow_inf: bool) -> Result<()> {
    if r.is_nan() || r < 1.0 || (r.is_infinite() && !allow_inf) {
        return Err(validation(format!("norm index r must be >= 1{}, got {r}", if allow_inf { "" } else { " and finite" })));
    }
    Ok(())
}

impl Protocol {
    pub fn new(kind: Kind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(validation(format!("protocol scale must be positive and finite, got {scale}")));
        }
        match kind {
            Kind::NormSubgradient { r } => check_r(r, true)?,
            Kind::Rescaled { p, r } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(validation(format!("rescaled exponent p must lie in [0,1), got {p}")));
                }
                check_r(r, false)?;
            }
            Kind::Power { q, r } => {
                if !(q > 1.0 && q.is_finite()) {
                    return Err(validation(format!("power exponent q must exceed 1, got {q}")));
                }
                check_r(r, false)?;
            }
            Kind::ComponentwisePower { alpha } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(validation(format!("alpha must be nonnegative, got {alpha}")));
                }
            }
            Kind::ExponentialScaled { s, r } => {
                check_r(s, true)?;
                check_r(r, false)?;
            }
            Kind::Signum | Kind::ExponentialL2 | Kind::ExponentialL1 | Kind::Identity => {}
        }
        Ok(Self { kind, scale })
    }

    pub fn norm_subgradient(r: f64) -> Result<Self> {
        Self::new(Kind::NormSubgradient { r }, 1.0)
    }
    pub fn rescaled(p: f64, r: f64) -> Result<Self> {
        Self::new(Kind::Rescaled { p, r }, 1.0)
    }
    pub fn power(q: f64, r: f64) -> Result<Self> {
        Self::new(Kind::Power { q, r }, 1.0)
    }
    pub fn componentwise_power(alpha: f64) -> Result<Self> {
        Self::new(Kind::ComponentwisePower { alpha }, 1.0)
    }
    pub fn signum() -> Self {
        Self { kind: Kind::Signum, scale: 1.0 }
    }
    pub fn exponential_l2() -> Self {
        Self { kind: Kind::ExponentialL2, scale: 1.0 }
    }
    pub fn exponential_l1() -> Self {
        Self { kind: Kind::ExponentialL1, scale: 1.0 }
    }
    pub fn exponential_scaled(s: f64, r: f64) -> Result<Self> {
        Self::new(Kind::ExponentialScaled { s, r }, 1.0)
    }
    pub fn identity() -> Self {
        Self { kind: Kind::Identity, scale: 1.0 }
    }

    /// Same kind with a different multiplier.
    pub fn scaled(self, scale: f64) -> Result<Self> {
        Self::new(self.kind, scale)
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// True when output component `i` depends only on input component `i`.
    pub fn is_componentwise(&self) -> bool {
        matches!(
            self.kind,
            Kind::Signum | Kind::ComponentwisePower { .. } | Kind::ExponentialL1 | Kind::Identity
        ) || self.kind == Kind::NormSubgradient { r: 1.0 }
    }

    /// True when `g(y) ∈ span{y}` for every `y`.
    pub fn is_span_preserving(&self) -> bool {
        match self.kind {
            Kind::Identity | Kind::ExponentialL2 => true,
            Kind::NormSubgradient { r } => r == 2.0,
            Kind::Rescaled { r, .. } | Kind::Power { r, .. } => r == 2.0,
            Kind::ExponentialScaled { r, .. } => r == 2.0,
            _ => false,
        }
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        self.eval_regularized(y, 0.0)
    }

    /// Evaluates with `sign(z)` replaced by `z / (|z| + eps)` in the
    /// discontinuous kinds. `eps = 0` is the exact map.
    pub fn eval_regularized(&self, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let mut out = self.raw(y, eps);
        if self.scale != 1.0 {
            out *= self.scale;
        }
        out
    }

    fn raw(&self, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let n = y.len();
        match self.kind {
            Kind::Identity => y.clone(),
            Kind::Signum => y.map(|v| soft_sign(v, eps)),
            Kind::NormSubgradient { r } => norm_subgradient(y, r, eps),
            Kind::Rescaled { p, r } => {
                let nr = norm_r(y, r);
                if nr == 0.0 {
                    return DVector::zeros(n);
                }
                let denom = if p == 0.0 { nr + eps } else { nr.powf(1.0 - p) };
                y / denom
            }
            Kind::Power { q, r } => {
                let nr = norm_r(y, r);
                y * nr.powf(q - 1.0)
            }
            Kind::ComponentwisePower { alpha } => {
                if alpha == 0.0 {
                    y.map(|v| soft_sign(v, eps))
                } else if alpha == 1.0 {
                    y.clone()
                } else {
                    y.map(|v| sign(v) * v.abs().powf(alpha))
                }
            }
            Kind::ExponentialL2 => {
                let nr = y.norm();
                if nr == 0.0 {
                    return DVector::zeros(n);
                }
                y * (nr.exp() / (nr + eps))
            }
            Kind::ExponentialL1 => y.map(|v| soft_sign(v, eps) * v.abs().exp()),
            Kind::ExponentialScaled { s, r } => {
                let factor = norm_r(y, s).exp_m1();
                norm_subgradient(y, r, 0.0) * factor
            }
        }
    }

    /// Lower/upper class constants of this single term in dimension `n`.
    pub fn class_constants(&self, n: usize) -> ClassConstants {
        let nf = n as f64;
        let c = self.scale;
        match self.kind {
            Kind::Signum => ClassConstants::Lower { p: 0.0, sigma: c },
            Kind::NormSubgradient { r } => {
                let sigma = if r <= 2.0 { 1.0 } else { nf.powf(inv(r) - 0.5) };
                ClassConstants::Lower { p: 0.0, sigma: c * sigma }
            }
            Kind::Rescaled { p, r } => {
                let sigma = if r <= 2.0 { nf.powf((1.0 - p) / 2.0 - (1.0 - p) / r) } else { 1.0 };
                ClassConstants::Lower { p, sigma: c * sigma }
            }
            Kind::Power { q, r } => {
                let rho = if r <= 2.0 { 1.0 } else { nf.powf((q - 1.0) * (inv(r) - 0.5)) };
                ClassConstants::Upper { q, rho: c * rho }
            }
            Kind::ComponentwisePower { alpha } => {
                if alpha < 1.0 {
                    ClassConstants::Lower { p: alpha, sigma: c }
                } else if alpha > 1.0 {
                    ClassConstants::Upper { q: alpha, rho: c * nf.powf(1.0 - (alpha + 1.0) / 2.0) }
                } else {
                    ClassConstants::Linear { coefficient: c }
                }
            }
            Kind::Identity => ClassConstants::Linear { coefficient: c },
            Kind::ExponentialL2 | Kind::ExponentialL1 => ClassConstants::GlobalBound,
            Kind::ExponentialScaled { .. } => ClassConstants::Untabulated,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 1.0 {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}*{}", self.scale, self.kind)
        }
    }
}

fn inv(r: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        1.0 / r
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn soft_sign(v: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        v / (v.abs() + eps)
    } else {
        sign(v)
    }
}

fn norm_subgradient(y: &DVector<f64>, r: f64, eps: f64) -> DVector<f64> {
    let n = y.len();
    if r == 1.0 {
        return y.map(|v| soft_sign(v, eps));
    }
    let m = y.amax();
    if m == 0.0 {
        return DVector::zeros(n);
    }
    // homogeneous of degree zero, so work with y / max|y| to avoid overflow
    let mut out = if r.is_infinite() {
        let k = y.iter().position(|v| v.abs() == m).unwrap_or(0);
        let mut e = DVector::zeros(n);
        e[k] = sign(y[k]);
        e
    } else {
        let u = y / m;
        let nr = norm_r(&u, r);
        let d = nr.powf(r - 1.0);
        u.map(|v| sign(v) * v.abs().powf(r - 1.0) / d)
    };
    if eps > 0.0 {
        let nr = norm_r(y, r);
        out *= nr / (nr + eps);
    }
    out
}

/// Class membership of a protocol term: `gᵀy ≥ σ‖y‖₂^{1+p}` (lower) or
/// `gᵀy ≥ ρ‖y‖₂^{1+q}` (upper).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ClassConstants {
    Lower { p: f64, sigma: f64 },
    Upper { q: f64, rho: f64 },
    /// `gᵀy = c‖y‖₂²`; exponential convergence only.
    Linear { coefficient: f64 },
    /// Exponential kinds: covered by a global `1/(αμ)` bound instead of class constants.
    GlobalBound,
    /// No closed-form constants; establish membership by sampling.
    Untabulated,
}

impl ClassConstants {
    /// `(exponent, coefficient)` for the lower/upper classes.
    pub fn pair(&self) -> Option<(f64, f64)> {
        match *self {
            ClassConstants::Lower { p, sigma } => Some((p, sigma)),
            ClassConstants::Upper { q, rho } => Some((q, rho)),
            _ => None,
        }
    }
}

/// `(p, σ, q, ρ)` for a two-sided fixed-time protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FxtConstants {
    pub p: f64,
    pub sigma: f64,
    pub q: f64,
    pub rho: f64,
}

/// `g = Σ terms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Protocol>", into = "Vec<Protocol>")]
pub struct ProtocolSum {
    terms: Vec<Protocol>,
}

impl TryFrom<Vec<Protocol>> for ProtocolSum {
    type Error = Error;
    fn try_from(terms: Vec<Protocol>) -> Result<Self> {
        ProtocolSum::new(terms)
    }
}

impl From<ProtocolSum> for Vec<Protocol> {
    fn from(s: ProtocolSum) -> Self {
        s.terms
    }
}

impl From<Protocol> for ProtocolSum {
    fn from(p: Protocol) -> Self {
        Self { terms: vec![p] }
    }
}

impl ProtocolSum {
    pub fn new(terms: Vec<Protocol>) -> Result<Self> {
        if terms.is_empty() {
            return Err(validation("protocol sum needs at least one term"));
        }
        Ok(Self { terms })
    }

    /// `g_p + g_q`.
    pub fn pair(gp: Protocol, gq: Protocol) -> Self {
        Self { terms: vec![gp, gq] }
    }

    pub fn terms(&self) -> &[Protocol] {
        &self.terms
    }

    pub fn is_componentwise(&self) -> bool {
        self.terms.iter().all(Protocol::is_componentwise)
    }

    pub fn is_span_preserving(&self) -> bool {
        self.terms.iter().all(Protocol::is_span_preserving)
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        self.eval_regularized(y, 0.0)
    }

    pub fn eval_regularized(&self, y: &DVector<f64>, eps: f64) -> DVector<f64> {
        let mut it = self.terms.iter();
        let mut out = it.next().map(|t| t.eval_regularized(y, eps)).unwrap_or_else(|| DVector::zeros(y.len()));
        for t in it {
            out += t.eval_regularized(y, eps);
        }
        out
    }

    /// Combined `(p, σ, q, ρ)`: terms of the same class and exponent add
    /// their coefficients; when several exponents appear, the first listed
    /// term of each class is used.
    pub fn fxt_constants(&self, n: usize) -> Result<FxtConstants> {
        let mut lower: Option<(f64, f64)> = None;
        let mut upper: Option<(f64, f64)> = None;
        for t in &self.terms {
            match t.class_constants(n) {
                ClassConstants::Lower { p, sigma } => match &mut lower {
                    None => lower = Some((p, sigma)),
                    Some((p0, s0)) if *p0 == p => *s0 += sigma,
                    _ => {}
                },
                ClassConstants::Upper { q, rho } => match &mut upper {
                    None => upper = Some((q, rho)),
                    Some((q0, r0)) if *q0 == q => *r0 += rho,
                    _ => {}
                },
                _ => {}
            }
        }
        match (lower, upper) {
            (Some((p, sigma)), Some((q, rho))) => Ok(FxtConstants { p, sigma, q, rho }),
            _ => Err(validation(format!(
                "protocol {self} lacks a tabulated lower (p < 1) and upper (q > 1) term"
            ))),
        }
    }
}

impl fmt::Display for ProtocolSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Outcome of a sampled class-membership check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub pass: bool,
    /// Smallest `gᵀy / (c‖y‖₂^{1+e}) − 1` over all samples.
    pub worst_margin: f64,
    pub worst_sample: Vec<f64>,
    pub samples: usize,
}

/// Samples nonzero `y` and checks `g(y)ᵀy ≥ coef·‖y‖₂^{1+exponent}·(1 − 1e-9)`.
///
/// Coordinate axes and the all-ones direction are always probed in addition
/// to `samples` random draws (half uniform on `[−10,10]ⁿ`, half with
/// magnitudes log-uniform down to `1e-8`).
pub fn verify_class_membership(
    g: &ProtocolSum,
    exponent: f64,
    coef: f64,
    n: usize,
    samples: usize,
    seed: u64,
) -> MembershipReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    probes.push(DVector::from_element(n, 1.0));
    let mut worst = f64::INFINITY;
    let mut worst_y = Vec::new();
    let mut check = |y: &DVector<f64>| {
        let ny = y.norm();
        if ny == 0.0 {
            return;
        }
        let lhs = g.eval(y).dot(y);
        let rhs = coef * ny.powf(1.0 + exponent);
        let margin = lhs / rhs - 1.0;
        if margin < worst || worst_y.is_empty() {
            worst = margin;
            worst_y = y.iter().copied().collect();
        }
    };
    for y in &probes {
        check(y);
    }
    for k in 0..samples {
        let y = if k % 2 == 0 {
            DVector::from_fn(n, |_, _| rng.random_range(-10.0..=10.0))
        } else {
            let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
            let mag = 10f64.powf(rng.random_range(-8.0..=1.0));
            match dir.norm() {
                d if d > 0.0 => dir * (mag / d),
                _ => continue,
            }
        };
        check(&y);
    }
    MembershipReport { pass: worst >= -1e-9, worst_margin: worst, worst_sample: worst_y, samples: samples + probes.len() }
}

/// Both sides of the exponential-protocol lower bounds at `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialBounds {
    /// `(yᵀ g_{e,2}(y), ‖y‖₂^{k+1} / k!)`
    pub l2: (f64, f64),
    /// `(Σ|yᵢ| e^{|yᵢ|}, (‖y‖₂/√n) e^{‖y‖₂/√n})`
    pub l1: (f64, f64),
}

pub fn exponential_lower_bounds(y: &DVector<f64>, k: u32) -> Result<ExponentialBounds> {
    if k == 0 {
        return Err(validation("k must be at least 1"));
    }
    let ny = y.norm();
    let fact: f64 = (1..=k).map(f64::from).product();
    let l2 = (ny * ny.exp(), ny.powi(k as i32 + 1) / fact);
    let l2 = if ny == 0.0 { (0.0, 0.0) } else { l2 };
    let m = ny / (y.len() as f64).sqrt();
    let l1 = (y.iter().map(|v| v.abs() * v.abs().exp()).sum(), if ny == 0.0 { 0.0 } else { m * m.exp() });
    Ok(ExponentialBounds { l2, l1 })
}

/// Every term kind with tabulated constants,
/// over a representative parameter grid.
pub fn tabulated_catalog() -> Vec<Protocol> {
    let mut out = vec![Protocol::signum()];
    for r in [1.0, 1.5, 2.0, 3.0, 4.0, f64::INFINITY] {
        out.push(Protocol::norm_subgradient(r).unwrap());
    }
    for p in [0.0, 0.25, 0.5, 0.8] {
        for r in [1.0, 1.5, 2.0, 3.0, 4.0] {
            out.push(Protocol::rescaled(p, r).unwrap());
        }
    }
    for q in [1.5, 2.0, 3.0] {
        for r in [1.0, 1.5, 2.0, 3.0, 4.0] {
            out.push(Protocol::power(q, r).unwrap());
        }
    }
    for a in [0.0, 0.3, 0.5, 0.9, 1.5, 2.0, 3.0] {
        out.push(Protocol::componentwise_power(a).unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn eval_examples() {
        let g = Protocol::rescaled(0.0, 2.0).unwrap();
        assert!(close(&g.eval(&dvector![3.0, 4.0]), &dvector![0.6, 0.8], 1e-15));
        let g = Protocol::componentwise_power(0.5).unwrap();
        assert!(close(&g.eval(&dvector![4.0, -9.0]), &dvector![2.0, -3.0], 1e-15));
        let g = Protocol::exponential_l2();
        assert!(close(&g.eval(&dvector![1.0, 0.0]), &dvector![std::f64::consts::E, 0.0], 1e-15));
    }

    #[test]
    fn every_kind_vanishes_at_zero() {
        let z = DVector::zeros(3);
        let mut all = tabulated_catalog();
        all.extend([
            Protocol::exponential_l1(),
            Protocol::exponential_l2(),
            Protocol::exponential_scaled(1.0, 2.0).unwrap(),
            Protocol::identity(),
        ]);
        for g in all {
            assert_eq!(g.eval(&z), z, "{g}");
            assert_eq!(g.eval_regularized(&z, 1e-3), z, "{g}");
        }
    }

    #[test]
    fn infinity_subgradient_ties_take_lowest_index() {
        let g = Protocol::norm_subgradient(f64::INFINITY).unwrap();
        assert_eq!(g.eval(&dvector![1.0, -3.0, 3.0]), dvector![0.0, -1.0, 0.0]);
    }

    #[test]
    fn norm_subgradient_matches_formula() {
        let g = Protocol::norm_subgradient(3.0).unwrap();
        let y = dvector![1.0, -2.0, 0.5];
        let n3 = norm_r(&y, 3.0);
        let expect = y.map(|v| v.signum() * v.abs().powi(2) / n3.powi(2));
        assert!(close(&g.eval(&y), &expect, 1e-14));
        assert!((g.eval(&y).dot(&y) - n3).abs() < 1e-12);
    }

    #[test]
    fn exponential_scaled_sum_is_table_form() {
        let base = Protocol::norm_subgradient(2.0).unwrap();
        let extra = Protocol::exponential_scaled(1.0, 2.0).unwrap();
        let g = ProtocolSum::pair(base, extra);
        let y = dvector![0.3, -0.4];
        let expect = &y / 0.5 * (0.7f64).exp();
        assert!(close(&g.eval(&y), &expect, 1e-14));
    }

    #[test]
    fn class_constants_examples() {
        assert_eq!(Protocol::signum().class_constants(7), ClassConstants::Lower { p: 0.0, sigma: 1.0 });
        assert_eq!(
            Protocol::power(2.5, 2.0).unwrap().class_constants(9),
            ClassConstants::Upper { q: 2.5, rho: 1.0 }
        );
        match Protocol::componentwise_power(3.0).unwrap().class_constants(4) {
            ClassConstants::Upper { q, rho } => {
                assert_eq!(q, 3.0);
                assert!((rho - 0.25).abs() < 1e-15);
            }
            c => panic!("{c:?}"),
        }
        assert_eq!(Protocol::exponential_l1().class_constants(3), ClassConstants::GlobalBound);
        let g = Protocol::signum().scaled(3.0).unwrap();
        assert_eq!(g.class_constants(2), ClassConstants::Lower { p: 0.0, sigma: 3.0 });
    }

    #[test]
    fn membership_examples() {
        let s: ProtocolSum = Protocol::signum().into();
        assert!(verify_class_membership(&s, 0.0, 1.0, 5, 2000, 1).pass);
        let r: ProtocolSum = Protocol::rescaled(0.5, 2.0).unwrap().into();
        assert!(verify_class_membership(&r, 0.5, 1.0, 3, 2000, 2).pass);
        let bad = verify_class_membership(&s, 0.0, 3.0, 2, 100, 3);
        assert!(!bad.pass);
        assert!(bad.worst_margin < -0.5);
    }

    #[test]
    fn membership_tabulated_small() {
        for g in tabulated_catalog() {
            for n in [1, 3, 8] {
                if let Some((e, c)) = g.class_constants(n).pair() {
                    let rep = verify_class_membership(&g.into(), e, c, n, 500, 11);
                    assert!(rep.pass, "{g} n={n} margin={}", rep.worst_margin);
                }
            }
        }
    }

    #[test]
    fn fxt_constants_of_pair() {
        let g = ProtocolSum::pair(
            Protocol::rescaled(0.0, 2.0).unwrap().scaled(3.0).unwrap(),
            Protocol::power(2.0, 2.0).unwrap().scaled(3.0).unwrap(),
        );
        assert_eq!(g.fxt_constants(2).unwrap(), FxtConstants { p: 0.0, sigma: 3.0, q: 2.0, rho: 3.0 });
        let lone: ProtocolSum = Protocol::signum().into();
        assert!(lone.fxt_constants(2).is_err());
    }

    #[test]
    fn exponential_bound_examples() {
        let b = exponential_lower_bounds(&dvector![1.0, 0.0], 1).unwrap();
        assert!((b.l2.0 - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(b.l2.1, 1.0);
        let b = exponential_lower_bounds(&dvector![0.0, 0.0], 3).unwrap();
        assert_eq!((b.l2, b.l1), ((0.0, 0.0), (0.0, 0.0)));
        let b = exponential_lower_bounds(&dvector![1.0, 1.0], 1).unwrap();
        assert!((b.l1.0 - 2.0 * std::f64::consts::E).abs() < 1e-14);
        assert!((b.l1.1 - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn parameter_validation() {
        assert!(Protocol::rescaled(1.0, 2.0).is_err());
        assert!(Protocol::power(1.0, 2.0).is_err());
        assert!(Protocol::rescaled(0.5, f64::INFINITY).is_err());
        assert!(Protocol::norm_subgradient(0.5).is_err());
        assert!(Protocol::componentwise_power(-0.1).is_err());
        assert!(Protocol::signum().scaled(0.0).is_err());
        assert!(ProtocolSum::new(vec![]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let g: Protocol = toml::from_str("kind = \"componentwise_power\"\nalpha = 1.5\nscale = 3.0\n").unwrap();
        assert_eq!(g, Protocol::componentwise_power(1.5).unwrap().scaled(3.0).unwrap());
        let g: Protocol = serde_json::from_str(r#"{"kind":"signum"}"#).unwrap();
        assert_eq!(g.scale(), 1.0);
        assert!(serde_json::from_str::<Protocol>(r#"{"kind":"power","q":0.5,"r":2}"#).is_err());
        let s = ProtocolSum::pair(Protocol::signum(), Protocol::identity());
        let back: ProtocolSum = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn structural_predicates() {
        assert!(Protocol::signum().is_componentwise());
        assert!(Protocol::norm_subgradient(1.0).unwrap().is_componentwise());
        assert!(!Protocol::rescaled(0.0, 2.0).unwrap().is_componentwise());
        assert!(Protocol::rescaled(0.0, 2.0).unwrap().is_span_preserving());
        assert!(!Protocol::componentwise_power(0.5).unwrap().is_span_preserving());
    }

    #[test]
    fn regularized_signum_is_smooth() {
        let g = Protocol::signum();
        let y = dvector![1e-3, -1e-3];
        let out = g.eval_regularized(&y, 1e-3);
        assert!(close(&out, &dvector![0.5, -0.5], 1e-15));
    }

    fn any_protocol() -> impl Strategy<Value = Protocol> {
        let mut all = tabulated_catalog();
        all.extend([
            Protocol::exponential_l1(),
            Protocol::exponential_l2(),
            Protocol::exponential_scaled(1.5, 2.0).unwrap(),
            Protocol::identity(),
        ]);
        proptest::sample::select(all)
    }

    fn any_vec() -> impl Strategy<Value = DVector<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 1..8).prop_map(DVector::from_vec)
    }

    proptest! {
        #[test]
        fn eval_is_odd(g in any_protocol(), y in any_vec()) {
            prop_assert_eq!(g.eval(&(-&y)), -g.eval(&y));
        }

        #[test]
        fn eval_preserves_sign(g in any_protocol(), y in any_vec(), c in 0.01f64..100.0) {
            let out = g.eval(&y);
            for i in 0..y.len() {
                prop_assert!(out[i].signum() * y[i].signum() >= 0.0 || out[i] == 0.0);
            }
            if y.norm() > 0.0 {
                prop_assert!(out.dot(&y) > 0.0);
            }
            let scaled = g.eval(&(&y * c));
            for i in 0..y.len() {
                let a = if out[i] == 0.0 { 0.0 } else { out[i].signum() };
                let b = if scaled[i] == 0.0 { 0.0 } else { scaled[i].signum() };
                // componentwise selections may vanish but never flip
                prop_assert!(a * b >= 0.0);
            }
        }

        #[test]
        fn norm_sandwich(y in any_vec(), i in 0usize..6, j in 0usize..6) {
            let rs = [1.0, 1.5, 2.0, 3.0, 4.0, f64::INFINITY];
            let (s, r) = if rs[i] < rs[j] { (rs[i], rs[j]) } else { (rs[j], rs[i]) };
            prop_assume!(r > s);
            let n = y.len() as f64;
            let nr = norm_r(&y, r);
            let ns = norm_r(&y, s);
            prop_assert!(nr <= ns * (1.0 + 1e-12));
            prop_assert!(ns <= n.powf(1.0 / s - inv(r)) * nr * (1.0 + 1e-12));
        }
    }
}
