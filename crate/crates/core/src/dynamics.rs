//! Fixed-step Euler integration of (possibly discontinuous) flows with
//! disturbance injection and settling detection.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::objective::{Objective, Trajectory, VectorFn};

/// Right-hand side `u(x, t)` of `ẋ = u(x, t)`.
///
/// `smoothing` is the chatter regularization: discontinuous sign terms are
/// evaluated as `z / (|z| + smoothing)` when it is positive.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &DVector<f64>, t: f64, smoothing: f64) -> Result<DVector<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(&DVector<f64>, f64, f64) -> Result<DVector<f64>> + Send + Sync,
{
    fn eval(&self, x: &DVector<f64>, t: f64, smoothing: f64) -> Result<DVector<f64>> {
        self(x, t, smoothing)
    }
}

/// Unit direction used by [`DisturbanceKind::StateScaledPlusBounded`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRule {
    /// `(sin t, cos t, 0, …)`; `sin t` alone in one dimension.
    Rotating,
    /// A fixed direction, normalized at construction.
    Fixed(Vec<f64>),
}

pub type DisturbanceFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum DisturbanceKind {
    None,
    /// `amplitude · sin(frequency · t)`
    Sinusoid { amplitude: DVector<f64>, frequency: f64 },
    /// `(ε‖x − [x]*‖₂ + d̄) · u(t)`
    StateScaledPlusBounded { direction: DirectionRule },
    Custom(DisturbanceFn),
}

impl fmt::Debug for DisturbanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisturbanceKind::None => write!(f, "None"),
            DisturbanceKind::Sinusoid { amplitude, frequency } => f
                .debug_struct("Sinusoid")
                .field("amplitude", &amplitude.as_slice())
                .field("frequency", frequency)
                .finish(),
            DisturbanceKind::StateScaledPlusBounded { direction } => {
                f.debug_struct("StateScaledPlusBounded").field("direction", direction).finish()
            }
            DisturbanceKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Additive perturbation `d(x, t)` with envelope `‖d‖₂ ≤ ε‖x − [x]*‖₂ + d̄`.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    kind: DisturbanceKind,
    epsilon: f64,
    dbar: f64,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self::none()
    }
}

impl DisturbanceModel {
    pub fn none() -> Self {
        Self { kind: DisturbanceKind::None, epsilon: 0.0, dbar: 0.0 }
    }

    pub fn sinusoid(amplitude: DVector<f64>, frequency: f64) -> Result<Self> {
        if amplitude.iter().any(|a| !a.is_finite()) || !frequency.is_finite() {
            return Err(validation("sinusoid parameters must be finite"));
        }
        let dbar = amplitude.norm();
        Ok(Self { kind: DisturbanceKind::Sinusoid { amplitude, frequency }, epsilon: 0.0, dbar })
    }

    pub fn state_scaled_plus_bounded(epsilon: f64, dbar: f64, direction: DirectionRule) -> Result<Self> {
        check_envelope(epsilon, dbar)?;
        let direction = match direction {
            DirectionRule::Fixed(v) => {
                let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(validation("fixed disturbance direction must be a nonzero finite vector"));
                }
                DirectionRule::Fixed(v.iter().map(|a| a / n).collect())
            }
            r => r,
        };
        Ok(Self { kind: DisturbanceKind::StateScaledPlusBounded { direction }, epsilon, dbar })
    }

    /// User-supplied disturbance with a declared envelope `(ε, d̄)`.
    pub fn custom(
        f: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        epsilon: f64,
        dbar: f64,
    ) -> Result<Self> {
        check_envelope(epsilon, dbar)?;
        Ok(Self { kind: DisturbanceKind::Custom(Arc::new(f)), epsilon, dbar })
    }

    pub fn kind(&self) -> &DisturbanceKind {
        &self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dbar(&self) -> f64 {
        self.dbar
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, DisturbanceKind::None)
    }

    pub fn needs_minimizer_projection(&self) -> bool {
        matches!(self.kind, DisturbanceKind::StateScaledPlusBounded { .. })
    }

    /// `d(x, t)`; `projection` computes `[x]*` and is required by the
    /// state-scaled kind.
    pub fn eval(&self, x: &DVector<f64>, t: f64, projection: Option<&VectorFn>) -> Result<DVector<f64>> {
        let n = x.len();
        match &self.kind {
            DisturbanceKind::None => Ok(DVector::zeros(n)),
            DisturbanceKind::Sinusoid { amplitude, frequency } => {
                if amplitude.len() != n {
                    return Err(Error::Configuration(format!(
                        "disturbance amplitude has length {} but the state has {n}",
                        amplitude.len()
                    )));
                }
                Ok(amplitude * (frequency * t).sin())
            }
            DisturbanceKind::StateScaledPlusBounded { direction } => {
                let proj = projection.ok_or_else(|| {
                    Error::Configuration("state-scaled disturbance requires a minimizer projection".into())
                })?;
                let mag = self.epsilon * (x - proj(x)).norm() + self.dbar;
                let mut u = DVector::zeros(n);
                match direction {
                    DirectionRule::Rotating => {
                        u[0] = t.sin();
                        if n > 1 {
                            u[1] = t.cos();
                        }
                    }
                    DirectionRule::Fixed(v) => {
                        if v.len() != n {
                            return Err(Error::Configuration(format!(
                                "disturbance direction has length {} but the state has {n}",
                                v.len()
                            )));
                        }
                        u.copy_from_slice(v);
                    }
                }
                Ok(u * mag)
            }
            DisturbanceKind::Custom(f) => Ok(f(x, t)),
        }
    }
}

fn check_envelope(epsilon: f64, dbar: f64) -> Result<()> {
    if !(epsilon >= 0.0 && dbar >= 0.0 && epsilon.is_finite() && dbar.is_finite()) {
        return Err(validation(format!("disturbance envelope must be nonnegative, got eps={epsilon}, dbar={dbar}")));
    }
    Ok(())
}

/// Integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub settle_tol: f64,
    pub chatter_regularization: f64,
    pub record_stride: usize,
    pub seed: u64,
    /// Caps each Euler displacement at `max_step_norm · (1 + ‖x‖₂)` by
    /// splitting the step. Recorded samples stay on the `dt` grid.
    pub max_step_norm: Option<f64>,
    /// Stop once settled when there is no disturbance.
    pub stop_on_settle: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_max: 10.0,
            settle_tol: 1e-6,
            chatter_regularization: 0.0,
            record_stride: 1,
            seed: 0,
            max_step_norm: None,
            stop_on_settle: true,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self { dt, t_max, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(validation(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.dt > self.t_max {
            return Err(validation("dt exceeds t_max"));
        }
        if !(self.settle_tol > 0.0) {
            return Err(validation("settle_tol must be positive"));
        }
        if !(self.chatter_regularization >= 0.0) {
            return Err(validation("chatter_regularization must be nonnegative"));
        }
        if self.record_stride == 0 || self.record_stride as f64 * self.dt > self.t_max * (1.0 + 1e-12) {
            return Err(validation("record_stride must be positive with record_stride*dt <= t_max"));
        }
        if let Some(c) = self.max_step_norm {
            if !(c > 0.0) {
                return Err(validation("max_step_norm must be positive"));
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt).round().max(1.0) as usize
    }
}

/// Quantity compared against `settle_tol` to detect settling.
#[derive(Clone, Default)]
pub enum SettleMetric {
    /// `‖∇f(x)‖₂`
    #[default]
    GradientNorm,
    /// `‖Pᵀ∇f(x)‖₂` for projected flows.
    ProjectedGradient(DMatrix<f64>),
    /// `‖x − x*‖₂` against a known solution.
    DistanceTo(DVector<f64>),
    Custom(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl fmt::Debug for SettleMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettleMetric::GradientNorm => write!(f, "GradientNorm"),
            SettleMetric::ProjectedGradient(_) => write!(f, "ProjectedGradient(..)"),
            SettleMetric::DistanceTo(_) => write!(f, "DistanceTo(..)"),
            SettleMetric::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl SettleMetric {
    pub fn eval(&self, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        match self {
            SettleMetric::GradientNorm => grad.norm(),
            SettleMetric::ProjectedGradient(p) => p.tr_mul(grad).norm(),
            SettleMetric::DistanceTo(xs) => (x - xs).norm(),
            SettleMetric::Custom(f) => f(x),
        }
    }
}

/// A trajectory together with the settle metric at each recorded sample.
#[derive(Debug, Clone)]
pub struct Run {
    pub trajectory: Trajectory,
    pub residuals: Vec<f64>,
}

/// Euler integration of `ẋ = rhs(x, t) + d(x, t)`, settling on `‖∇f‖₂`.
pub fn integrate(
    rhs: &dyn VectorField,
    x0: &DVector<f64>,
    obj: &Objective,
    dist: &DisturbanceModel,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    Ok(integrate_with_metric(rhs, x0, obj, dist, cfg, &SettleMetric::GradientNorm)?.trajectory)
}

pub fn integrate_with_metric(
    rhs: &dyn VectorField,
    x0: &DVector<f64>,
    obj: &Objective,
    dist: &DisturbanceModel,
    cfg: &IntegratorConfig,
    metric: &SettleMetric,
) -> Result<Run> {
    cfg.validate()?;
    if x0.len() != obj.dim() {
        return Err(validation(format!("x0 has length {} but the objective has dimension {}", x0.len(), obj.dim())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(validation("x0 must be finite"));
    }
    let projection = obj.projection_fn();
    if dist.needs_minimizer_projection() && projection.is_none() {
        return Err(Error::Configuration(
            "state-scaled disturbance requires an objective with a minimizer projection".into(),
        ));
    }
    let disturbed = !dist.is_none();
    let steps = cfg.steps();
    let cap = cfg.max_step_norm;
    let eps = cfg.chatter_regularization;

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut costs = Vec::new();
    let mut grad_norms = Vec::new();
    let mut residuals = Vec::new();
    let mut settled: Option<f64> = None;

    let mut record = |t: f64, x: &DVector<f64>, settled: &mut Option<f64>| {
        let g = obj.gradient(x);
        let res = metric.eval(x, &g);
        times.push(t);
        states.push(x.clone());
        costs.push(obj.value(x));
        grad_norms.push(g.norm());
        residuals.push(res);
        if settled.is_none() && res <= cfg.settle_tol {
            *settled = Some(t);
        }
    };

    let mut x = x0.clone();
    record(0.0, &x, &mut settled);
    let stop = |settled: &Option<f64>| settled.is_some() && cfg.stop_on_settle && !disturbed;

    if !stop(&settled) {
        for k in 0..steps {
            let t0 = k as f64 * cfg.dt;
            let mut tc = t0;
            let mut rem = cfg.dt;
            while rem > cfg.dt * 1e-12 {
                let mut v = rhs.eval(&x, tc, eps)?;
                if disturbed {
                    v += dist.eval(&x, tc, projection.as_ref())?;
                }
                let mut h = rem;
                if let Some(c) = cap {
                    let lim = c * (1.0 + x.norm());
                    let nv = v.norm();
                    if h * nv > lim {
                        h = lim / nv;
                    }
                }
                x.axpy(h, &v, 1.0);
                tc += h;
                rem -= h;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { time: tc });
                }
            }
            let last = k + 1 == steps;
            if (k + 1) % cfg.record_stride == 0 || last {
                record((k + 1) as f64 * cfg.dt, &x, &mut settled);
                if stop(&settled) {
                    break;
                }
            }
        }
    }
    let trajectory = Trajectory::new(times, states, costs, grad_norms, settled)?;
    Ok(Run { trajectory, residuals })
}

/// First sampled time with `grad_norm ≤ tol`.
pub fn measure_settling(traj: &Trajectory, tol: f64) -> Option<f64> {
    first_below(&traj.times, &traj.grad_norms, tol)
}

/// First time at which `values ≤ tol`.
pub fn first_below(times: &[f64], values: &[f64], tol: f64) -> Option<f64> {
    times.iter().zip(values).find(|(_, v)| **v <= tol).map(|(t, _)| *t)
}

/// First time after which `values ≤ tol` holds for every remaining sample.
pub fn settled_for_good(times: &[f64], values: &[f64], tol: f64) -> Option<f64> {
    let k = values.iter().rposition(|v| *v > tol).map_or(0, |i| i + 1);
    times.get(k).copied()
}

/// Outcome of the robust-flow sufficient condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustCondition {
    pub k1: f64,
    pub k2: f64,
    pub pass: bool,
    /// `k₂ = 0`: the condition holds only with an infinite bound.
    pub marginal: bool,
    /// `1/(μk₁) + 1/(μk₂(q−1))`; infinite when `k₂ = 0`, `None` when `k₁ ≤ 0`.
    pub bound: Option<f64>,
}

/// `k₁ = σ − d̄ − m·ε/(2√μ)`, `k₂ = ρ − m·ε/(2√μ)` with safety multiplier `m`.
pub fn robust_condition_check(
    sigma: f64,
    rho: f64,
    q: f64,
    dist: &DisturbanceModel,
    mu: f64,
    safety_multiplier: f64,
) -> Result<RobustCondition> {
    robust_condition_from_envelope(sigma, rho, q, dist.epsilon(), dist.dbar(), mu, safety_multiplier)
}

pub fn robust_condition_from_envelope(
    sigma: f64,
    rho: f64,
    q: f64,
    epsilon: f64,
    dbar: f64,
    mu: f64,
    safety_multiplier: f64,
) -> Result<RobustCondition> {
    if !(mu > 0.0) {
        return Err(validation(format!("mu must be positive, got {mu}")));
    }
    if !(q > 1.0) {
        return Err(validation(format!("q must exceed 1, got {q}")));
    }
    if !(safety_multiplier > 0.0) {
        return Err(validation("safety multiplier must be positive"));
    }
    let shift = safety_multiplier * epsilon / (2.0 * mu.sqrt());
    let k1 = sigma - dbar - shift;
    let k2 = rho - shift;
    let pass = k1 > 0.0 && k2 >= 0.0;
    let marginal = pass && k2 == 0.0;
    let bound = if k1 > 0.0 && k2 >= 0.0 {
        Some(if k2 == 0.0 { f64::INFINITY } else { 1.0 / (mu * k1) + 1.0 / (mu * k2 * (q - 1.0)) })
    } else {
        None
    };
    Ok(RobustCondition { k1, k2, pass, marginal, bound })
}

/// Size of the residual band that explicit Euler chatters in: a term of
/// magnitude `magnitude·‖y‖^p` moves the gradient by about `dt·L·magnitude·‖y‖^p`
/// per step, which overshoots once `‖y‖ < (2·dt·L·magnitude)^{1/(1−p)}`.
pub fn chatter_floor(dt: f64, lipschitz: f64, magnitude: f64, p: f64) -> f64 {
    (2.0 * dt * lipschitz * magnitude).powf(1.0 / (1.0 - p))
}
