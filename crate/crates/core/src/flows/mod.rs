//! Right-hand sides for every gradient-flow variant.

mod config;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{robust_condition_check, DisturbanceModel, RobustCondition, VectorField};
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::objective::Objective;
use crate::protocols::{ClassConstants, Protocol, ProtocolSum};
use crate::proximal::{fb_residual_unchecked, ProxFunction};

pub use config::{FlowSpec, LinearConstraint};

/// Pivot tolerance for Hessian solves.
pub const HESSIAN_PIVOT_TOL: f64 = 1e-12;

pub type FieldFn = Arc<dyn Fn(&DVector<f64>, f64, f64) -> Result<DVector<f64>> + Send + Sync>;

/// A named vector field, optionally carrying the robust-condition verdict
/// computed at construction.
#[derive(Clone)]
pub struct Flow {
    name: String,
    dim: usize,
    field: FieldFn,
    robust: Option<RobustCondition>,
}

impl fmt::Debug for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Flow")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("robust", &self.robust)
            .finish()
    }
}

impl Flow {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        field: impl Fn(&DVector<f64>, f64, f64) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, field: Arc::new(field), robust: None }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn robust_condition(&self) -> Option<&RobustCondition> {
        self.robust.as_ref()
    }

    pub fn eval(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        (self.field)(x, t, 0.0)
    }

    /// Pointwise sum of two flows on the same space.
    pub fn plus(self, other: Flow) -> Result<Flow> {
        if self.dim != other.dim {
            return Err(validation("cannot add flows of different dimension"));
        }
        let (a, b) = (self.field, other.field);
        Ok(Flow {
            name: format!("{} + {}", self.name, other.name),
            dim: self.dim,
            field: Arc::new(move |x, t, s| Ok(a(x, t, s)? + b(x, t, s)?)),
            robust: self.robust.or(other.robust),
        })
    }
}

impl VectorField for Flow {
    fn eval(&self, x: &DVector<f64>, t: f64, smoothing: f64) -> Result<DVector<f64>> {
        (self.field)(x, t, smoothing)
    }
}

/// `ẋ = −g(∇f(x))`.
pub fn first_order_flow(obj: &Objective, g: ProtocolSum) -> Flow {
    let o = obj.clone();
    Flow::new(format!("first_order[{g}]"), obj.dim(), move |x, _t, s| {
        Ok(-g.eval_regularized(&o.gradient(x), s))
    })
}

/// `ẋ = −g₀(∇f) − g_q(∇f)` with a sliding term `g₀` (`p = 0`).
///
/// When a disturbance model is given the sufficient robustness condition is
/// evaluated with the objective's PL constant and stored on the flow.
pub fn robust_flow(
    obj: &Objective,
    g0: Protocol,
    gq: Protocol,
    disturbance: Option<(&DisturbanceModel, f64)>,
) -> Result<Flow> {
    let n = obj.dim();
    let sigma = match g0.class_constants(n) {
        ClassConstants::Lower { p, sigma } if p == 0.0 => sigma,
        other => {
            return Err(validation(format!(
                "robust flow needs a sliding term with p = 0, got {g0} ({other:?})"
            )))
        }
    };
    let (q, rho) = match gq.class_constants(n) {
        ClassConstants::Upper { q, rho } => (q, rho),
        other => return Err(validation(format!("robust flow needs a q > 1 term, got {gq} ({other:?})"))),
    };
    let robust = match disturbance {
        Some((d, m)) => {
            let mu = obj.pl_mu().ok_or(Error::CertificateMissing("pl_mu"))?;
            Some(robust_condition_check(sigma, rho, q, d, mu, m)?)
        }
        None => None,
    };
    let g = ProtocolSum::pair(g0, gq);
    let mut flow = first_order_flow(obj, g.clone());
    flow.name = format!("robust[{g}]");
    flow.robust = robust;
    Ok(flow)
}

/// `ẋ = −(∇²f(x))⁻¹ g(∇f(x))`.
pub fn newton_flow(obj: &Objective, g: ProtocolSum) -> Result<Flow> {
    if !obj.has_hessian() {
        return Err(Error::CertificateMissing("hessian"));
    }
    let o = obj.clone();
    Ok(Flow::new(format!("newton[{g}]"), obj.dim(), move |x, _t, s| {
        let h = o.hessian(x).expect("checked above");
        let v = g.eval_regularized(&o.gradient(x), s);
        newton_step(&h, &v, x)
    }))
}

fn newton_step(h: &DMatrix<f64>, v: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::spd_solve(h, v, HESSIAN_PIVOT_TOL)
        .map(|d| -d)
        .ok_or_else(|| Error::SingularHessian { state: x.iter().copied().collect() })
}

type TvScalar = Arc<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;
type TvVector = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
type TvMatrix = Arc<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;

/// A family `f(·, t)` with gradient, Hessian and optional `∂∇f/∂t`.
#[derive(Clone)]
pub struct TimeVaryingObjective {
    dim: usize,
    f: TvScalar,
    grad: TvVector,
    hessian: TvMatrix,
    dgrad_dt: Option<TvVector>,
}

impl TimeVaryingObjective {
    /// Step for central time differencing when `∂∇f/∂t` is not supplied.
    pub const TIME_STEP: f64 = 1e-6;

    pub fn new(
        dim: usize,
        f: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        hessian: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(validation("objective dimension must be positive"));
        }
        Ok(Self { dim, f: Arc::new(f), grad: Arc::new(grad), hessian: Arc::new(hessian), dgrad_dt: None })
    }

    pub fn with_time_derivative(mut self, d: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.dgrad_dt = Some(Arc::new(d));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        (self.f)(x, t)
    }

    pub fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.grad)(x, t)
    }

    pub fn hessian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        (self.hessian)(x, t)
    }

    pub fn gradient_time_derivative(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.dgrad_dt {
            Some(d) => d(x, t),
            None => {
                let h = Self::TIME_STEP;
                ((self.grad)(x, t + h) - (self.grad)(x, t - h)) / (2.0 * h)
            }
        }
    }

    /// The objective frozen at time `t`.
    pub fn snapshot(&self, t: f64) -> Result<Objective> {
        let (f, g, h) = (self.f.clone(), self.grad.clone(), self.hessian.clone());
        Ok(Objective::new(self.dim, move |x| f(x, t), move |x| g(x, t))?.with_hessian(move |x| h(x, t)))
    }
}

/// `ẋ = −(∇²f(x,t))⁻¹ (g(∇f(x,t)) + ∂∇f(x,t)/∂t)`.
pub fn time_varying_newton_flow(obj: &TimeVaryingObjective, g: ProtocolSum) -> Flow {
    let o = obj.clone();
    Flow::new(format!("time_varying_newton[{g}]"), obj.dim(), move |x, t, s| {
        let v = g.eval_regularized(&o.gradient(x, t), s) + o.gradient_time_derivative(x, t);
        newton_step(&o.hessian(x, t), &v, x)
    })
}

/// Checks `AP = 0` and `rank(P) = n − rank(A)`.
pub fn check_projection(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<()> {
    let n = a.ncols();
    if p.nrows() != n {
        return Err(Error::InvalidProjection(format!("P has {} rows but A has {n} columns", p.nrows())));
    }
    let ap = linalg::spectral_norm(&(a * p));
    let scale = linalg::spectral_norm(a) * linalg::spectral_norm(p);
    if ap > 1e-10 * scale {
        return Err(Error::InvalidProjection(format!("‖AP‖ = {ap:.3e} is not zero")));
    }
    let (rp, ra) = (linalg::rank(p), linalg::rank(a));
    if rp + ra != n {
        return Err(Error::InvalidProjection(format!("rank(P) = {rp} but n − rank(A) = {}", n - ra)));
    }
    Ok(())
}

fn is_orthogonal_projector(p: &DMatrix<f64>) -> bool {
    p.is_square()
        && linalg::is_symmetric(p, 1e-12)
        && (p * p - p).amax() <= 1e-10 * p.amax().max(1.0)
}

/// `ẋ = −P g(Pᵀ∇f(x))`, keeping `Ax` constant.
///
/// Uses `−g(P∇f)` when `g` is span preserving and `P` is an orthogonal
/// projector. Requires a strong-convexity certificate on `obj`.
pub fn projected_flow(obj: &Objective, a: &DMatrix<f64>, p: DMatrix<f64>, g: ProtocolSum) -> Result<Flow> {
    if obj.strong_convexity().is_none() {
        return Err(Error::CertificateMissing("strong_convexity"));
    }
    if a.ncols() != obj.dim() {
        return Err(validation(format!("A has {} columns but the objective has dimension {}", a.ncols(), obj.dim())));
    }
    check_projection(a, &p)?;
    let o = obj.clone();
    let name = format!("projected[{g}]");
    if g.is_span_preserving() && is_orthogonal_projector(&p) {
        Ok(Flow::new(name, obj.dim(), move |x, _t, s| Ok(-g.eval_regularized(&(&p * o.gradient(x)), s))))
    } else {
        Ok(Flow::new(name, obj.dim(), move |x, _t, s| {
            Ok(-(&p * g.eval_regularized(&p.tr_mul(&o.gradient(x)), s)))
        }))
    }
}

/// Orthogonal projector onto `null(A)` built from a maximal independent row
/// subset `Ã`: `P = I − Ãᵀ(ÃÃᵀ)⁻¹Ã`.
///
/// Rows are chosen greedily by largest residual norm (pivoted Gram-Schmidt,
/// i.e. column-pivoted QR of `Aᵀ`).
pub fn orthogonal_projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = independent_rows(a)?;
    let n = a.ncols();
    let at = a.select_rows(rows.iter());
    let gram = &at * at.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| validation("selected rows are numerically dependent"))?;
    let p = DMatrix::identity(n, n) - at.transpose() * chol.solve(&at);
    Ok((&p + p.transpose()) * 0.5)
}

/// Indices of a maximal linearly independent row subset of `a`.
pub fn independent_rows(a: &DMatrix<f64>) -> Result<Vec<usize>> {
    let mut resid: Vec<DVector<f64>> = a.row_iter().map(|r| r.transpose()).collect();
    let top = resid.iter().map(|r| r.norm()).fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(validation("A is numerically zero"));
    }
    let mut chosen = Vec::new();
    loop {
        let (k, best) = resid
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, r)| (i, r.norm()))
            .fold((usize::MAX, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        if k == usize::MAX || best <= linalg::RANK_CUTOFF * top {
            break;
        }
        chosen.push(k);
        let q = &resid[k] / best;
        for (i, r) in resid.iter_mut().enumerate() {
            if !chosen.contains(&i) {
                let c = q.dot(r);
                r.axpy(-c, &q, 1.0);
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// `b ∈ range(A)` up to `1e-8‖b‖`.
pub fn check_consistent(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(validation(format!("A has {} rows but b has length {}", a.nrows(), b.len())));
    }
    let x = linalg::pseudo_inverse(a) * b;
    let r = (a * x - b).norm();
    if r > 1e-8 * b.norm() {
        return Err(Error::Infeasible(format!("least-squares residual {r:.3e} with ‖b‖ = {:.3e}", b.norm())));
    }
    Ok(())
}

/// `ẋ = −Aᵀĝ(Ax − b)` with `ĝ(y) ∈ span{y}`.
pub fn feasibility_flow(a: &DMatrix<f64>, b: &DVector<f64>, ghat: ProtocolSum) -> Result<Flow> {
    if !ghat.is_span_preserving() {
        return Err(validation(format!("feasibility protocol {ghat} does not keep g(y) in span{{y}}")));
    }
    check_consistent(a, b)?;
    let (a, b) = (a.clone(), b.clone());
    Ok(Flow::new(format!("feasibility[{ghat}]"), a.ncols(), move |x, _t, s| {
        Ok(-a.tr_mul(&ghat.eval_regularized(&(&a * x - &b), s)))
    }))
}

/// `ẋ = −P g(Pᵀ∇f(x)) − Aᵀĝ(Ax − b)`: converges from any `x₀`.
pub fn free_init_flow(
    obj: &Objective,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    p: DMatrix<f64>,
    g: ProtocolSum,
    ghat: ProtocolSum,
) -> Result<Flow> {
    let proj = projected_flow(obj, a, p, g)?;
    let feas = feasibility_flow(a, b, ghat)?;
    let mut f = proj.plus(feas)?;
    f.name = format!("free_init[{}]", f.name);
    Ok(f)
}

fn check_prox_params(f: &Objective, h: &ProxFunction, lambda: f64) -> Result<()> {
    h.validate(f.dim())?;
    let lf = f.lipschitz().ok_or(Error::CertificateMissing("lipschitz"))?;
    if !(lambda > 0.0 && lambda * lf < 1.0) {
        return Err(validation(format!("lambda must lie in (0, 1/L_f) = (0, {}), got {lambda}", 1.0 / lf)));
    }
    Ok(())
}

/// `ẋ = −κ_p H/‖H‖^{1−p} − κ_q ‖H‖^{q−1} H` with `H = H_λ(x)`.
pub fn proximal_flow(
    f: &Objective,
    h: &ProxFunction,
    lambda: f64,
    kappa_p: f64,
    kappa_q: f64,
    p: f64,
    q: f64,
) -> Result<Flow> {
    check_prox_params(f, h, lambda)?;
    let g = ProtocolSum::pair(
        Protocol::rescaled(p, 2.0)?.scaled(kappa_p)?,
        Protocol::power(q, 2.0)?.scaled(kappa_q)?,
    );
    let (o, h) = (f.clone(), h.clone());
    Ok(Flow::new(format!("proximal[{g}]"), f.dim(), move |x, _t, s| {
        Ok(-g.eval_regularized(&fb_residual_unchecked(&o, &h, lambda, x), s))
    }))
}

/// `ẋ = −H_λ(x)`.
pub fn epgf_flow(f: &Objective, h: &ProxFunction, lambda: f64) -> Result<Flow> {
    check_prox_params(f, h, lambda)?;
    let (o, h) = (f.clone(), h.clone());
    Ok(Flow::new("epgf", f.dim(), move |x, _t, _s| Ok(-fb_residual_unchecked(&o, &h, lambda, x))))
}

/// One agent of the edge-based projected baseline.
#[derive(Debug, Clone)]
pub struct EpaAgent {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub neighbors: Vec<usize>,
}

#[inline]
fn sgn_pow(v: f64, alpha: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(alpha)
    }
}

/// Edge-based projected baseline: for each agent
/// `ẋᵢ = −c Pᵢ Σⱼ (sgn^{α}(xᵢ−xⱼ) + sgn^{β}(xᵢ−xⱼ)) − c Aᵢᵀ(sgn^{α}(rᵢ) + sgn^{β}(rᵢ))`
/// with `rᵢ = Aᵢxᵢ − bᵢ` and `Pᵢ = I − Aᵢᵀ(AᵢAᵢᵀ)⁻¹Aᵢ`.
pub fn epa_flow(agents: Vec<EpaAgent>, gain: f64, alpha: f64, beta: f64) -> Result<Flow> {
    let count = agents.len();
    let n = agents.first().map(|a| a.a.ncols()).ok_or_else(|| validation("need at least one agent"))?;
    let mut projectors = Vec::with_capacity(count);
    for (i, ag) in agents.iter().enumerate() {
        if ag.a.ncols() != n || ag.a.nrows() != ag.b.len() {
            return Err(validation(format!("agent {i} block has inconsistent shape")));
        }
        if linalg::rank(&ag.a) != ag.a.nrows() {
            return Err(validation(format!("agent {i} block is not full row rank")));
        }
        if ag.neighbors.iter().any(|&j| j >= count || j == i) {
            return Err(validation(format!("agent {i} has an invalid neighbor index")));
        }
        let gram = &ag.a * ag.a.transpose();
        let inv = gram.try_inverse().ok_or_else(|| validation(format!("agent {i} Gram matrix is singular")))?;
        projectors.push(DMatrix::identity(n, n) - ag.a.transpose() * inv * &ag.a);
    }
    Ok(Flow::new("epa", count * n, move |x, _t, _s| {
        let mut out = DVector::zeros(count * n);
        for (i, ag) in agents.iter().enumerate() {
            let xi = x.rows(i * n, n);
            let mut c = DVector::zeros(n);
            for &j in &ag.neighbors {
                let d = xi - x.rows(j * n, n);
                c += d.map(|v| sgn_pow(v, alpha) + sgn_pow(v, beta));
            }
            let r = &ag.a * xi - &ag.b;
            let local = ag.a.tr_mul(&r.map(|v| sgn_pow(v, alpha) + sgn_pow(v, beta)));
            let v = (&projectors[i] * c + local) * (-gain);
            out.rows_mut(i * n, n).copy_from(&v);
        }
        Ok(out)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, IntegratorConfig};
    use crate::objective::quadratic_objective;
    use nalgebra::{dmatrix, dvector};

    fn half_sq(n: usize) -> Objective {
        quadratic_objective(DMatrix::identity(n, n), DVector::zeros(n)).unwrap()
    }

    fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn first_order_examples() {
        let f = first_order_flow(&half_sq(2), Protocol::identity().into());
        assert_eq!(f.eval(&dvector![1.0, -2.0], 0.0).unwrap(), dvector![-1.0, 2.0]);
        let g = ProtocolSum::pair(Protocol::rescaled(0.0, 2.0).unwrap(), Protocol::power(2.0, 2.0).unwrap());
        let obj = quadratic_objective(dmatrix![2.0], dvector![0.0]).unwrap();
        // f = x², ∇f(1) = 2: −(1 + 2·2)
        let v = first_order_flow(&obj, g.clone()).eval(&dvector![1.0], 0.0).unwrap();
        assert!((v[0] + 5.0).abs() < 1e-14);
        assert_eq!(first_order_flow(&obj, g).eval(&dvector![0.0], 0.0).unwrap(), dvector![0.0]);
    }

    #[test]
    fn robust_flow_requires_sliding_term() {
        let obj = half_sq(2);
        let gq = Protocol::power(2.0, 2.0).unwrap().scaled(3.0).unwrap();
        assert!(robust_flow(&obj, Protocol::rescaled(0.5, 2.0).unwrap(), gq, None).is_err());
        let g0 = Protocol::rescaled(0.0, 2.0).unwrap().scaled(3.0).unwrap();
        let d = crate::dynamics::DisturbanceModel::state_scaled_plus_bounded(
            1.0,
            1.0,
            crate::dynamics::DirectionRule::Rotating,
        )
        .unwrap();
        let f = robust_flow(&obj, g0, gq, Some((&d, 1.0))).unwrap();
        let c = f.robust_condition().unwrap();
        assert!(c.pass);
        assert!((c.bound.unwrap() - 1.0666666666666667).abs() < 1e-12);
        assert_eq!(f.eval(&dvector![0.0, 0.0], 0.0).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn newton_examples() {
        let q = dmatrix![3.0, 1.0; 1.0, 2.0];
        let obj = quadratic_objective(q, DVector::zeros(2)).unwrap();
        let f = newton_flow(&obj, Protocol::identity().into()).unwrap();
        let x = dvector![1.0, -4.0];
        assert!(close(&f.eval(&x, 0.0).unwrap(), &(-&x), 1e-12));

        let soft = Objective::new(1, |x| x[0] + (-x[0]).exp(), |x| dvector![1.0 - (-x[0]).exp()])
            .unwrap()
            .with_hessian(|x| dmatrix![(-x[0]).exp()]);
        let f = newton_flow(&soft, Protocol::identity().into()).unwrap();
        assert_eq!(f.eval(&dvector![0.0], 0.0).unwrap(), dvector![0.0]);
        let e1 = (-1f64).exp();
        assert!((f.eval(&dvector![1.0], 0.0).unwrap()[0] + (1.0 - e1) / e1).abs() < 1e-12);

        let quartic = Objective::new(1, |x| x[0].powi(4), |x| dvector![4.0 * x[0].powi(3)])
            .unwrap()
            .with_hessian(|x| dmatrix![12.0 * x[0] * x[0]]);
        let f = newton_flow(&quartic, Protocol::identity().into()).unwrap();
        assert_eq!(f.eval(&dvector![0.0], 0.0), Err(Error::SingularHessian { state: vec![0.0] }));
    }

    fn tracking_objective(with_derivative: bool) -> TimeVaryingObjective {
        let o = TimeVaryingObjective::new(
            1,
            |x, t| 0.5 * (x[0] - t.sin()).powi(2),
            |x, t| dvector![x[0] - t.sin()],
            |_, _| dmatrix![1.0],
        )
        .unwrap();
        if with_derivative {
            o.with_time_derivative(|_, t| dvector![-t.cos()])
        } else {
            o
        }
    }

    #[test]
    fn time_varying_tracks_sine() {
        let o = tracking_objective(false);
        let g = ProtocolSum::pair(Protocol::rescaled(0.5, 2.0).unwrap(), Protocol::power(2.0, 2.0).unwrap());
        let flow = time_varying_newton_flow(&o, g);
        let cfg = IntegratorConfig { dt: 1e-4, t_max: 6.0, record_stride: 100, stop_on_settle: false, ..Default::default() };
        let snap = o.snapshot(0.0).unwrap();
        let tr = integrate(&flow, &dvector![3.0], &snap, &crate::dynamics::DisturbanceModel::none(), &cfg).unwrap();
        // the Newton bound for σ = ρ = 1, p = 0.5, q = 2 is 3 s
        for (t, x) in tr.times.iter().zip(&tr.states).filter(|(t, _)| **t >= 3.0) {
            assert!((x[0] - t.sin()).abs() <= 1e-3, "t={t} x={}", x[0]);
        }
    }

    #[test]
    fn time_varying_reduces_to_newton() {
        let o = TimeVaryingObjective::new(1, |x, _| 0.5 * x[0] * x[0], |x, _| x.clone(), |_, _| dmatrix![1.0]).unwrap();
        let g: ProtocolSum = Protocol::signum().into();
        let a = time_varying_newton_flow(&o, g.clone());
        let b = newton_flow(&o.snapshot(0.0).unwrap(), g).unwrap();
        for x in [dvector![2.0], dvector![-0.3]] {
            assert_eq!(a.eval(&x, 1.7).unwrap(), b.eval(&x, 1.7).unwrap());
        }
    }

    #[test]
    fn time_varying_moves_at_target() {
        let o = tracking_objective(true);
        let flow = time_varying_newton_flow(&o, Protocol::identity().into());
        // x = x*(0) = 0, ∂∇f/∂t = −1, so ẋ = 1 = d sin t / dt at t = 0
        assert!((flow.eval(&dvector![0.0], 0.0).unwrap()[0] - 1.0).abs() < 1e-12);
        let fd = tracking_objective(false);
        let fl = time_varying_newton_flow(&fd, Protocol::identity().into());
        assert!((fl.eval(&dvector![0.0], 0.0).unwrap()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn projector_examples() {
        let p = orthogonal_projector(&DMatrix::identity(3, 3)).unwrap();
        assert!(p.amax() < 1e-15);
        let p = orthogonal_projector(&dmatrix![1.0, 1.0]).unwrap();
        assert!((p - dmatrix![0.5, -0.5; -0.5, 0.5]).amax() < 1e-15);
        assert!(orthogonal_projector(&DMatrix::zeros(2, 3)).is_err());
        let a = dmatrix![1.0, 2.0, 0.0; 2.0, 4.0, 0.0; 0.0, 0.0, 1.0];
        assert_eq!(independent_rows(&a).unwrap().len(), 2);
        let p = orthogonal_projector(&a).unwrap();
        assert!((&p * &p - &p).amax() < 1e-12);
        assert!((&a * &p).amax() < 1e-12);
        assert_eq!(linalg::rank(&p), 1);
        for s in linalg::singular_values(&p).into_iter().filter(|s| *s > 1e-8) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_converges_to_constrained_optimum() {
        let obj = half_sq(2);
        let a = dmatrix![1.0, 1.0];
        let p = orthogonal_projector(&a).unwrap();
        let f = projected_flow(&obj, &a, p, Protocol::identity().into()).unwrap();
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 20.0, settle_tol: 1e-15, ..Default::default() };
        let tr = integrate(&f, &dvector![2.0, 0.0], &obj, &Default::default(), &cfg).unwrap();
        let xf = tr.final_state().unwrap();
        assert!(close(xf, &dvector![1.0, 1.0], 1e-6));
        assert!(f.eval(&dvector![1.0, 1.0], 0.0).unwrap().norm() < 1e-15);
    }

    #[test]
    fn projected_rejects_bad_projection() {
        let obj = half_sq(2);
        let a = dmatrix![1.0, 1.0];
        assert!(matches!(
            projected_flow(&obj, &a, DMatrix::identity(2, 2), Protocol::identity().into()),
            Err(Error::InvalidProjection(_))
        ));
        let flat = quadratic_objective(dmatrix![1.0, -1.0; -1.0, 1.0], dvector![0.0, 0.0]).unwrap();
        let p = orthogonal_projector(&a).unwrap();
        assert_eq!(
            projected_flow(&flat, &a, p, Protocol::identity().into()).unwrap_err(),
            Error::CertificateMissing("strong_convexity")
        );
    }

    #[test]
    fn feasibility_examples() {
        let a = DMatrix::identity(2, 2);
        let b = dvector![1.0, 2.0];
        let f = feasibility_flow(&a, &b, Protocol::identity().into()).unwrap();
        assert_eq!(f.eval(&dvector![3.0, 2.0], 0.0).unwrap(), dvector![-2.0, 0.0]);
        assert_eq!(f.eval(&b, 0.0).unwrap(), dvector![0.0, 0.0]);
        assert!(matches!(
            feasibility_flow(&a, &b, Protocol::signum().into()),
            Err(Error::Validation(_))
        ));
        let a = dmatrix![1.0, 1.0; 2.0, 2.0];
        assert!(matches!(
            feasibility_flow(&a, &dvector![1.0, 0.0], Protocol::identity().into()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn free_init_from_infeasible_start() {
        let obj = half_sq(2);
        let a = dmatrix![1.0, 1.0];
        let b = dvector![2.0];
        let p = orthogonal_projector(&a).unwrap();
        let f = free_init_flow(&obj, &a, &b, p, Protocol::identity().into(), Protocol::identity().into()).unwrap();
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 30.0, settle_tol: 1e-15, ..Default::default() };
        let tr = integrate(&f, &dvector![2.0, -2.0], &obj, &Default::default(), &cfg).unwrap();
        assert!(close(tr.final_state().unwrap(), &dvector![1.0, 1.0], 1e-6));
    }

    #[test]
    fn proximal_with_zero_h_matches_first_order() {
        let obj = quadratic_objective(dmatrix![2.0, 0.3; 0.3, 1.0], dvector![0.5, -1.0]).unwrap();
        let pf = proximal_flow(&obj, &ProxFunction::Zero, 0.1, 1.5, 0.7, 0.5, 2.0).unwrap();
        let g = ProtocolSum::pair(
            Protocol::rescaled(0.5, 2.0).unwrap().scaled(1.5).unwrap(),
            Protocol::power(2.0, 2.0).unwrap().scaled(0.7).unwrap(),
        );
        let ff = first_order_flow(&obj, g);
        for x in [dvector![1.0, 2.0], dvector![-3.0, 0.1]] {
            assert!(close(&pf.eval(&x, 0.0).unwrap(), &ff.eval(&x, 0.0).unwrap(), 1e-12));
        }
        assert!(proximal_flow(&obj, &ProxFunction::Zero, 1.0, 1.0, 1.0, 0.5, 2.0).is_err());
        let e = epgf_flow(&obj, &ProxFunction::Zero, 0.1).unwrap();
        let x = dvector![1.0, 1.0];
        assert!(close(&e.eval(&x, 0.0).unwrap(), &(-obj.gradient(&x)), 1e-12));
    }

    #[test]
    fn epa_single_agent_zero_on_feasible_set() {
        let agent = EpaAgent { a: dmatrix![1.0, 1.0], b: dvector![2.0], neighbors: vec![] };
        let f = epa_flow(vec![agent], 3.0, 0.5, 1.5).unwrap();
        assert_eq!(f.eval(&dvector![0.5, 1.5], 0.0).unwrap(), dvector![0.0, 0.0]);
        let bad = EpaAgent { a: dmatrix![1.0, 1.0; 2.0, 2.0], b: dvector![1.0, 2.0], neighbors: vec![] };
        assert!(epa_flow(vec![bad], 3.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn epa_zero_at_common_solution() {
        let mk = |a: DMatrix<f64>, b: DVector<f64>, nb: Vec<usize>| EpaAgent { a, b, neighbors: nb };
        let agents = vec![mk(dmatrix![1.0, 0.0], dvector![1.0], vec![1]), mk(dmatrix![0.0, 1.0], dvector![2.0], vec![0])];
        let f = epa_flow(agents, 3.0, 0.5, 1.5).unwrap();
        assert!(f.eval(&dvector![1.0, 2.0, 1.0, 2.0], 0.0).unwrap().norm() < 1e-15);
    }
}
