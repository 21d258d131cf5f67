//! Objective functions, PL / quadratic-growth certificates, trajectories and
//! solve reports.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A differentiable cost together with whatever certificates are known about it.
///
/// Cloning is cheap: the callables are reference counted.
#[derive(Clone)]
pub struct Objective {
    dim: usize,
    f: ScalarFn,
    grad: VectorFn,
    hessian: Option<MatrixFn>,
    f_star: Option<f64>,
    pl_mu: Option<f64>,
    minimizer_projection: Option<VectorFn>,
    lipschitz: Option<f64>,
    strong_convexity: Option<f64>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("dim", &self.dim)
            .field("has_hessian", &self.hessian.is_some())
            .field("f_star", &self.f_star)
            .field("pl_mu", &self.pl_mu)
            .field("lipschitz", &self.lipschitz)
            .field("strong_convexity", &self.strong_convexity)
            .finish()
    }
}

impl Objective {
    pub fn new(
        dim: usize,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(validation("objective dimension must be positive"));
        }
        Ok(Self {
            dim,
            f: Arc::new(f),
            grad: Arc::new(grad),
            hessian: None,
            f_star: None,
            pl_mu: None,
            minimizer_projection: None,
            lipschitz: None,
            strong_convexity: None,
        })
    }

    pub fn with_hessian(mut self, h: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }

    pub fn with_optimal_value(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn with_pl_constant(mut self, mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(validation(format!("PL constant must be positive, got {mu}")));
        }
        self.pl_mu = Some(mu);
        Ok(self)
    }

    pub fn with_minimizer_projection(
        mut self,
        p: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.minimizer_projection = Some(Arc::new(p));
        self
    }

    /// Lipschitz constant of the gradient.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    /// User-asserted strong-convexity modulus; constrained flows require it.
    pub fn with_strong_convexity(mut self, mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(validation(format!("strong convexity modulus must be positive, got {mu}")));
        }
        self.strong_convexity = Some(mu);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad)(x)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn pl_mu(&self) -> Option<f64> {
        self.pl_mu
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn strong_convexity(&self) -> Option<f64> {
        self.strong_convexity
    }

    /// `[x]*`, the projection of `x` onto the minimizer set, when known.
    pub fn project_to_minimizers(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.minimizer_projection.as_ref().map(|p| p(x))
    }

    pub fn has_minimizer_projection(&self) -> bool {
        self.minimizer_projection.is_some()
    }

    pub(crate) fn projection_fn(&self) -> Option<VectorFn> {
        self.minimizer_projection.clone()
    }
}

/// `½‖∇f(x)‖² − μ(f(x) − f*)`.
pub fn pl_residual(obj: &Objective, x: &DVector<f64>) -> Result<f64> {
    let mu = obj.pl_mu.ok_or(Error::CertificateMissing("pl_mu"))?;
    let f_star = obj.f_star.ok_or(Error::CertificateMissing("f_star"))?;
    let g = obj.gradient(x);
    Ok(0.5 * g.norm_squared() - mu * (obj.value(x) - f_star))
}

/// `f(x) = ½xᵀQx + cᵀx` with `Q` symmetric PSD and `c ∈ range(Q)`.
pub fn quadratic_objective(q: DMatrix<f64>, c: DVector<f64>) -> Result<Objective> {
    quadratic_objective_with_constant(q, c, 0.0)
}

/// `f(x) = ½xᵀQx + cᵀx + k`.
///
/// The PL constant is the smallest nonzero eigenvalue of `Q`; the minimizer
/// projection is `x ↦ x_ls + (I − Q⁺Q)x` with `x_ls = −Q⁺c`.
pub fn quadratic_objective_with_constant(q: DMatrix<f64>, c: DVector<f64>, k: f64) -> Result<Objective> {
    let n = q.nrows();
    if !q.is_square() || n == 0 {
        return Err(validation("Q must be a nonempty square matrix"));
    }
    if c.len() != n {
        return Err(validation(format!("c has length {} but Q is {n}x{n}", c.len())));
    }
    if !linalg::is_symmetric(&q, 1e-10) {
        return Err(validation("Q is not symmetric"));
    }
    let ev = linalg::sym_eigenvalues(&q);
    let max_ev = ev.last().copied().unwrap_or(0.0);
    let min_ev = ev[0];
    if min_ev < -linalg::RANK_CUTOFF * max_ev.abs().max(1.0) {
        return Err(validation(format!("Q is not positive semidefinite (eigenvalue {min_ev})")));
    }
    let q_pinv = linalg::pseudo_inverse(&q);
    let x_ls = -(&q_pinv * &c);
    let range_residual = (&q * &x_ls + &c).norm();
    if range_residual > 1e-8 * (1.0 + c.norm()) {
        return Err(Error::UnboundedObjective(format!(
            "c is not in range(Q) (residual {range_residual:.3e})"
        )));
    }
    let f_star = 0.5 * x_ls.dot(&(&q * &x_ls)) + c.dot(&x_ls) + k;
    let null_proj = DMatrix::identity(n, n) - &q_pinv * &q;

    let (qf, cf) = (q.clone(), c.clone());
    let (qg, cg) = (q.clone(), c.clone());
    let qh = q.clone();
    let mut obj = Objective::new(
        n,
        move |x| 0.5 * x.dot(&(&qf * x)) + cf.dot(x) + k,
        move |x| &qg * x + &cg,
    )?
    .with_hessian(move |_| qh.clone())
    .with_optimal_value(f_star)
    .with_minimizer_projection(move |x| &x_ls + &null_proj * x)
    .with_lipschitz(max_ev.max(0.0));

    if max_ev > 0.0 {
        obj = obj.with_pl_constant(linalg::lambda2(&q)?)?;
        if min_ev > linalg::RANK_CUTOFF * max_ev {
            obj = obj.with_strong_convexity(min_ev)?;
        }
    }
    Ok(obj)
}

/// `½‖Ax − b‖₂²`; `f*` is the least-squares residual value.
pub fn least_squares_objective(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Objective> {
    if a.nrows() != b.len() {
        return Err(validation(format!("A has {} rows but b has length {}", a.nrows(), b.len())));
    }
    quadratic_objective_with_constant(a.tr_mul(a), -a.tr_mul(b), 0.5 * b.norm_squared())
}

/// Measured growth ratios at one sample; `None` where `x = [x]*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub distance: f64,
    /// `(f(x) − f*) / ‖x − [x]*‖²`
    pub cost_ratio: Option<f64>,
    /// `‖∇f(x)‖ / ‖x − [x]*‖`
    pub gradient_ratio: Option<f64>,
}

/// Reports the quadratic-growth ratios at each sample without asserting any
/// particular constant.
pub fn check_quadratic_growth(obj: &Objective, samples: &[DVector<f64>]) -> Result<Vec<GrowthSample>> {
    obj.pl_mu.ok_or(Error::CertificateMissing("pl_mu"))?;
    let f_star = obj.f_star.ok_or(Error::CertificateMissing("f_star"))?;
    let proj = obj
        .minimizer_projection
        .as_ref()
        .ok_or(Error::CertificateMissing("minimizer_projection"))?;
    Ok(samples
        .iter()
        .map(|x| {
            let d = (x - proj(x)).norm();
            if d <= 1e-12 * (1.0 + x.norm()) {
                GrowthSample { distance: d, cost_ratio: None, gradient_ratio: None }
            } else {
                GrowthSample {
                    distance: d,
                    cost_ratio: Some((obj.value(x) - f_star) / (d * d)),
                    gradient_ratio: Some(obj.gradient(x).norm() / d),
                }
            }
        })
        .collect())
}

/// Central-difference gradient of a scalar function.
pub fn finite_difference_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function (columns are partials).
pub fn finite_difference_jacobian(
    g: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(g(x).len(), n);
    let mut xp = x.clone();
    for j in 0..n {
        let xj = x[j];
        xp[j] = xj + h;
        let gp = g(&xp);
        xp[j] = xj - h;
        let gm = g(&xp);
        xp[j] = xj;
        jac.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    jac
}

/// `‖approx − exact‖ / max(‖exact‖, 1)`.
pub fn relative_error(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (approx - exact).norm() / exact.norm().max(1.0)
}

/// Relative error of `obj.grad` against central differences of `obj.f`.
pub fn gradient_check(obj: &Objective, x: &DVector<f64>, step: f64) -> f64 {
    let fd = finite_difference_gradient(|z| obj.value(z), x, step);
    relative_error(&fd, &obj.gradient(x))
}

/// Relative error of `obj.hessian` against central differences of `obj.grad`.
pub fn hessian_check(obj: &Objective, x: &DVector<f64>, step: f64) -> Option<f64> {
    let h = obj.hessian(x)?;
    let fd = finite_difference_jacobian(|z| obj.gradient(z), x, step);
    Some((fd - &h).norm() / h.norm().max(1.0))
}

/// Time-sampled solution of a flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub settling_time: Option<f64>,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        costs: Vec<f64>,
        grad_norms: Vec<f64>,
        settling_time: Option<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if states.len() != n || costs.len() != n || grad_norms.len() != n {
            return Err(validation("trajectory columns have different lengths"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(validation("trajectory times must be strictly increasing"));
        }
        if let Some(ts) = settling_time {
            if !times.contains(&ts) {
                return Err(validation("settling time must be one of the sampled times"));
            }
        }
        Ok(Self { times, states, costs, grad_norms, settling_time })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Index of the last sample with time `≤ t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        match self.times.partition_point(|&s| s <= t) {
            0 => None,
            k => Some(k - 1),
        }
    }
}

/// Summary of one flow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: Trajectory,
    pub measured_settling: Option<f64>,
    pub theoretical_bound: Option<f64>,
    pub final_gradient_norm: f64,
    pub regret: Option<f64>,
}

impl SolveReport {
    pub fn new(trajectory: Trajectory, theoretical_bound: Option<f64>, regret: Option<f64>) -> Self {
        let measured_settling = trajectory.settling_time;
        let final_gradient_norm = trajectory.grad_norms.last().copied().unwrap_or(f64::NAN);
        Self { trajectory, measured_settling, theoretical_bound, final_gradient_norm, regret }
    }
}
