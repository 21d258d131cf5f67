//! The four packaged case instances and random test problems.

use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde_json::json;

use crate::dynamics::{
    integrate_with_metric, DirectionRule, DisturbanceModel, IntegratorConfig, SettleMetric,
};
use crate::error::{validation, Result};
use crate::flows::{
    epa_flow, epgf_flow, feasibility_flow, first_order_flow, projected_flow, proximal_flow, robust_flow, EpaAgent,
    Flow,
};
use crate::linalg;
use crate::network::{dispatch_projection, row_partition_objective, Graph, PartitionedSystem};
use crate::objective::{least_squares_objective, quadratic_objective, quadratic_objective_with_constant, Objective};
use crate::protocols::{Protocol, ProtocolSum};
use crate::proximal::{fb_envelope, fb_residual, ProxFunction};
use crate::{bounds, flows};

/// One compared method of a case: a flow plus everything needed to run it.
#[derive(Clone)]
pub struct Method {
    pub name: String,
    pub flow: Flow,
    /// Recorded costs and gradient norms come from this objective.
    pub objective: Objective,
    pub disturbance: DisturbanceModel,
    pub integrator: IntegratorConfig,
    pub metric: SettleMetric,
    pub starts: Vec<DVector<f64>>,
    /// Theoretical settling bound, when one applies.
    pub bound: Option<f64>,
    /// Report `∫(f − f*)` for this method; off when `f*` of `objective` is
    /// not the optimal value of the problem being solved.
    pub track_regret: bool,
}

impl std::fmt::Debug for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Method")
            .field("name", &self.name)
            .field("integrator", &self.integrator)
            .field("starts", &self.starts.len())
            .field("bound", &self.bound)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct CaseInstance {
    pub id: u8,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub reference_solution: Option<DVector<f64>>,
    pub reference_value: Option<f64>,
    /// First-order optimality residual of the reference solution.
    pub optimality_residual: f64,
    /// Full instance description for reproducibility files.
    pub dump: serde_json::Value,
}

impl CaseInstance {
    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn gain(p: Protocol, k: f64) -> Protocol {
    p.scaled(k).expect("positive literal gain")
}

fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!(linalg::to_rows(m))
}

fn uniform_box(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, count: usize) -> Vec<DVector<f64>> {
    let u = Uniform::new(lo, hi).expect("valid range");
    (0..count).map(|_| DVector::from_fn(n, |_, _| u.sample(rng))).collect()
}

/// `(1/K) Σ log(1 + exp(−lₖ xᵀzₖ)) + (β/2)‖x‖²`.
pub fn logistic_objective(z: DMatrix<f64>, labels: DVector<f64>, beta: f64) -> Result<Objective> {
    if z.nrows() != labels.len() || z.nrows() == 0 {
        return Err(validation("need one label per sample"));
    }
    if !(beta > 0.0) {
        return Err(validation("beta must be positive"));
    }
    let k = z.nrows() as f64;
    let n = z.ncols();
    // rows scaled by their label
    let lz = DMatrix::from_fn(z.nrows(), n, |i, j| labels[i] * z[(i, j)]);
    let (a, b, c) = (lz.clone(), lz.clone(), lz.clone());
    let softplus = |m: f64| if m > 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() };
    let sigmoid = |m: f64| 1.0 / (1.0 + m.exp());
    let lip = lz.row_iter().map(|r| r.norm_squared()).sum::<f64>() / (4.0 * k) + beta;
    Ok(Objective::new(
        n,
        move |x| (&a * x).iter().map(|m| softplus(*m)).sum::<f64>() / k + 0.5 * beta * x.norm_squared(),
        move |x| {
            let w = (&b * x).map(|m| -sigmoid(m) / k);
            b.tr_mul(&w) + x * beta
        },
    )?
    .with_hessian(move |x| {
        let d = (&c * x).map(|m| {
            let s = sigmoid(m);
            s * (1.0 - s) / k
        });
        let cd = DMatrix::from_fn(c.nrows(), n, |i, j| c[(i, j)] * d[i]);
        c.tr_mul(&cd) + DMatrix::identity(n, n) * beta
    })
    .with_strong_convexity(beta)?
    .with_pl_constant(beta)?
    .with_lipschitz(lip))
}

/// Points `t(1,1)/√2 + ν(1,−1)/√2` with `t ~ U[−5,5]`, `ν ~ N(0,1)` and
/// label `sign(ν)`.
pub fn case1_data(rng: &mut ChaCha8Rng, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let tdist = Uniform::new(-5.0, 5.0).expect("valid range");
    let mut z = DMatrix::zeros(k, 2);
    let mut l = DVector::zeros(k);
    for i in 0..k {
        let t = tdist.sample(rng);
        let nu: f64 = loop {
            let v: f64 = StandardNormal.sample(rng);
            if v != 0.0 {
                break v;
            }
        };
        z[(i, 0)] = (t + nu) * r;
        z[(i, 1)] = (t - nu) * r;
        l[i] = nu.signum();
    }
    (z, l)
}

pub const CASE1_SAMPLES: usize = 500;
pub const CASE1_STARTS: usize = 5;

/// Minimizer by running `ẋ = −∇f` until `‖∇f‖ ≤ 1e-10`.
fn gradient_flow_minimizer(obj: &Objective, dt: f64) -> Result<DVector<f64>> {
    let flow = first_order_flow(obj, Protocol::identity().into());
    let cfg = IntegratorConfig { dt, t_max: 200.0, settle_tol: 1e-10, record_stride: 10, ..Default::default() };
    let run = integrate_with_metric(
        &flow,
        &DVector::zeros(obj.dim()),
        obj,
        &DisturbanceModel::none(),
        &cfg,
        &SettleMetric::GradientNorm,
    )?;
    let x = run.trajectory.final_state().cloned().unwrap_or_else(|| DVector::zeros(obj.dim()));
    if obj.gradient(&x).norm() > 1e-10 {
        return Err(validation("reference gradient flow did not reach 1e-10"));
    }
    Ok(x)
}

/// Regularized logistic regression under `[sin t, cos t](1 + ‖x − x*‖)`.
pub fn build_case1(seed: u64) -> Result<CaseInstance> {
    build_case1_with(seed, 1.0)
}

pub fn build_case1_with(seed: u64, safety_multiplier: f64) -> Result<CaseInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (z, l) = case1_data(&mut rng, CASE1_SAMPLES);
    let beta = 1.0;
    let base = logistic_objective(z.clone(), l.clone(), beta)?;
    let xs = gradient_flow_minimizer(&base, 0.1)?;
    let anchor = xs.clone();
    let obj = base.with_minimizer_projection(move |_| anchor.clone()).with_optimal_value(0.0);
    let f_star = obj.value(&xs);
    let obj = obj.with_optimal_value(f_star);
    let dist = DisturbanceModel::state_scaled_plus_bounded(1.0, 1.0, DirectionRule::Rotating)?;
    let starts = uniform_box(&mut rng, 2, -100.0, 100.0, CASE1_STARTS);

    let g0 = gain(Protocol::rescaled(0.0, 2.0)?, 3.0);
    let gq = gain(Protocol::power(2.0, 2.0)?, 3.0);
    let robust = robust_flow(&obj, g0, gq, Some((&dist, safety_multiplier)))?;
    let bound = robust.robust_condition().and_then(|c| c.bound);
    let half = ProtocolSum::pair(gain(Protocol::rescaled(0.5, 2.0)?, 3.0), gq);
    let baseline = first_order_flow(&obj, half);

    let integrator = IntegratorConfig {
        dt: 1e-4,
        t_max: 5.0,
        settle_tol: 1e-3,
        record_stride: 10,
        max_step_norm: Some(0.1),
        ..Default::default()
    };
    let metric = SettleMetric::DistanceTo(xs.clone());
    let method = |name: &str, flow: Flow, bound| Method {
        name: name.into(),
        flow,
        objective: obj.clone(),
        disturbance: dist.clone(),
        integrator: integrator.clone(),
        metric: metric.clone(),
        starts: starts.clone(),
        bound,
        track_regret: true,
    };
    let methods = vec![method("g_0_2", robust, bound), method("g_0.5_2", baseline, None)];
    let dump = json!({
        "case": 1,
        "seed": seed,
        "samples": mat_json(&z),
        "labels": vec_json(&l),
        "beta": beta,
        "x_star": vec_json(&xs),
        "disturbance": {"epsilon": 1.0, "dbar": 1.0, "direction": "rotating"},
        "safety_multiplier": safety_multiplier,
        "starts": starts.iter().map(vec_json).collect::<Vec<_>>(),
        "bound": bound,
    });
    Ok(CaseInstance {
        id: 1,
        seed,
        optimality_residual: obj.gradient(&xs).norm(),
        methods,
        reference_solution: Some(xs),
        reference_value: Some(f_star),
        dump,
    })
}

pub const CASE2_LAMBDA: f64 = 0.1;
pub const CASE2_OPTIMAL_VALUE: f64 = 1.25;

pub fn case2_data() -> (DMatrix<f64>, DVector<f64>, ProxFunction) {
    let a = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, -1.0, 0.0, 1.0, 2.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
    let b = DVector::from_element(3, 1.0);
    let h = ProxFunction::l1_plus_uniform_box(1.0, -5.0, 5.0).expect("valid literal");
    (a, b, h)
}

/// Forward-backward iteration to `‖H_λ(x)‖ ≤ 1e-12`.
fn prox_gradient_minimizer(f: &Objective, h: &ProxFunction, lambda: f64) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(f.dim());
    for _ in 0..1_000_000 {
        let r = fb_residual(f, h, lambda, &x)?;
        if r.norm() <= 1e-12 {
            break;
        }
        x -= r * lambda;
    }
    Ok(x)
}

/// Lasso with an `ℓ₁` weight of 1 and the box `[−5, 5]⁴`.
pub fn build_case2(seed: u64) -> Result<CaseInstance> {
    let (a, b, h) = case2_data();
    let f = least_squares_objective(&a, &b)?;
    let lambda = CASE2_LAMBDA;
    let xs = prox_gradient_minimizer(&f, &h, lambda)?;
    let fxt = proximal_flow(&f, &h, lambda, 1.0, 1.0, 0.5, 2.0)?;
    let epgf = epgf_flow(&f, &h, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = uniform_box(&mut rng, 4, -5.0, 5.0, 5);
    let (ff, hh) = (f.clone(), h.clone());
    let metric = SettleMetric::Custom(std::sync::Arc::new(move |x| {
        fb_envelope(&ff, &hh, lambda, x).map_or(f64::INFINITY, |v| v - CASE2_OPTIMAL_VALUE)
    }));
    let integrator = IntegratorConfig { dt: 1e-4, t_max: 3.0, settle_tol: 1e-4, record_stride: 10, ..Default::default() };
    let method = |name: &str, flow: Flow| Method {
        name: name.into(),
        flow,
        objective: f.clone(),
        disturbance: DisturbanceModel::none(),
        integrator: IntegratorConfig { stop_on_settle: false, ..integrator.clone() },
        metric: metric.clone(),
        starts: starts.clone(),
        bound: None,
        track_regret: false,
    };
    let methods = vec![method("fxtpgf", fxt), method("epgf", epgf)];
    let lf = f.lipschitz().unwrap_or(f64::NAN);
    let dump = json!({
        "case": 2,
        "seed": seed,
        "a": mat_json(&a),
        "b": vec_json(&b),
        "h": h,
        "lambda": lambda,
        "lipschitz": lf,
        "p": 0.5, "q": 2.0, "kappa_p": 1.0, "kappa_q": 1.0,
        "x_star": vec_json(&xs),
        "starts": starts.iter().map(vec_json).collect::<Vec<_>>(),
    });
    Ok(CaseInstance {
        id: 2,
        seed,
        optimality_residual: fb_residual(&f, &h, lambda, &xs)?.norm(),
        methods,
        reference_solution: Some(xs),
        reference_value: Some(CASE2_OPTIMAL_VALUE),
        dump,
    })
}

pub fn case3_data() -> (DMatrix<f64>, DVector<f64>, Vec<Vec<usize>>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 5, &[
        3.0, 4.0, -3.0, -2.0, -2.0,
        1.0, -2.0, -4.0, -5.0, 3.0,
        4.0, 5.0, -2.0, -2.0, -2.0,
        0.0, -4.0, 4.0, 4.0, 4.0,
        3.0, -4.0, -3.0, 4.0, 2.0,
        5.0, -3.0, -5.0, -5.0, 2.0,
    ]);
    let b = dvector![2.0, 0.0, 5.0, 4.0, -5.0, -4.0];
    (a, b, vec![vec![0, 1], vec![2, 3], vec![4], vec![5]])
}

/// `Ax = b` over a 4-agent ring under `0.2 sin t` on every state.
pub fn build_case3(seed: u64) -> Result<CaseInstance> {
    let (a, b, groups) = case3_data();
    let graph = Graph::cycle(4)?;
    let sys = PartitionedSystem::by_rows(&a, &b, &groups, 1.0)?;
    let dist_obj = row_partition_objective(&sys, &graph)?;
    let cent_obj = least_squares_objective(&a, &b)?;
    let gd = ProtocolSum::pair(gain(Protocol::signum(), 3.0), gain(Protocol::componentwise_power(1.5)?, 3.0));
    let gc2 = ProtocolSum::pair(gain(Protocol::rescaled(0.0, 2.0)?, 3.0), gain(Protocol::power(1.5, 2.0)?, 3.0));

    let distributed = first_order_flow(&dist_obj, gd.clone()).renamed("g_d");
    let central1 = first_order_flow(&cent_obj, gd.clone()).renamed("g_c1");
    let central2 = feasibility_flow(&a, &b, gc2)?.renamed("g_c2");
    let agents = sys
        .a_blocks
        .iter()
        .zip(&sys.b_blocks)
        .enumerate()
        .map(|(i, (ai, bi))| EpaAgent { a: ai.clone(), b: bi.clone(), neighbors: graph.neighbors(i) })
        .collect();
    let epa = epa_flow(agents, 3.0, 0.5, 1.5)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_d = uniform_box(&mut rng, 20, -5.0, 5.0, 1);
    let start_c = uniform_box(&mut rng, 5, -5.0, 5.0, 1);
    let sin = |n| DisturbanceModel::sinusoid(DVector::from_element(n, 0.2), 1.0);
    let cfg = |dt: f64, t_max: f64, cap: Option<f64>| IntegratorConfig {
        dt,
        t_max,
        settle_tol: 1e-3,
        record_stride: ((1e-3 / dt).round() as usize).max(1),
        max_step_norm: cap,
        ..Default::default()
    };
    let methods = vec![
        Method {
            name: "g_d".into(),
            flow: distributed,
            objective: dist_obj.clone(),
            disturbance: sin(20)?,
            integrator: cfg(5e-7, 3.0, Some(0.05)),
            metric: SettleMetric::GradientNorm,
            starts: start_d.clone(),
            bound: None,
            track_regret: true,
        },
        Method {
            name: "g_c1".into(),
            flow: central1,
            objective: cent_obj.clone(),
            disturbance: sin(5)?,
            integrator: cfg(5e-7, 1.0, Some(0.05)),
            metric: SettleMetric::GradientNorm,
            starts: start_c.clone(),
            bound: None,
            track_regret: true,
        },
        Method {
            name: "g_c2".into(),
            flow: central2,
            objective: cent_obj.clone(),
            disturbance: sin(5)?,
            integrator: cfg(1e-7, 1.0, Some(0.05)),
            metric: SettleMetric::GradientNorm,
            starts: start_c.clone(),
            bound: None,
            track_regret: true,
        },
        Method {
            name: "epa".into(),
            flow: epa,
            objective: dist_obj.clone(),
            disturbance: sin(20)?,
            integrator: IntegratorConfig { record_stride: 1000, ..cfg(1e-5, 20.0, None) },
            metric: SettleMetric::GradientNorm,
            starts: start_d.clone(),
            bound: None,
            track_regret: true,
        },
    ];
    let xs = linalg::pseudo_inverse(&a) * &b;
    let dump = json!({
        "case": 3,
        "seed": seed,
        "a": mat_json(&a),
        "b": vec_json(&b),
        "row_groups": groups,
        "graph": graph,
        "delta": 1.0,
        "disturbance": {"amplitude": 0.2, "frequency": 1.0},
        "start_distributed": vec_json(&start_d[0]),
        "start_centralized": vec_json(&start_c[0]),
    });
    Ok(CaseInstance {
        id: 3,
        seed,
        optimality_residual: cent_obj.gradient(&xs).norm(),
        methods,
        reference_solution: Some(xs),
        reference_value: Some(0.0),
        dump,
    })
}

pub struct Case4Data {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub demand: DVector<f64>,
}

pub fn case4_data() -> Case4Data {
    Case4Data {
        a: dvector![0.001562, 0.00194, 0.00482, 0.00228],
        b: dvector![7.92, 7.85, 7.97, 7.48],
        c: dvector![561.0, 310.0, 78.0, 459.0],
        demand: dvector![60.0, 40.0, 50.0, 80.0],
    }
}

/// Equal incremental cost: `2aᵢxᵢ + bᵢ = λ*` with `Σ xᵢ = Σ dᵢ`.
pub fn dispatch_kkt(data: &Case4Data) -> (DVector<f64>, f64) {
    let total = data.demand.sum();
    let inv: f64 = data.a.iter().map(|a| 1.0 / (2.0 * a)).sum();
    let shift: f64 = data.a.iter().zip(data.b.iter()).map(|(a, b)| b / (2.0 * a)).sum();
    let lam = (total + shift) / inv;
    let x = DVector::from_fn(data.a.len(), |i, _| (lam - data.b[i]) / (2.0 * data.a[i]));
    (x, lam)
}

/// The printed weighting matrices for the ring and the complete graph.
pub fn case4_projections() -> (DMatrix<f64>, DMatrix<f64>) {
    let l1 = Graph::cycle(4).expect("ring").laplacian() / 4.0;
    let l2 = Graph::complete(4).expect("complete").laplacian() / 4.0;
    (l1, l2)
}

/// Economic dispatch with projected flows `ẋ = −P g(Pᵀ∇f)`.
pub fn build_case4() -> Result<CaseInstance> {
    let data = case4_data();
    let n = 4;
    let q = DMatrix::from_diagonal(&(&data.a * 2.0));
    let obj = quadratic_objective_with_constant(q, data.b.clone(), data.c.sum())?;
    let ones = DMatrix::from_element(1, n, 1.0);
    let (l1, l2) = case4_projections();
    let g = ProtocolSum::pair(Protocol::signum(), Protocol::componentwise_power(1.5)?);
    let (xs, lam) = dispatch_kkt(&data);
    // regret is measured against the constrained optimum
    let f_opt = obj.value(&xs);
    let obj = obj.with_optimal_value(f_opt);
    let mu = obj.strong_convexity().unwrap_or(f64::NAN);
    let fc = g.fxt_constants(n)?;
    let bound_for = |p: &DMatrix<f64>| -> Result<f64> {
        let d = dispatch_projection(p.clone())?;
        Ok(bounds::projected_bound(mu, d.lambda2_ptp, fc.sigma, fc.rho, fc.p, fc.q)?.value)
    };
    let integrator =
        IntegratorConfig { dt: 1e-3, t_max: 150.0, settle_tol: 1e-2, record_stride: 100, stop_on_settle: false, ..Default::default() };
    let method = |name: &str, flow: Flow, bound| Method {
        name: name.into(),
        flow,
        objective: obj.clone(),
        disturbance: DisturbanceModel::none(),
        integrator: integrator.clone(),
        metric: SettleMetric::DistanceTo(xs.clone()),
        starts: vec![data.demand.clone()],
        bound,
        track_regret: true,
    };
    let methods = vec![
        method("fxt_l1", projected_flow(&obj, &ones, l1.clone(), g.clone())?, Some(bound_for(&l1)?)),
        method("fxt_l2", projected_flow(&obj, &ones, l2.clone(), g.clone())?, Some(bound_for(&l2)?)),
        method("sign_l2", projected_flow(&obj, &ones, l2.clone(), Protocol::signum().into())?, None),
        method("linear_l2", projected_flow(&obj, &ones, l2.clone(), Protocol::identity().into())?, None),
    ];
    let pgrad = flows::orthogonal_projector(&ones)? * obj.gradient(&xs);
    let dump = json!({
        "case": 4,
        "a": vec_json(&data.a),
        "b": vec_json(&data.b),
        "c": vec_json(&data.c),
        "demand": vec_json(&data.demand),
        "l1": mat_json(&l1),
        "l2": mat_json(&l2),
        "x_star": vec_json(&xs),
        "incremental_cost": lam,
    });
    Ok(CaseInstance {
        id: 4,
        seed: 0,
        optimality_residual: pgrad.norm(),
        methods,
        reference_value: Some(obj.value(&xs)),
        reference_solution: Some(xs),
        dump,
    })
}

pub fn build_case(id: u8, seed: u64) -> Result<CaseInstance> {
    match id {
        1 => build_case1(seed),
        2 => build_case2(seed),
        3 => build_case3(seed),
        4 => build_case4(),
        _ => Err(validation(format!("unknown case {id}; expected 1 to 4"))),
    }
}

/// `½xᵀQx` with `Q = UΛUᵀ`, `U` random orthogonal and the spectrum of `Λ`
/// spanning `[μ, L]` with both endpoints present.
pub fn random_quadratic(n: usize, mu: f64, l: f64, seed: u64) -> Result<Objective> {
    if n == 0 {
        return Err(validation("dimension must be positive"));
    }
    if !(mu > 0.0 && l >= mu && l.is_finite()) {
        return Err(validation(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eig: Vec<f64> = (0..n).map(|_| rng.random_range(mu..=l)).collect();
    eig[0] = mu;
    if n > 1 {
        eig[n - 1] = l;
    }
    let g = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let u = g.qr().q();
    let q = &u * DMatrix::from_diagonal(&DVector::from_vec(eig)) * u.transpose();
    let q = (&q + q.transpose()) * 0.5;
    quadratic_objective(q, DVector::zeros(n))?.with_optimal_value(0.0).with_pl_constant(mu)
}
