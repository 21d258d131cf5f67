//! Running case instances and checking their expected behaviour.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{first_below, integrate_with_metric, settled_for_good, Run};
use crate::error::Result;
use crate::io::{write_json, write_summary, write_trajectory_csv};
use crate::problems::{CaseInstance, Method};
use crate::regret::measure_regret;

/// Command-line style overrides applied to every method of a case.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub settle_tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub start: usize,
    pub run: Run,
    pub settle_tol: f64,
    pub bound: Option<f64>,
    pub regret: Option<f64>,
}

impl MethodRun {
    pub fn times(&self) -> &[f64] {
        &self.run.trajectory.times
    }

    pub fn first_settle(&self) -> Option<f64> {
        first_below(self.times(), &self.run.residuals, self.settle_tol)
    }

    pub fn settled_for_good(&self) -> Option<f64> {
        settled_for_good(self.times(), &self.run.residuals, self.settle_tol)
    }

    pub fn final_residual(&self) -> f64 {
        self.run.residuals.last().copied().unwrap_or(f64::NAN)
    }

    /// Residual at the last sample not after `t`.
    pub fn residual_at(&self, t: f64) -> f64 {
        let k = self.times().partition_point(|s| *s <= t + 1e-12);
        self.run.residuals[k.saturating_sub(1)]
    }

    /// Smallest residual over samples with time in `[from, to]`.
    pub fn min_residual_on(&self, from: f64, to: f64) -> f64 {
        self.times()
            .iter()
            .zip(&self.run.residuals)
            .filter(|(t, _)| **t >= from - 1e-12 && **t <= to + 1e-12)
            .map(|(_, r)| *r)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub case: u8,
    pub runs: Vec<MethodRun>,
    pub checks: Vec<Check>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn runs_of<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a MethodRun> + 'a {
        self.runs.iter().filter(move |r| r.method == method)
    }

    pub fn summary_entries(&self) -> Vec<(String, String)> {
        let fmt = |v: Option<f64>| v.map_or("none".to_string(), |t| format!("{t:.6}"));
        let mut out = vec![("case".to_string(), self.case.to_string())];
        for r in &self.runs {
            let key = format!("{}.{}", r.method, r.start);
            out.push((format!("{key}.settling_time"), fmt(r.first_settle())));
            out.push((format!("{key}.settled_for_good"), fmt(r.settled_for_good())));
            out.push((format!("{key}.final_residual"), format!("{:.6e}", r.final_residual())));
            if let Some(b) = r.bound {
                out.push((format!("{key}.bound"), format!("{b:.6}")));
            }
            if let Some(v) = r.regret {
                out.push((format!("{key}.regret"), format!("{v:.6e}")));
            }
        }
        for c in &self.checks {
            out.push((format!("check.{}", c.name), if c.pass { "pass" } else { "fail" }.to_string()));
        }
        out.push(("pass".to_string(), self.passed().to_string()));
        out
    }

    /// Writes `summary.txt`, `checks.json` and one trajectory CSV per run.
    pub fn write_outputs(&self, dir: &Path, instance: &CaseInstance) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_summary(&dir.join("summary.txt"), &self.summary_entries())?;
        write_json(&dir.join("checks.json"), &self.checks)?;
        write_json(&dir.join("instance.json"), &instance.dump)?;
        for r in &self.runs {
            let name = format!("{}_{}.csv", r.method.replace('.', "p"), r.start);
            write_trajectory_csv(&dir.join(name), &r.run.trajectory)?;
        }
        Ok(())
    }
}

fn run_one(m: &Method, start: usize, x0: &DVector<f64>, ov: &RunOverrides) -> Result<MethodRun> {
    let mut cfg = m.integrator.clone();
    if let Some(dt) = ov.dt {
        cfg.dt = dt;
    }
    if let Some(t) = ov.t_max {
        cfg.t_max = t;
    }
    if let Some(tol) = ov.settle_tol {
        cfg.settle_tol = tol;
    }
    log::info!("running {} from start {} (dt = {}, t_max = {})", m.name, start, cfg.dt, cfg.t_max);
    let run = integrate_with_metric(&m.flow, x0, &m.objective, &m.disturbance, &cfg, &m.metric)?;
    let regret = match m.objective.f_star() {
        Some(fs) if m.track_regret => Some(measure_regret(&run.trajectory, fs)?.value),
        _ => None,
    };
    Ok(MethodRun { method: m.name.clone(), start, run, settle_tol: cfg.settle_tol, bound: m.bound, regret })
}

/// Integrates every (method, start) pair in parallel and evaluates the
/// case's checks.
pub fn run_case(instance: &CaseInstance, ov: &RunOverrides) -> Result<CaseReport> {
    let jobs: Vec<(&Method, usize, &DVector<f64>)> = instance
        .methods
        .iter()
        .flat_map(|m| m.starts.iter().enumerate().map(move |(i, x)| (m, i, x)))
        .collect();
    let runs = jobs.par_iter().map(|(m, i, x)| run_one(m, *i, x, ov)).collect::<Result<Vec<_>>>()?;
    let mut report = CaseReport { case: instance.id, runs, checks: Vec::new() };
    report.checks = match instance.id {
        1 => checks_case1(&report),
        2 => checks_case2(&report),
        3 => checks_case3(&report),
        4 => checks_case4(&report, instance),
        _ => Vec::new(),
    };
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("never".into(), |t| format!("{t:.4}"))
}

fn checks_case1(r: &CaseReport) -> Vec<Check> {
    let mut out = Vec::new();
    for run in r.runs_of("g_0_2") {
        let bound = run.bound.unwrap_or(f64::NAN);
        let limit = 1.05 * bound;
        let t = run.settled_for_good();
        out.push(Check::new(
            format!("g_0_2.{}.settles_within_bound", run.start),
            t.is_some_and(|t| t <= limit),
            format!("settled at {} against {:.4} (bound {:.4})", fmt_opt(t), limit, bound),
        ));
    }
    for run in r.runs_of("g_0.5_2") {
        let t_end = run.run.trajectory.final_time();
        let m = run.min_residual_on(2.0, t_end);
        out.push(Check::new(
            format!("g_0.5_2.{}.does_not_converge", run.start),
            m > 1e-2,
            format!("min distance on [2, {t_end}] is {m:.3e}"),
        ));
    }
    out
}

fn checks_case2(r: &CaseReport) -> Vec<Check> {
    let mut out = Vec::new();
    for run in r.runs_of("fxtpgf") {
        let t = run.first_settle();
        out.push(Check::new(
            format!("fxtpgf.{}.settles_before_2", run.start),
            t.is_some_and(|t| t < 2.0),
            format!("envelope gap below {:.0e} at {}", run.settle_tol, fmt_opt(t)),
        ));
        let fin = run.final_residual();
        out.push(Check::new(
            format!("fxtpgf.{}.optimal_value", run.start),
            fin.abs() <= 1e-3,
            format!("final envelope gap {fin:.3e}"),
        ));
        if let Some(e) = r.runs_of("epgf").find(|e| e.start == run.start) {
            let (a, b) = (e.residual_at(2.0), run.residual_at(2.0).max(f64::EPSILON));
            out.push(Check::new(
                format!("epgf.{}.slower_at_2", run.start),
                a >= 10.0 * b,
                format!("gap at t = 2: epgf {a:.3e}, fxtpgf {b:.3e}"),
            ));
        }
    }
    out
}

fn checks_case3(r: &CaseReport) -> Vec<Check> {
    let mut out = Vec::new();
    for name in ["g_d", "g_c1", "g_c2"] {
        for run in r.runs_of(name) {
            let t = run.settled_for_good();
            out.push(Check::new(
                format!("{name}.{}.settles", run.start),
                t.is_some(),
                format!("gradient norm stays below {:.0e} from {}", run.settle_tol, fmt_opt(t)),
            ));
        }
    }
    for run in r.runs_of("epa") {
        let t_end = run.run.trajectory.final_time();
        let m = run.min_residual_on(t_end / 2.0, t_end);
        out.push(Check::new(
            format!("epa.{}.plateaus", run.start),
            m > 1e-2,
            format!("min gradient norm on [{}, {t_end}] is {m:.3e}", t_end / 2.0),
        ));
    }
    out
}

/// Coefficient of determination of the least-squares line through `(t, y)`.
pub fn linear_fit_r2(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    if t.len() < 3 {
        return f64::NAN;
    }
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy * sxy / (sxx * syy)
}

fn checks_case4(r: &CaseReport, inst: &CaseInstance) -> Vec<Check> {
    let mut out = Vec::new();
    let settle = |name: &str, out: &mut Vec<Check>| -> Option<f64> {
        let run = r.runs_of(name).next()?;
        let t = run.settled_for_good();
        out.push(Check::new(
            format!("{name}.settles"),
            t.is_some(),
            format!("distance stays below {:.0e} from {}", run.settle_tol, fmt_opt(t)),
        ));
        let x = run.run.trajectory.final_state()?;
        let err = inst.reference_solution.as_ref().map_or(f64::NAN, |xs| (x - xs).amax());
        out.push(Check::new(format!("{name}.matches_dispatch"), err <= 1e-2, format!("max deviation {err:.3e}")));
        t
    };
    let t1 = settle("fxt_l1", &mut out);
    let t2 = settle("fxt_l2", &mut out);
    out.push(Check::new(
        "fxt_l2.faster_than_l1",
        matches!((t1, t2), (Some(a), Some(b)) if b < a),
        format!("L1 {}, L2 {}", fmt_opt(t1), fmt_opt(t2)),
    ));
    if let Some(lin) = r.runs_of("linear_l2").next() {
        let half = lin.run.trajectory.final_time() / 2.0;
        let (t, y): (Vec<f64>, Vec<f64>) = lin
            .times()
            .iter()
            .zip(&lin.run.residuals)
            .filter(|(t, r)| **t <= half && **r > 0.0)
            .map(|(t, r)| (*t, r.ln()))
            .unzip();
        let r2 = linear_fit_r2(&t, &y);
        out.push(Check::new("linear_l2.exponential_decay", r2 >= 0.95, format!("R² of log distance on [0, {half}] is {r2:.4}")));
        let window = t1.into_iter().chain(t2).fold(0.0, f64::max);
        let at = lin.residual_at(window);
        out.push(Check::new(
            "linear_l2.unsettled_in_window",
            at > lin.settle_tol,
            format!("distance {at:.3e} at t = {window:.2}"),
        ));
    }
    out
}
