//! Static regret `∫₀ᵀ (f(x(t)) − f*) dt` and its closed-form bounds.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, DisturbanceModel, IntegratorConfig};
use crate::error::{validation, Error, Result};
use crate::flows::first_order_flow;
use crate::objective::{Objective, Trajectory};
use crate::protocols::{Protocol, ProtocolSum};

/// Gradient maps with tabulated regret bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegretKind {
    /// `g(y) = y`
    G1,
    /// `y/‖y‖₂^{1−p}`
    Gp { p: f64 },
    /// `y/‖y‖₂^{1−p} + ‖y‖₂^{q−1}y`
    Gpq { p: f64, q: f64 },
    /// `y e^{‖y‖₂}/‖y‖₂`
    Ge,
}

impl RegretKind {
    pub fn protocol(&self) -> Result<ProtocolSum> {
        Ok(match *self {
            RegretKind::G1 => Protocol::identity().into(),
            RegretKind::Gp { p } => Protocol::rescaled(p, 2.0)?.into(),
            RegretKind::Gpq { p, q } => ProtocolSum::pair(Protocol::rescaled(p, 2.0)?, Protocol::power(q, 2.0)?),
            RegretKind::Ge => Protocol::exponential_l2().into(),
        })
    }
}

/// Which closed form produced a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    G1,
    Gp,
    GpqBetaLt2,
    GpqBetaEq2,
    GpqBetaGt2,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub measured: f64,
    pub bound: Option<f64>,
    pub bound_kind: Option<BoundKind>,
    pub v0: f64,
    /// The run never settled, so the integral stops at `t_max`.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretMeasurement {
    pub value: f64,
    pub truncated: bool,
}

/// Trapezoidal integral of `max(cost − f*, 0)` up to the settling time, or
/// the last sample when the run did not settle.
pub fn measure_regret(traj: &Trajectory, f_star: f64) -> Result<RegretMeasurement> {
    if traj.is_empty() {
        return Err(validation("trajectory is empty"));
    }
    let end = traj.settling_time.unwrap_or_else(|| traj.final_time());
    let truncated = traj.settling_time.is_none();
    if truncated {
        log::warn!("trajectory did not settle; regret is truncated at t = {end}");
    }
    let gap = |i: usize| (traj.costs[i] - f_star).max(0.0);
    let mut total = 0.0;
    for i in 1..traj.len() {
        let (t0, t1) = (traj.times[i - 1], traj.times[i]);
        if t0 >= end {
            break;
        }
        if t1 <= end {
            total += 0.5 * (t1 - t0) * (gap(i - 1) + gap(i));
        } else {
            let w = (end - t0) / (t1 - t0);
            let g_end = gap(i - 1) + w * (gap(i) - gap(i - 1));
            total += 0.5 * (end - t0) * (gap(i - 1) + g_end);
        }
    }
    Ok(RegretMeasurement { value: total, truncated })
}

fn check_pq(p: f64, q: Option<f64>) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(validation(format!("p must lie in [0, 1), got {p}")));
    }
    if let Some(q) = q {
        if !(q > 1.0 && q.is_finite()) {
            return Err(validation(format!("q must exceed 1, got {q}")));
        }
    }
    Ok(())
}

fn gp_bound(v0: f64, mu: f64, p: f64) -> f64 {
    let alpha = (p + 1.0) / 2.0;
    let a = (2.0 * mu).powf(alpha);
    v0.powf(2.0 - alpha) / (a * (2.0 - alpha))
}

/// Regret bound from the table of typical maps, with `V₀ = f(x₀) − f*`.
///
/// For `g_{p,q}` with `V₀ ≤ 1` the `g_p` form is returned.
pub fn regret_bound(kind: RegretKind, v0: f64, mu: f64) -> Result<(f64, BoundKind)> {
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(validation(format!("V0 must be nonnegative, got {v0}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(validation(format!("mu must be positive, got {mu}")));
    }
    Ok(match kind {
        RegretKind::G1 => (v0 / (2.0 * mu), BoundKind::G1),
        RegretKind::Gp { p } => {
            check_pq(p, None)?;
            (gp_bound(v0, mu, p), BoundKind::Gp)
        }
        RegretKind::Gpq { p, q } => {
            check_pq(p, Some(q))?;
            if v0 <= 1.0 {
                return Ok((gp_bound(v0, mu, p), BoundKind::Gp));
            }
            let alpha = (p + 1.0) / 2.0;
            let beta = (q + 1.0) / 2.0;
            let (a, b) = ((2.0 * mu).powf(alpha), (2.0 * mu).powf(beta));
            let head = 1.0 / (a * (2.0 - alpha));
            if beta < 2.0 {
                (head + v0.powf(2.0 - beta) / (b * (2.0 - beta)), BoundKind::GpqBetaLt2)
            } else if beta == 2.0 {
                (head + v0.ln_1p() / b, BoundKind::GpqBetaEq2)
            } else {
                (head + 1.0 / (b * (beta - 2.0)), BoundKind::GpqBetaGt2)
            }
        }
        RegretKind::Ge => (1.0 / (mu * mu), BoundKind::Ge),
    })
}

/// `F(V₀, β) = ((1 + V₀^{β−1})^{(β−2)/(β−1)} − 1) / (V₀^{β−2}(β−2))` for `β ≠ 2`.
pub fn sharp_f(v0: f64, beta: f64) -> Result<f64> {
    if !(beta > 1.0) || beta == 2.0 {
        return Err(validation(format!("need beta > 1 and beta != 2, got {beta}")));
    }
    if !(v0 > 0.0) {
        return Err(validation(format!("V0 must be positive, got {v0}")));
    }
    let e = (beta - 2.0) / (beta - 1.0);
    Ok(((1.0 + v0.powf(beta - 1.0)).powf(e) - 1.0) / (v0.powf(beta - 2.0) * (beta - 2.0)))
}

/// The unrelaxed `g_{p,q}` bound for `V₀ > 1`: `1/(a(2−α)) + F(V₀, β)/b`, or
/// `1/(a(2−α)) + ln(1+V₀)/b` when `β = 2`.
pub fn sharp_gpq_regret_bound(v0: f64, mu: f64, p: f64, q: f64) -> Result<f64> {
    check_pq(p, Some(q))?;
    if !(mu > 0.0) {
        return Err(validation(format!("mu must be positive, got {mu}")));
    }
    if v0 <= 1.0 {
        return Ok(gp_bound(v0, mu, p));
    }
    let alpha = (p + 1.0) / 2.0;
    let beta = (q + 1.0) / 2.0;
    let (a, b) = ((2.0 * mu).powf(alpha), (2.0 * mu).powf(beta));
    let tail = if beta == 2.0 { v0.ln_1p() } else { sharp_f(v0, beta)? };
    Ok(1.0 / (a * (2.0 - alpha)) + tail / b)
}

/// One row of a compliance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub x0: Vec<f64>,
    pub report: RegretReport,
    /// `measured ≤ bound·1.05 + 1e-3`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceTable {
    pub kind: RegretKind,
    pub rows: Vec<ComplianceRow>,
    /// Whether the bound changes with `V₀` across the rows.
    pub bound_grows_with_v0: bool,
}

impl ComplianceTable {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Runs `ẋ = −g(∇f(x))` from each start and compares measured regret with
/// the tabulated bound. Needs `f*` and a PL constant on `obj`.
pub fn regret_compliance(
    obj: &Objective,
    kind: RegretKind,
    initializations: &[DVector<f64>],
    cfg: &IntegratorConfig,
) -> Result<ComplianceTable> {
    let f_star = obj.f_star().ok_or(Error::CertificateMissing("f_star"))?;
    let mu = obj.pl_mu().ok_or(Error::CertificateMissing("pl_mu"))?;
    let flow = first_order_flow(obj, kind.protocol()?);
    let mut rows = Vec::with_capacity(initializations.len());
    for x0 in initializations {
        let v0 = (obj.value(x0) - f_star).max(0.0);
        let traj = integrate(&flow, x0, obj, &DisturbanceModel::none(), cfg)?;
        let m = measure_regret(&traj, f_star)?;
        let (bound, bk) = regret_bound(kind, v0, mu)?;
        rows.push(ComplianceRow {
            x0: x0.iter().copied().collect(),
            pass: m.value <= bound * 1.05 + 1e-3,
            report: RegretReport { measured: m.value, bound: Some(bound), bound_kind: Some(bk), v0, truncated: m.truncated },
        });
    }
    let bounds: Vec<f64> = rows.iter().filter_map(|r| r.report.bound).collect();
    let bound_grows_with_v0 = bounds.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12 * w[0].abs().max(1.0));
    Ok(ComplianceTable { kind, rows, bound_grows_with_v0 })
}
