use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fxtflow::bounds::{
    exponential_bound, feasibility_bound, finite_time_bound, newton_bound, nominal_bound, projected_bound,
    proximal_bound, robust_bound, ExponentialVariant, SettlingBound,
};
use fxtflow::cases::{run_case, RunOverrides};
use fxtflow::dynamics::{integrate_with_metric, SettleMetric};
use fxtflow::flows::FlowSpec;
use fxtflow::io::{write_json, write_summary, write_trajectory_csv, RunConfig};
use fxtflow::objective::quadratic_objective;
use fxtflow::problems::{build_case, build_case1_with};
use fxtflow::regret::{measure_regret, regret_bound, RegretKind};
use fxtflow::Error;
use nalgebra::{DMatrix, DVector};

#[derive(Parser)]
#[command(name = "fxtflow", version, about = "Fixed-time gradient flow solvers and case runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the four packaged cases and check its expected behaviour.
    Case {
        /// Case number, 1 to 4.
        id: u8,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Integrate a flow described by a TOML run configuration.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate a settling-time bound.
    Bounds {
        #[command(subcommand)]
        which: BoundCmd,
    },
    /// Tabulated regret bound, optionally measured on f = mu/2 |x|^2.
    Regret(RegretArgs),
}

#[derive(Args, Clone)]
struct RunFlags {
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "tmax")]
    t_max: Option<f64>,
    /// Settling tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Scales the robust gain margin; 1 uses the minimal robust gains.
    #[arg(long)]
    safety_multiplier: Option<f64>,
}

impl RunFlags {
    fn overrides(&self) -> RunOverrides {
        RunOverrides { dt: self.dt, t_max: self.t_max, settle_tol: self.tol }
    }
}

#[derive(Subcommand)]
enum BoundCmd {
    Nominal {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
    Robust {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        dbar: f64,
    },
    Newton {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
    Exponential {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long, value_enum, default_value = "l2")]
        variant: Variant,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    FiniteTime {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        v0: f64,
    },
    Projected {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda2: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
    Feasibility {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        lambda2: f64,
    },
    Proximal {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        lipschitz: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa_p: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa_q: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    L2,
    L1,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    G1,
    Gp,
    Gpq,
    Ge,
}

#[derive(Args)]
struct RegretArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    mu: f64,
    /// Initial gap f(x0) - f*.
    #[arg(long, default_value_t = 1.0)]
    v0: f64,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Also integrate the flow on f = mu/2 |x|^2 from a point with gap v0.
    #[arg(long)]
    measure: bool,
    #[arg(long, default_value_t = 1e-5)]
    dt: f64,
    #[arg(long = "tmax", default_value_t = 40.0)]
    t_max: f64,
}

/// Bad input from the user, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Validation(_)
            | Error::Configuration(_)
            | Error::Io(_)
            | Error::CertificateMissing(_)
            | Error::InvalidProjection(_)
            | Error::Infeasible(_)
            | Error::DistributednessViolation(_),
        ) => 2,
        _ => 1,
    }
}

fn print_entries(entries: &[(String, String)]) {
    for (k, v) in entries {
        println!("{k}={v}");
    }
}

fn cmd_case(id: u8, flags: &RunFlags) -> anyhow::Result<bool> {
    if !(1..=4).contains(&id) {
        return Err(usage(format!("unknown case {id}; expected 1 to 4")));
    }
    let inst = match (id, flags.safety_multiplier) {
        (1, Some(s)) => build_case1_with(flags.seed, s)?,
        _ => build_case(id, flags.seed)?,
    };
    let report = run_case(&inst, &flags.overrides())?;
    let dir = flags.out_dir.join(format!("case{id}"));
    report.write_outputs(&dir, &inst).with_context(|| format!("writing {}", dir.display()))?;
    print_entries(&report.summary_entries());
    for c in report.checks.iter().filter(|c| !c.pass) {
        log::error!("{} failed: {}", c.name, c.detail);
    }
    Ok(report.passed())
}

fn cmd_solve(path: &Path, flags: &RunFlags) -> anyhow::Result<bool> {
    if !path.is_file() {
        return Err(usage(format!("config file {} not found", path.display())));
    }
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(dt) = flags.dt {
        cfg.integrator.dt = dt;
    }
    if let Some(t) = flags.t_max {
        cfg.integrator.t_max = t;
    }
    if let Some(tol) = flags.tol {
        cfg.integrator.settle_tol = tol;
    }
    cfg.integrator.seed = flags.seed;
    cfg.integrator.validate()?;
    if let (Some(s), FlowSpec::Robust { safety_multiplier, .. }) = (flags.safety_multiplier, &mut cfg.flow) {
        *safety_multiplier = s;
    }
    let obj = cfg.problem.build(base)?;
    let x0 = cfg.x0.load(base)?;
    let dist = cfg.disturbance.build(obj.dim())?;
    let flow = cfg.flow.build(&obj, &dist)?;
    let run = integrate_with_metric(&flow, &x0, &obj, &dist, &cfg.integrator, &SettleMetric::GradientNorm)?;
    let traj = &run.trajectory;

    fs::create_dir_all(&flags.out_dir)?;
    write_trajectory_csv(&flags.out_dir.join("trajectory.csv"), traj)?;
    let fmt = |v: Option<f64>| v.map_or("none".to_string(), |t| format!("{t:.6}"));
    let mut entries = vec![
        ("flow".to_string(), flow.name().to_string()),
        ("settling_time".to_string(), fmt(traj.settling_time)),
        ("final_time".to_string(), format!("{:.6}", traj.final_time())),
        ("final_cost".to_string(), format!("{:.16e}", traj.costs.last().copied().unwrap_or(f64::NAN))),
        ("final_grad_norm".to_string(), format!("{:.6e}", traj.grad_norms.last().copied().unwrap_or(f64::NAN))),
    ];
    if let Some(rc) = flow.robust_condition() {
        entries.push(("robust_condition".to_string(), rc.pass.to_string()));
        entries.push(("bound".to_string(), fmt(rc.bound)));
    }
    if let Some(fs) = obj.f_star() {
        let m = measure_regret(traj, fs)?;
        entries.push(("regret".to_string(), format!("{:.16e}", m.value)));
        entries.push(("regret_truncated".to_string(), m.truncated.to_string()));
    }
    write_summary(&flags.out_dir.join("summary.txt"), &entries)?;
    write_json(&flags.out_dir.join("config.json"), &cfg)?;
    print_entries(&entries);
    Ok(true)
}

fn cmd_bounds(which: &BoundCmd) -> anyhow::Result<bool> {
    let b: SettlingBound = match *which {
        BoundCmd::Nominal { mu, sigma, rho, p, q } => nominal_bound(mu, sigma, rho, p, q)?,
        BoundCmd::Robust { mu, sigma, rho, q, epsilon, dbar } => robust_bound(mu, sigma, rho, q, epsilon, dbar)?,
        BoundCmd::Newton { sigma, rho, p, q } => newton_bound(sigma, rho, p, q)?,
        BoundCmd::Exponential { alpha, mu, variant, n } => {
            let v = match variant {
                Variant::L2 => ExponentialVariant::L2,
                Variant::L1 => ExponentialVariant::L1,
            };
            exponential_bound(alpha, mu, v, n)?
        }
        BoundCmd::FiniteTime { mu, sigma, p, v0 } => finite_time_bound(mu, sigma, p, v0)?,
        BoundCmd::Projected { mu, lambda2, sigma, rho, p, q } => projected_bound(mu, lambda2, sigma, rho, p, q)?,
        BoundCmd::Feasibility { sigma, rho, p, q, lambda2 } => feasibility_bound(sigma, rho, p, q, lambda2)?,
        BoundCmd::Proximal { mu, lambda, lipschitz, kappa_p, kappa_q, p, q } => {
            proximal_bound(mu, lambda, lipschitz, kappa_p, kappa_q, p, q)?
        }
    };
    print_entries(&[
        ("bound".into(), format!("{:.4}", b.value)),
        ("bound_exact".into(), format!("{:e}", b.value)),
        ("source".into(), b.source.to_string()),
    ]);
    Ok(true)
}

fn regret_kind(a: &RegretArgs) -> anyhow::Result<RegretKind> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--{name} is required for this kind")));
    Ok(match a.kind {
        KindArg::G1 => RegretKind::G1,
        KindArg::Gp => RegretKind::Gp { p: need(a.p, "p")? },
        KindArg::Gpq => RegretKind::Gpq { p: need(a.p, "p")?, q: need(a.q, "q")? },
        KindArg::Ge => RegretKind::Ge,
    })
}

fn cmd_regret(a: &RegretArgs) -> anyhow::Result<bool> {
    let kind = regret_kind(a)?;
    let (bound, bk) = regret_bound(kind, a.v0, a.mu)?;
    let mut entries = vec![
        ("bound".to_string(), format!("{bound}")),
        ("bound_kind".to_string(), serde_json::to_value(bk)?.as_str().unwrap_or_default().to_string()),
        ("v0".to_string(), format!("{}", a.v0)),
    ];
    let mut ok = true;
    if a.measure {
        let obj = quadratic_objective(DMatrix::from_element(1, 1, a.mu), DVector::zeros(1))?;
        let x0 = DVector::from_element(1, (2.0 * a.v0 / a.mu).sqrt());
        let cfg = fxtflow::dynamics::IntegratorConfig {
            dt: a.dt,
            t_max: a.t_max,
            settle_tol: 1e-7,
            record_stride: 10,
            max_step_norm: Some(1e-3),
            ..Default::default()
        };
        let flow = fxtflow::flows::first_order_flow(&obj, kind.protocol()?);
        let run = integrate_with_metric(&flow, &x0, &obj, &Default::default(), &cfg, &SettleMetric::GradientNorm)?;
        let m = measure_regret(&run.trajectory, 0.0)?;
        ok = m.value <= 1.05 * bound;
        entries.push(("measured".to_string(), format!("{}", m.value)));
        entries.push(("truncated".to_string(), m.truncated.to_string()));
        entries.push(("within_bound".to_string(), ok.to_string()));
    }
    print_entries(&entries);
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Case { id, run } => cmd_case(*id, run),
        Command::Solve { config, run } => cmd_solve(config, run),
        Command::Bounds { which } => cmd_bounds(which),
        Command::Regret(a) => cmd_regret(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
