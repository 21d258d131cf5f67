//! CSV trajectories and matrices, TOML run configs, JSON instance dumps.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DirectionRule, DisturbanceModel, IntegratorConfig};
use crate::error::{validation, Error, Result};
use crate::flows::FlowSpec;
use crate::linalg;
use crate::objective::{least_squares_objective, quadratic_objective, Objective, Trajectory};

/// Current config schema; older or newer files are rejected.
pub const SCHEMA_VERSION: u32 = 1;

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| validation(format!("bad number {s:?}: {e}")))
}

/// Header `t,x_0,…,x_{n−1},f,grad_norm`; every value with 17 significant digits.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.push("f".into());
    header.push("grad_norm".into());
    w.write_record(&header)?;
    for i in 0..traj.len() {
        let mut row = Vec::with_capacity(n + 3);
        row.push(fmt_f64(traj.times[i]));
        row.extend(traj.states[i].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(traj.costs[i]));
        row.push(fmt_f64(traj.grad_norms[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectory_csv`]. The settling time is not stored in
/// the file and comes back as `None`.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[0] != "t" || &header[cols - 2] != "f" || &header[cols - 1] != "grad_norm" {
        return Err(validation(format!("{} is not a trajectory file", path.display())));
    }
    let (mut times, mut states, mut costs, mut grads) = (vec![], vec![], vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        let vals = rec.iter().map(parse_f64).collect::<Result<Vec<_>>>()?;
        times.push(vals[0]);
        states.push(DVector::from_column_slice(&vals[1..cols - 2]));
        costs.push(vals[cols - 2]);
        grads.push(vals[cols - 1]);
    }
    Trajectory::new(times, states, costs, grads, None)
}

/// Plain comma-separated rows, no header.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(parse_f64).collect::<Result<Vec<_>>>()?);
    }
    linalg::from_rows(&rows).map_err(|e| validation(format!("{}: {e}", path.display())))
}

/// A single row or a single column.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(validation(format!("{} holds a {}x{} matrix, not a vector", path.display(), m.nrows(), m.ncols())))
    }
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in linalg::to_rows(m) {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key=value` lines.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| validation(format!("summary line without '=': {l}")))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, s)?;
    Ok(())
}

/// A matrix given inline as rows or as a CSV path relative to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Rows(Vec<Vec<f64>>),
    File(PathBuf),
}

impl MatrixSource {
    pub fn load(&self, base: &Path) -> Result<DMatrix<f64>> {
        match self {
            MatrixSource::Rows(r) => linalg::from_rows(r),
            MatrixSource::File(p) => read_matrix_csv(&base.join(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Values(Vec<f64>),
    File(PathBuf),
}

impl VectorSource {
    pub fn load(&self, base: &Path) -> Result<DVector<f64>> {
        match self {
            VectorSource::Values(v) => Ok(DVector::from_vec(v.clone())),
            VectorSource::File(p) => read_vector_csv(&base.join(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `½xᵀQx + cᵀx`
    Quadratic { q: MatrixSource, c: VectorSource },
    /// `½‖Ax − b‖²`
    LeastSquares { a: MatrixSource, b: VectorSource },
}

impl ProblemSpec {
    pub fn build(&self, base: &Path) -> Result<Objective> {
        match self {
            ProblemSpec::Quadratic { q, c } => quadratic_objective(q.load(base)?, c.load(base)?),
            ProblemSpec::LeastSquares { a, b } => least_squares_objective(&a.load(base)?, &b.load(base)?),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSpec {
    #[default]
    None,
    Sinusoid { amplitude: Vec<f64>, #[serde(default = "unit")] frequency: f64 },
    StateScaledPlusBounded { epsilon: f64, dbar: f64, #[serde(default = "rotating")] direction: DirectionRule },
}

fn unit() -> f64 {
    1.0
}

fn rotating() -> DirectionRule {
    DirectionRule::Rotating
}

impl DisturbanceSpec {
    pub fn build(&self, dim: usize) -> Result<DisturbanceModel> {
        match self {
            DisturbanceSpec::None => Ok(DisturbanceModel::none()),
            DisturbanceSpec::Sinusoid { amplitude, frequency } => {
                let a = match amplitude.len() {
                    1 => DVector::from_element(dim, amplitude[0]),
                    k if k == dim => DVector::from_vec(amplitude.clone()),
                    k => return Err(validation(format!("amplitude has length {k}, expected 1 or {dim}"))),
                };
                DisturbanceModel::sinusoid(a, *frequency)
            }
            DisturbanceSpec::StateScaledPlusBounded { epsilon, dbar, direction } => {
                DisturbanceModel::state_scaled_plus_bounded(*epsilon, *dbar, direction.clone())
            }
        }
    }
}

/// Everything `solve` needs, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub flow: FlowSpec,
    pub x0: VectorSource,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Configuration(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Configuration(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.integrator.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Configuration(e.to_string()))
    }
}
