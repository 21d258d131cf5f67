use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::*;

/// `Ax = b` given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LinearConstraint {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let a = linalg::from_rows(&self.a)?;
        if a.nrows() != self.b.len() {
            return Err(validation(format!("A has {} rows but b has length {}", a.nrows(), self.b.len())));
        }
        Ok((a, DVector::from_vec(self.b.clone())))
    }
}

fn one() -> f64 {
    1.0
}

/// Serializable description of a flow; `build` binds it to an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FlowSpec {
    FirstOrder { g: ProtocolSum },
    Robust {
        g0: Protocol,
        gq: Protocol,
        #[serde(default = "one")]
        safety_multiplier: f64,
    },
    Newton { g: ProtocolSum },
    Projected { constraint: LinearConstraint, g: ProtocolSum },
    Feasibility { constraint: LinearConstraint, ghat: ProtocolSum },
    FreeInit { constraint: LinearConstraint, g: ProtocolSum, ghat: ProtocolSum },
    Proximal { h: ProxFunction, lambda: f64, kappa_p: f64, kappa_q: f64, p: f64, q: f64 },
    Epgf { h: ProxFunction, lambda: f64 },
}

impl FlowSpec {
    pub fn build(&self, obj: &Objective, dist: &DisturbanceModel) -> Result<Flow> {
        match self {
            FlowSpec::FirstOrder { g } => Ok(first_order_flow(obj, g.clone())),
            FlowSpec::Robust { g0, gq, safety_multiplier } => {
                let d = (!dist.is_none()).then_some((dist, *safety_multiplier));
                robust_flow(obj, *g0, *gq, d)
            }
            FlowSpec::Newton { g } => newton_flow(obj, g.clone()),
            FlowSpec::Projected { constraint, g } => {
                let (a, _) = constraint.matrices()?;
                let p = orthogonal_projector(&a)?;
                projected_flow(obj, &a, p, g.clone())
            }
            FlowSpec::Feasibility { constraint, ghat } => {
                let (a, b) = constraint.matrices()?;
                feasibility_flow(&a, &b, ghat.clone())
            }
            FlowSpec::FreeInit { constraint, g, ghat } => {
                let (a, b) = constraint.matrices()?;
                let p = orthogonal_projector(&a)?;
                free_init_flow(obj, &a, &b, p, g.clone(), ghat.clone())
            }
            FlowSpec::Proximal { h, lambda, kappa_p, kappa_q, p, q } => {
                proximal_flow(obj, h, *lambda, *kappa_p, *kappa_q, *p, *q)
            }
            FlowSpec::Epgf { h, lambda } => epgf_flow(obj, h, *lambda),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::quadratic_objective;
    use nalgebra::dvector;

    #[test]
    fn spec_round_trip_and_build() {
        let text = r#"{"variant":"projected","constraint":{"a":[[1.0,1.0]],"b":[2.0]},
            "g":[{"kind":"rescaled","p":0.0,"r":2.0},{"kind":"power","q":2.0,"r":2.0,"scale":2.0}]}"#;
        let spec: FlowSpec = serde_json::from_str(text).unwrap();
        let again: FlowSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        let obj = quadratic_objective(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let flow = spec.build(&obj, &DisturbanceModel::none()).unwrap();
        // P∇f(2, 0) = (1, −1)
        let r = std::f64::consts::SQRT_2;
        let want = dvector![-1.0, 1.0] * (1.0 / r + 2.0 * r);
        assert!((flow.eval(&dvector![2.0, 0.0], 0.0).unwrap() - want).norm() < 1e-12);
    }

    #[test]
    fn robust_spec_defaults_multiplier() {
        let spec: FlowSpec = serde_json::from_str(
            r#"{"variant":"robust","g0":{"kind":"signum"},"gq":{"kind":"componentwise_power","alpha":1.5}}"#,
        )
        .unwrap();
        assert!(matches!(spec, FlowSpec::Robust { safety_multiplier, .. } if safety_multiplier == 1.0));
    }

    #[test]
    fn ragged_constraint_rejected() {
        let c = LinearConstraint { a: vec![vec![1.0, 0.0], vec![1.0]], b: vec![0.0, 0.0] };
        assert!(c.matrices().is_err());
    }
}
