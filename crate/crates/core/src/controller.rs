//! One-step update maps of the gradient-feedback controllers.
//!
//! Both controllers consume the measured output `y` as given; neither
//! recomputes it from `u`. The same maps therefore drive the algebraic loop
//! and the loop closed around the dynamic plant.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::linalg;
use crate::objective::SeparableObjective;
use crate::plant::SensitivityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    /// `u+ = u - eta (grad_u + H^T grad_y)`.
    Centralized,
    /// `u+ = u - eta (grad_u + H_diag^T grad_y)`, one independent update per agent.
    Decentralized,
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerMode::Centralized => "centralized",
            ControllerMode::Decentralized => "decentralized",
        })
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = OfoError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized" => Ok(Self::Centralized),
            "decentralized" => Ok(Self::Decentralized),
            other => Err(OfoError::invalid("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub eta: f64,
}

impl ControllerConfig {
    pub fn new(mode: ControllerMode, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(OfoError::invalid("eta", format!("step size must be positive, got {eta}")));
        }
        Ok(Self { mode, eta })
    }

    pub fn centralized(eta: f64) -> Result<Self> {
        Self::new(ControllerMode::Centralized, eta)
    }

    pub fn decentralized(eta: f64) -> Result<Self> {
        Self::new(ControllerMode::Decentralized, eta)
    }

    /// Dispatches on `mode`.
    pub fn step(
        &self,
        obj: &SeparableObjective,
        model: &SensitivityModel,
        u: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        match self.mode {
            ControllerMode::Centralized => centralized_step(self, obj, model, u, y),
            ControllerMode::Decentralized => decentralized_step(self, obj, model, u, y),
        }
    }
}

fn check_inputs(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    let n = model.n();
    if obj.n() != n {
        return Err(OfoError::dims("controller objective", format!("{n} agents"), format!("{} agents", obj.n())));
    }
    linalg::check_len(u, n, "controller input")?;
    linalg::check_len(y, n, "controller measurement")
}

fn expect_mode(cfg: &ControllerConfig, mode: ControllerMode) -> Result<()> {
    if cfg.mode == mode {
        Ok(())
    } else {
        Err(OfoError::invalid("mode", format!("expected {mode}, config says {}", cfg.mode)))
    }
}

pub fn centralized_step(
    cfg: &ControllerConfig,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    expect_mode(cfg, ControllerMode::Centralized)?;
    check_inputs(obj, model, u, y)?;
    let direction = obj.grad_u(u)? + model.h().tr_mul(&obj.grad_y(y)?);
    Ok(u - cfg.eta * direction)
}

/// Agent `i` uses only `u_i`, `y_i` and `H_ii`.
pub fn decentralized_step(
    cfg: &ControllerConfig,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    expect_mode(cfg, ControllerMode::Decentralized)?;
    check_inputs(obj, model, u, y)?;
    let h_diag = model.h_diag();
    Ok(DVector::from_fn(u.len(), |i, _| {
        agent_update(cfg.eta, obj, i, h_diag[(i, i)], u[i], y[i])
    }))
}

/// Local decentralized update of a single agent.
pub fn agent_update(eta: f64, obj: &SeparableObjective, i: usize, h_ii: f64, u_i: f64, y_i: f64) -> f64 {
    let g = obj.input_cost(i).derivative(u_i) + h_ii * obj.output_cost(i).derivative(y_i);
    u_i - eta * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_by_two() -> (SeparableObjective, SensitivityModel) {
        (
            SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(2)).unwrap(),
            SensitivityModel::from_h(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap(),
        )
    }

    #[test]
    fn origin_is_fixed() {
        let (obj, model) = two_by_two();
        let z = DVector::zeros(2);
        assert_eq!(centralized_step(&ControllerConfig::centralized(0.3).unwrap(), &obj, &model, &z, &z).unwrap(), z);
    }

    #[test]
    fn scalar_instance() {
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(1)).unwrap();
        let model = SensitivityModel::from_h(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let u = DVector::from_element(1, 1.0);
        let y = DVector::from_element(1, 2.0);
        let c = centralized_step(&ControllerConfig::centralized(0.1).unwrap(), &obj, &model, &u, &y).unwrap();
        let d = decentralized_step(&ControllerConfig::decentralized(0.1).unwrap(), &obj, &model, &u, &y).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert_eq!(c, d);
    }

    #[test]
    fn coupled_instance() {
        let (obj, model) = two_by_two();
        let u = DVector::from_vec(vec![1.0, 1.0]);
        let y = DVector::from_vec(vec![1.5, 1.0]);
        let c = centralized_step(&ControllerConfig::centralized(0.1).unwrap(), &obj, &model, &u, &y).unwrap();
        assert!((c - DVector::from_vec(vec![0.75, 0.725])).norm() < 1e-14);
        let d = decentralized_step(&ControllerConfig::decentralized(0.1).unwrap(), &obj, &model, &u, &y).unwrap();
        assert!((d - DVector::from_vec(vec![0.75, 0.8])).norm() < 1e-14);
    }

    #[test]
    fn decentralized_ignores_other_measurements() {
        let (obj, model) = two_by_two();
        let cfg = ControllerConfig::decentralized(0.1).unwrap();
        let u = DVector::from_vec(vec![1.0, 1.0]);
        let a = decentralized_step(&cfg, &obj, &model, &u, &DVector::from_vec(vec![1.5, 1.0])).unwrap();
        let b = decentralized_step(&cfg, &obj, &model, &u, &DVector::from_vec(vec![1.5, -40.0])).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn bad_config_and_mode() {
        assert!(ControllerConfig::centralized(0.0).is_err());
        assert!(ControllerConfig::centralized(f64::NAN).is_err());
        let (obj, model) = two_by_two();
        let z = DVector::zeros(2);
        let cfg = ControllerConfig::decentralized(0.1).unwrap();
        assert!(centralized_step(&cfg, &obj, &model, &z, &z).is_err());
        assert!(matches!(
            cfg.step(&obj, &model, &DVector::zeros(3), &z),
            Err(OfoError::DimensionMismatch { .. })
        ));
        assert_eq!("Decentralized".parse::<ControllerMode>().unwrap(), ControllerMode::Decentralized);
    }
}
