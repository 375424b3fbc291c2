//! Separable per-agent objectives `Phi_i(u_i, y_i) = f_i(u_i) + g_i(y_i)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::linalg;

/// A twice-differentiable scalar cost.
pub trait ScalarCost: Send + Sync + fmt::Debug {
    fn value(&self, v: f64) -> f64;
    fn derivative(&self, v: f64) -> f64;
}

/// `w/2 (v - center)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic1D {
    pub weight: f64,
    pub center: f64,
}

impl ScalarCost for Quadratic1D {
    fn value(&self, v: f64) -> f64 {
        0.5 * self.weight * (v - self.center).powi(2)
    }
    fn derivative(&self, v: f64) -> f64 {
        self.weight * (v - self.center)
    }
}

/// `a/2 (v - center)^2 + b log cosh(v - center)`.
///
/// Second derivative lies in `[a, a + b]`, so the cost is `a`-strongly convex
/// and `(a + b)`-smooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogCoshQuadratic {
    pub a: f64,
    pub b: f64,
    pub center: f64,
}

impl ScalarCost for LogCoshQuadratic {
    fn value(&self, v: f64) -> f64 {
        let z = v - self.center;
        // log cosh z = |z| + log1p(exp(-2|z|)) - ln 2
        let lc = z.abs() + (-2.0 * z.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        0.5 * self.a * z * z + self.b * lc
    }
    fn derivative(&self, v: f64) -> f64 {
        let z = v - self.center;
        self.a * z + self.b * z.tanh()
    }
}

/// Uniform smoothness and strong-convexity moduli shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moduli {
    pub l_u: f64,
    pub m_u: f64,
    pub l_y: f64,
    pub m_y: f64,
}

impl Moduli {
    pub fn validate(&self) -> Result<()> {
        let ok = |m: f64, l: f64| m > 0.0 && m <= l && l.is_finite();
        if !ok(self.m_u, self.l_u) {
            return Err(OfoError::invalid("m_u/L_u", "require 0 < m_u <= L_u"));
        }
        if !ok(self.m_y, self.l_y) {
            return Err(OfoError::invalid("m_y/L_y", "require 0 < m_y <= L_y"));
        }
        Ok(())
    }
}

/// `1/2 (gamma1 |u|^2 + gamma2 |y - y_ref|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub gamma1: f64,
    pub gamma2: f64,
    pub y_ref: Vec<f64>,
}

impl QuadraticObjective {
    pub fn y_ref(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y_ref)
    }

    pub fn into_separable(self) -> Result<SeparableObjective> {
        SeparableObjective::quadratic(self.gamma1, self.gamma2, self.y_ref())
    }
}

#[derive(Debug, Clone)]
pub struct SeparableObjective {
    input_costs: Vec<Arc<dyn ScalarCost>>,
    output_costs: Vec<Arc<dyn ScalarCost>>,
    moduli: Moduli,
    quadratic: Option<QuadraticObjective>,
}

impl SeparableObjective {
    /// Custom per-agent costs with user-declared moduli. The moduli are not
    /// inferred; use [`SeparableObjective::check_moduli`] to test them.
    pub fn new(
        input_costs: Vec<Arc<dyn ScalarCost>>,
        output_costs: Vec<Arc<dyn ScalarCost>>,
        moduli: Moduli,
    ) -> Result<Self> {
        if input_costs.is_empty() || input_costs.len() != output_costs.len() {
            return Err(OfoError::dims(
                "separable objective",
                format!("{} output costs", input_costs.len()),
                format!("{} output costs", output_costs.len()),
            ));
        }
        moduli.validate()?;
        Ok(Self {
            input_costs,
            output_costs,
            moduli,
            quadratic: None,
        })
    }

    pub fn quadratic(gamma1: f64, gamma2: f64, y_ref: DVector<f64>) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(OfoError::invalid("gamma1", "must be positive and finite"));
        }
        if !(gamma2 > 0.0 && gamma2.is_finite()) {
            return Err(OfoError::invalid("gamma2", "must be positive and finite"));
        }
        if !linalg::all_finite(&y_ref) {
            return Err(OfoError::invalid("y_ref", "non-finite entry"));
        }
        let input_costs = (0..y_ref.len())
            .map(|_| Arc::new(Quadratic1D { weight: gamma1, center: 0.0 }) as Arc<dyn ScalarCost>)
            .collect();
        let output_costs = y_ref
            .iter()
            .map(|&r| Arc::new(Quadratic1D { weight: gamma2, center: r }) as Arc<dyn ScalarCost>)
            .collect();
        let mut obj = Self::new(
            input_costs,
            output_costs,
            Moduli {
                l_u: gamma1,
                m_u: gamma1,
                l_y: gamma2,
                m_y: gamma2,
            },
        )?;
        obj.quadratic = Some(QuadraticObjective {
            gamma1,
            gamma2,
            y_ref: y_ref.iter().copied().collect(),
        });
        Ok(obj)
    }

    pub fn n(&self) -> usize {
        self.input_costs.len()
    }

    pub fn moduli(&self) -> Moduli {
        self.moduli
    }

    /// Quadratic parameters when this objective was built by
    /// [`SeparableObjective::quadratic`].
    pub fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        self.quadratic.as_ref()
    }

    pub fn input_cost(&self, i: usize) -> &dyn ScalarCost {
        self.input_costs[i].as_ref()
    }

    pub fn output_cost(&self, i: usize) -> &dyn ScalarCost {
        self.output_costs[i].as_ref()
    }

    pub fn grad_u(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(u, self.n(), "objective input")?;
        Ok(DVector::from_iterator(
            u.len(),
            u.iter().zip(&self.input_costs).map(|(&v, f)| f.derivative(v)),
        ))
    }

    pub fn grad_y(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(y, self.n(), "objective output")?;
        Ok(DVector::from_iterator(
            y.len(),
            y.iter().zip(&self.output_costs).map(|(&v, g)| g.derivative(v)),
        ))
    }

    /// Cost of agent `i` alone at `(u_i, y_i)`.
    pub fn agent_value(&self, i: usize, u_i: f64, y_i: f64) -> f64 {
        self.input_costs[i].value(u_i) + self.output_costs[i].value(y_i)
    }

    pub fn value(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        linalg::check_len(u, self.n(), "objective input")?;
        linalg::check_len(y, self.n(), "objective output")?;
        Ok((0..self.n()).map(|i| self.agent_value(i, u[i], y[i])).sum())
    }

    /// Samples `samples` random scalar pairs per agent in `[-span, span]` and
    /// checks the declared moduli against the derivatives. Returns the worst
    /// violation found (non-positive when the moduli hold).
    pub fn check_moduli<R: Rng>(&self, rng: &mut R, samples: usize, span: f64) -> f64 {
        let Moduli { l_u, m_u, l_y, m_y } = self.moduli;
        let mut worst = f64::NEG_INFINITY;
        let mut check = |cost: &dyn ScalarCost, m: f64, l: f64, a: f64, b: f64| {
            let dg = cost.derivative(a) - cost.derivative(b);
            let dx = a - b;
            let scale = 1e-12 * (1.0 + dx * dx);
            worst = worst.max(m * dx * dx - dg * dx - scale);
            worst = worst.max(dg.abs() - l * dx.abs() - scale);
        };
        for i in 0..self.n() {
            for _ in 0..samples {
                let (a, b) = (rng.random_range(-span..span), rng.random_range(-span..span));
                check(self.input_cost(i), m_u, l_u, a, b);
                let (a, b) = (rng.random_range(-span..span), rng.random_range(-span..span));
                check(self.output_cost(i), m_y, l_y, a, b);
            }
        }
        worst
    }
}
