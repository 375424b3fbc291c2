//! Global optimum, decentralized fixed point and the Nash-game view of the latter.
//!
//! The decentralized fixed point zeroes the pseudo-gradient
//! `F(u) = grad f(u) + H_diag^T grad g(H u + d)` of the game in which agent
//! `i` minimizes its own cost `f_i(u_i) + g_i((H u + d)_i)` over `u_i`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis;
use crate::error::{OfoError, Result};
use crate::linalg;
use crate::objective::SeparableObjective;
use crate::plant::SensitivityModel;

pub const SOLVER_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 1_000_000;
/// Grid points used by [`best_response_check`].
pub const BEST_RESPONSE_POINTS: usize = 201;
/// Payoff slack used by [`best_response_check`].
pub const BEST_RESPONSE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolutionKind {
    GlobalOptimum,
    DecentralizedFixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// Norm of the stationarity map at `u`.
    pub residual: f64,
    pub kind: SolutionKind,
    /// Whether uniqueness is certified (always for the global optimum; for the
    /// fixed point only under the coupling condition).
    pub unique: bool,
    /// Iterations used; zero for direct solves.
    pub iterations: usize,
}

fn check(obj: &SeparableObjective, model: &SensitivityModel, d: &DVector<f64>) -> Result<()> {
    if obj.n() != model.n() {
        return Err(OfoError::dims("equilibrium objective", format!("{} agents", model.n()), format!("{} agents", obj.n())));
    }
    linalg::check_len(d, model.n(), "equilibrium disturbance")
}

/// Gradient of the reduced objective `u -> Phi(u, H u + d)`.
pub fn reduced_gradient(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let y = model.steady_state_output(u, d)?;
    Ok(obj.grad_u(u)? + model.h().tr_mul(&obj.grad_y(&y)?))
}

/// Pseudo-gradient of the decentralized game.
pub fn pseudo_gradient(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let y = model.steady_state_output(u, d)?;
    Ok(obj.grad_u(u)? + model.h_diag().tr_mul(&obj.grad_y(&y)?))
}

pub fn nash_residual(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    check(obj, model, d)?;
    Ok(pseudo_gradient(obj, model, d, u)?.norm())
}

/// Reduced cost `f_i(u_i) + g_i((H u + d)_i)` of agent `i`.
pub fn agent_payoff(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: &DVector<f64>,
    i: usize,
) -> Result<f64> {
    let y = model.steady_state_output(u, d)?;
    Ok(obj.agent_value(i, u[i], y[i]))
}

/// Brute-force Nash check for agent `i`: no unilateral deviation on a
/// uniform grid over `[-radius, radius]` lowers its cost by more than
/// [`BEST_RESPONSE_SLACK`].
pub fn best_response_check(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: &DVector<f64>,
    i: usize,
    radius: f64,
) -> Result<bool> {
    check(obj, model, d)?;
    linalg::check_len(u, model.n(), "best-response candidate")?;
    if i >= model.n() {
        return Err(OfoError::invalid("agent", format!("index {i} out of range")));
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(OfoError::invalid("grid_radius", "must be positive"));
    }
    let base = agent_payoff(obj, model, d, u, i)?;
    let steps = (BEST_RESPONSE_POINTS - 1) as f64;
    let mut trial = u.clone();
    for k in 0..BEST_RESPONSE_POINTS {
        let delta = -radius + 2.0 * radius * k as f64 / steps;
        trial[i] = u[i] + delta;
        if agent_payoff(obj, model, d, &trial, i)? < base - BEST_RESPONSE_SLACK {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn global_optimum(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
) -> Result<EquilibriumSolution> {
    check(obj, model, d)?;
    let n = model.n();
    let h = model.h();
    let (u, iterations) = match obj.as_quadratic() {
        Some(q) => {
            let lhs = DMatrix::identity(n, n) * q.gamma1 + h.tr_mul(h) * q.gamma2;
            let rhs = h.tr_mul(&(q.y_ref() - d)) * q.gamma2;
            let u = refine(&lhs, &rhs, linalg::solve_vec(&lhs, &rhs, "optimality system")?);
            (u, 0)
        }
        None => {
            let mo = obj.moduli();
            let l = mo.l_u + linalg::sigma_max(h).powi(2) * mo.l_y;
            iterate(DVector::zeros(n), 1.0 / l, |u| reduced_gradient(obj, model, d, u))?
        }
    };
    finish(obj, model, d, u, SolutionKind::GlobalOptimum, true, iterations)
}

pub fn decentralized_fixed_point(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
) -> Result<EquilibriumSolution> {
    check(obj, model, d)?;
    let n = model.n();
    match obj.as_quadratic() {
        Some(q) => {
            let hd = model.h_diag();
            let lhs = DMatrix::identity(n, n) * q.gamma1 + hd * model.h() * q.gamma2;
            let rhs = hd * (q.y_ref() - d) * q.gamma2;
            let u = refine(&lhs, &rhs, linalg::solve_vec(&lhs, &rhs, "fixed-point system")?);
            let unique = analysis::coupling_condition(obj, model).satisfied;
            finish(obj, model, d, u, SolutionKind::DecentralizedFixedPoint, unique, 0)
        }
        None => fixed_point_iteration(obj, model, d, DVector::zeros(n)),
    }
}

/// Forward iteration `u <- u - tau F(u)` on the pseudo-gradient from `u0`.
///
/// Under the coupling condition `F` is `(m - c)`-strongly monotone and
/// `L_F`-Lipschitz and `tau = (m - c) / L_F^2` contracts.
pub fn fixed_point_iteration(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u0: DVector<f64>,
) -> Result<EquilibriumSolution> {
    check(obj, model, d)?;
    linalg::check_len(&u0, model.n(), "fixed-point start")?;
    let consts = analysis::monotonicity_constants(obj, model, analysis::ConstantConvention::Tight);
    let mo = obj.moduli();
    let lipschitz = mo.l_u + mo.l_y * linalg::sigma_max(model.h_diag()) * consts.sigma_max_h;
    let mu = consts.m - consts.c;
    let unique = mu > 0.0;
    let tau = if unique { mu / lipschitz.powi(2) } else { 1.0 / lipschitz };
    let (u, iterations) = iterate(u0, tau, |u| pseudo_gradient(obj, model, d, u))?;
    finish(obj, model, d, u, SolutionKind::DecentralizedFixedPoint, unique, iterations)
}

/// Runs [`fixed_point_iteration`] from every start concurrently.
pub fn multi_start_fixed_points(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    starts: Vec<DVector<f64>>,
) -> Vec<Result<EquilibriumSolution>> {
    starts
        .into_par_iter()
        .map(|u0| fixed_point_iteration(obj, model, d, u0))
        .collect()
}

fn iterate<F>(mut u: DVector<f64>, step: f64, mut map: F) -> Result<(DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut residual = f64::INFINITY;
    for it in 0..MAX_ITERATIONS {
        let g = map(&u)?;
        residual = g.norm();
        if residual <= SOLVER_TOL {
            return Ok((u, it));
        }
        if !residual.is_finite() {
            break;
        }
        u -= step * g;
    }
    Err(OfoError::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

// A couple of rounds of iterative refinement for ill-conditioned systems.
fn refine(lhs: &DMatrix<f64>, rhs: &DVector<f64>, mut x: DVector<f64>) -> DVector<f64> {
    for _ in 0..2 {
        let r = rhs - lhs * &x;
        match linalg::solve_vec(lhs, &r, "refinement") {
            Ok(dx) => x += dx,
            Err(_) => break,
        }
    }
    x
}

fn finish(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u: DVector<f64>,
    kind: SolutionKind,
    unique: bool,
    iterations: usize,
) -> Result<EquilibriumSolution> {
    let residual = match kind {
        SolutionKind::GlobalOptimum => reduced_gradient(obj, model, d, &u)?.norm(),
        SolutionKind::DecentralizedFixedPoint => pseudo_gradient(obj, model, d, &u)?.norm(),
    };
    if residual.is_nan() || residual > SOLVER_TOL {
        return Err(OfoError::NoConvergence { iterations, residual });
    }
    let y = model.steady_state_output(&u, d)?;
    Ok(EquilibriumSolution {
        u,
        y,
        residual,
        kind,
        unique,
        iterations,
    })
}
