//! Seeded generators of random test instances.
//!
//! Weakly coupled instances have a diagonally dominant sensitivity whose
//! off-diagonal part is shrunk until the coupling condition holds. Stable
//! plants are built around such a sensitivity with a contractive `A`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::analysis;
use crate::error::Result;
use crate::linalg;
use crate::objective::{LogCoshQuadratic, Moduli, ScalarCost, SeparableObjective};
use crate::plant::{self, LtiPlant, SensitivityModel};

/// Fraction of the coupling-condition right-hand side the off-diagonal
/// part is scaled to, at most.
const COUPLING_TARGET: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct Instance {
    pub obj: SeparableObjective,
    pub model: SensitivityModel,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PlantInstance {
    pub plant: LtiPlant,
    pub obj: SeparableObjective,
    pub model: SensitivityModel,
}

fn uniform_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, span: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-span..span))
}

fn uniform_vector<R: Rng>(rng: &mut R, n: usize, span: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-span..span))
}

/// Quadratic objective with `gamma1, gamma2` drawn from `[0.5, 2]`.
pub fn random_quadratic<R: Rng>(rng: &mut R, n: usize) -> SeparableObjective {
    let g1 = rng.random_range(0.5..=2.0);
    let g2 = rng.random_range(0.5..=2.0);
    SeparableObjective::quadratic(g1, g2, uniform_vector(rng, n, 1.0)).expect("positive weights")
}

/// Non-quadratic objective built from log-cosh costs with shared moduli.
pub fn random_log_cosh<R: Rng>(rng: &mut R, n: usize) -> SeparableObjective {
    let (a_u, b_u) = (rng.random_range(0.5..=2.0), rng.random_range(0.0..=1.0));
    let (a_y, b_y) = (rng.random_range(0.5..=2.0), rng.random_range(0.0..=1.0));
    let mut costs = |a: f64, b: f64| -> Vec<Arc<dyn ScalarCost>> {
        (0..n)
            .map(|_| Arc::new(LogCoshQuadratic { a, b, center: rng.random_range(-1.0..1.0) }) as Arc<dyn ScalarCost>)
            .collect()
    };
    let input = costs(a_u, b_u);
    let output = costs(a_y, b_y);
    let moduli = Moduli { l_u: a_u + b_u, m_u: a_u, l_y: a_y + b_y, m_y: a_y };
    SeparableObjective::new(input, output, moduli).expect("valid moduli")
}

/// Diagonally dominant sensitivity satisfying the coupling condition for `obj`.
pub fn weakly_coupled_sensitivity<R: Rng>(rng: &mut R, obj: &SeparableObjective) -> SensitivityModel {
    let n = obj.n();
    let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
        let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        s * rng.random_range(0.5..=2.0)
    }));
    let mut off = uniform_matrix(rng, n, n, 1.0);
    off.fill_diagonal(0.0);
    let mut scale = rng.random_range(0.2..=1.0);
    loop {
        let h = &diag + scale * &off;
        let model = SensitivityModel::from_h(h).expect("finite");
        let cc = analysis::coupling_condition(obj, &model);
        if cc.lhs <= COUPLING_TARGET * cc.rhs || scale < 1e-12 {
            return model;
        }
        scale *= 0.8;
    }
}

/// Random weakly coupled quadratic instance with `n` in `[2, 6]`.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let n = rng.random_range(2..=6);
    let obj = random_quadratic(rng, n);
    let model = weakly_coupled_sensitivity(rng, &obj);
    let d = uniform_vector(rng, n, 1.0);
    Instance { obj, model, d }
}

/// Random stable plant whose sensitivity is weakly coupled.
///
/// `A` is scaled to spectral norm in `[0.2, 0.8]`. With `C = [I + C1, C2]`
/// and `H_x = [X; Z]`, the input matrix `B = (I - A) H_x` reproduces the
/// target sensitivity exactly when `X` solves `(I + C1) X = H - C2 Z`.
pub fn random_stable_plant<R: Rng>(rng: &mut R) -> Result<PlantInstance> {
    let n = rng.random_range(2..=5);
    let extra = rng.random_range(0..=3);
    let ns = n + extra;
    let obj = random_quadratic(rng, n);
    let target = weakly_coupled_sensitivity(rng, &obj);

    let raw = uniform_matrix(rng, ns, ns, 1.0);
    let a = raw.clone() * (rng.random_range(0.2..=0.8) / linalg::sigma_max(&raw));
    let c1 = DMatrix::identity(n, n) + uniform_matrix(rng, n, n, 0.1);
    let c2 = uniform_matrix(rng, n, extra, 0.3);
    let z = uniform_matrix(rng, extra, n, 0.5);
    let x = linalg::solve(&c1, &(target.h() - &c2 * &z), "plant construction")?;
    let mut h_x = DMatrix::zeros(ns, n);
    h_x.view_mut((0, 0), (n, n)).copy_from(&x);
    h_x.view_mut((n, 0), (extra, n)).copy_from(&z);
    let b = (DMatrix::identity(ns, ns) - &a) * h_x;
    let mut c = DMatrix::zeros(n, ns);
    c.view_mut((0, 0), (n, n)).copy_from(&c1);
    c.view_mut((0, n), (n, extra)).copy_from(&c2);

    let plant = LtiPlant::new(a, b, c, DMatrix::zeros(n, n), uniform_vector(rng, n, 1.0))?;
    let model = plant::compute_sensitivity(&plant)?;
    Ok(PlantInstance { plant, obj, model })
}
