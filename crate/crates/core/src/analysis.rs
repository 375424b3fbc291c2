//! Closed-form stability and sub-optimality certificates.
//!
//! Every aggregate constant comes in two conventions. [`ConstantConvention::Paper`]
//! carries a factor `N` (number of agents) on every objective modulus, e.g.
//! `m = N m_u + N sigma_min(H)^2 m_y`. [`ConstantConvention::Tight`] drops it,
//! which is what the blockwise-separable structure actually supports. The
//! coupling condition is the same under both since `N` cancels. Tight is the
//! convention the runtime checks rely on; Paper is always reported alongside.
//!
//! For the dynamic interconnection the Tight convention additionally keeps
//! the `L_y` factor in `a4` and replaces `sigma_min(C)` with the largest
//! lower gain of `C` (zero when `C` is wide), so that the resulting `Xi`
//! bounds the one-step growth of the combined error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equilibria;
use crate::error::{OfoError, Result};
use crate::linalg;
use crate::objective::SeparableObjective;
use crate::plant::{self, LtiPlant, SensitivityModel};
use crate::sim::Trajectory;

/// Slack for the per-step tracking inequality.
pub const TRACKING_SLACK: f64 = 1e-9;
/// Relative tolerance under which `L == m` is treated as degenerate.
const DEGENERATE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantConvention {
    Paper,
    Tight,
}

impl ConstantConvention {
    pub const BOTH: [ConstantConvention; 2] = [ConstantConvention::Tight, ConstantConvention::Paper];

    /// Multiplier on the objective moduli for `n` agents.
    pub fn factor(self, n: usize) -> f64 {
        match self {
            ConstantConvention::Paper => n as f64,
            ConstantConvention::Tight => 1.0,
        }
    }
}

impl std::str::FromStr for ConstantConvention {
    type Err = OfoError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::Paper),
            "tight" => Ok(Self::Tight),
            other => Err(OfoError::invalid("convention", format!("unknown convention `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityConstants {
    /// Strong convexity of the reduced objective.
    pub m: f64,
    /// Penalty from the ignored cross-coupling.
    pub c: f64,
    /// Smoothness of the reduced objective.
    pub l: f64,
    pub sigma_max_h: f64,
    pub sigma_min_h: f64,
    pub sigma_max_offdiag: f64,
    pub sigma_max_hdiag: f64,
    pub convention: ConstantConvention,
    pub n_factor: f64,
}

impl MonotonicityConstants {
    /// Strong-monotonicity modulus `m - c` of the decentralized update map.
    pub fn monotonicity(&self) -> f64 {
        self.m - self.c
    }
}

pub fn monotonicity_constants(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    convention: ConstantConvention,
) -> MonotonicityConstants {
    let mo = obj.moduli();
    let n = convention.factor(model.n());
    let sigma_max_h = linalg::sigma_max(model.h());
    let sigma_min_h = linalg::sigma_min(model.h());
    let sigma_max_offdiag = linalg::sigma_max(&model.off_diagonal());
    let sigma_max_hdiag = linalg::sigma_max(model.h_diag());
    MonotonicityConstants {
        m: n * mo.m_u + n * sigma_min_h.powi(2) * mo.m_y,
        c: n * sigma_max_offdiag * sigma_max_h * mo.l_y,
        l: n * mo.l_u + n * sigma_max_h.powi(2) * mo.l_y,
        sigma_max_h,
        sigma_min_h,
        sigma_max_offdiag,
        sigma_max_hdiag,
        convention,
        n_factor: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingCondition {
    pub satisfied: bool,
    /// `sigma_max(H - H_diag)`.
    pub lhs: f64,
    /// `(m_u + sigma_min(H)^2 m_y) / (sigma_max(H) L_y)`.
    pub rhs: f64,
}

impl CouplingCondition {
    /// Same condition evaluated from either convention's aggregate constants.
    pub fn from_constants(consts: &MonotonicityConstants, l_y: f64) -> Self {
        let lhs = consts.sigma_max_offdiag;
        let rhs = consts.m / (consts.n_factor * consts.sigma_max_h * l_y);
        Self {
            satisfied: lhs <= rhs,
            lhs,
            rhs,
        }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

pub fn coupling_condition(obj: &SeparableObjective, model: &SensitivityModel) -> CouplingCondition {
    let consts = monotonicity_constants(obj, model, ConstantConvention::Tight);
    CouplingCondition::from_constants(&consts, obj.moduli().l_y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionRate {
    pub eta: f64,
    pub rho: f64,
    pub admissible: bool,
    /// Upper end of the admissible step interval; `None` stands for `+inf`
    /// (the degenerate `L == m` case).
    pub eta_upper: Option<f64>,
    pub degenerate: bool,
}

/// `rho(eta) = sqrt(1 - 2 m eta + L^2 eta^2) + c eta` on the step interval
/// `(0, 2 (m - c) / (L^2 - m^2))`.
pub fn contraction_rate(consts: &MonotonicityConstants, eta: f64) -> Result<ContractionRate> {
    let MonotonicityConstants { m, c, l, .. } = *consts;
    if m <= c {
        return Err(OfoError::CouplingTooStrong { m, c });
    }
    let rho = (1.0 - 2.0 * m * eta + l * l * eta * eta).max(0.0).sqrt() + c * eta;
    let denom = l * l - m * m;
    let degenerate = denom <= DEGENERATE_RTOL * l * l;
    let eta_upper = (!degenerate).then(|| 2.0 * (m - c) / denom);
    let in_interval = eta > 0.0 && eta_upper.is_none_or(|up| eta < up);
    Ok(ContractionRate {
        eta,
        rho,
        admissible: in_interval && rho < 1.0,
        eta_upper,
        degenerate,
    })
}

/// `|(H^T - H_diag) grad g(y)|`, the gradient mismatch the decentralized
/// controller leaves uncorrected at output `y`.
pub fn coupling_gradient_norm(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    y: &DVector<f64>,
) -> Result<f64> {
    let coupling = model.h().transpose() - model.h_diag();
    Ok((coupling * obj.grad_y(y)?).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingCheck {
    pub rho: f64,
    pub admissible: bool,
    /// `eta |(H^T - H_diag) grad g(y*)|`.
    pub bias: f64,
    /// `|u_{k+1} - u*| <= rho |u_k - u*| + bias + slack`, one entry per transition.
    pub one_step: Vec<bool>,
    /// The telescoped bound at every recorded `k`.
    pub telescoped: Vec<bool>,
}

impl TrackingCheck {
    pub fn all_pass(&self) -> bool {
        self.one_step.iter().chain(&self.telescoped).all(|&b| b)
    }
}

/// Checks a decentralized algebraic trajectory against the linear-rate
/// tracking bound around the global optimum `u_star`.
pub fn tracking_inequality_check(
    trajectory: &Trajectory,
    u_star: &DVector<f64>,
    y_star: &DVector<f64>,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    consts: &MonotonicityConstants,
    eta: f64,
) -> Result<TrackingCheck> {
    let rate = contraction_rate(consts, eta)?;
    let rho = rate.rho;
    let bias = eta * coupling_gradient_norm(obj, model, y_star)?;
    let dist: Vec<f64> = trajectory.u.iter().map(|u| (u - u_star).norm()).collect();
    let one_step = dist
        .windows(2)
        .map(|w| w[1] <= rho * w[0] + bias + TRACKING_SLACK)
        .collect();
    let d0 = dist.first().copied().unwrap_or(0.0);
    let mut geometric_sum = 0.0;
    let mut rho_k = 1.0;
    let telescoped = dist
        .iter()
        .map(|&dk| {
            let ok = dk <= rho_k * d0 + bias * geometric_sum + TRACKING_SLACK;
            geometric_sum += rho_k;
            rho_k *= rho;
            ok
        })
        .collect();
    Ok(TrackingCheck {
        rho,
        admissible: rate.admissible,
        bias,
        one_step,
        telescoped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuboptimalityBound {
    /// `|(H^T - H_diag) grad g(y_inf)| / sqrt(2 m - 1)`; NaN when `2 m <= 1`.
    pub bound: f64,
    /// `2 m > 1` and the coupling condition holds.
    pub applicable: bool,
    pub coupling_gradient_norm: f64,
    pub m: f64,
    pub convention: ConstantConvention,
}

pub fn suboptimality_bound(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    u_inf: &DVector<f64>,
    consts: &MonotonicityConstants,
) -> Result<SuboptimalityBound> {
    let y_inf = model.steady_state_output(u_inf, d)?;
    let g = coupling_gradient_norm(obj, model, &y_inf)?;
    let denom = 2.0 * consts.m - 1.0;
    let bound = if denom > 0.0 { g / denom.sqrt() } else { f64::NAN };
    let coupled_ok = CouplingCondition::from_constants(consts, obj.moduli().l_y).satisfied;
    Ok(SuboptimalityBound {
        bound,
        applicable: denom > 0.0 && coupled_ok,
        coupling_gradient_norm: g,
        m: consts.m,
        convention: consts.convention,
    })
}

/// Constants of the two-by-two contraction matrix for the dynamic loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LtiConstants {
    pub m_prime: f64,
    pub l_prime: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// `1 - lambda_max(A^T A)`.
    pub t: f64,
    pub lambda_max_ata: f64,
    pub convention: ConstantConvention,
}

impl LtiConstants {
    /// `a3 m' + 2 a1 a2 - a4 L'`, whose sign selects the step-size branch.
    pub fn quadratic_coefficient(&self) -> f64 {
        self.a3 * self.m_prime + 2.0 * self.a1 * self.a2 - self.a4 * self.l_prime
    }

    /// `a4 m' + a2^2 + t L'`.
    pub fn linear_coefficient(&self) -> f64 {
        self.a4 * self.m_prime + self.a2 * self.a2 + self.t * self.l_prime
    }

    pub fn xi(&self, eta: f64) -> [[f64; 2]; 2] {
        let off = self.a1 * eta * eta + self.a2 * eta;
        [
            [self.lambda_max_ata + self.a3 * eta * eta + self.a4 * eta, off],
            [off, 1.0 - self.m_prime * eta + self.l_prime * eta * eta],
        ]
    }
}

fn state_sensitivity(plant: &LtiPlant, model: &SensitivityModel) -> Result<DMatrix<f64>> {
    match model.h_x() {
        Some(h_x) => Ok(h_x.clone()),
        None => Ok(plant::compute_sensitivity(plant)?.h_x().cloned().expect("state sensitivity")),
    }
}

pub fn lti_constants(
    plant: &LtiPlant,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    convention: ConstantConvention,
) -> Result<LtiConstants> {
    let mo = obj.moduli();
    let n = convention.factor(model.n());
    let h_x = state_sensitivity(plant, model)?;
    let a = plant.a();
    let c_mat = plant.c();

    let s_h = linalg::sigma_max(model.h());
    let s_hmin = linalg::sigma_min(model.h());
    let s_hd = linalg::sigma_max(model.h_diag());
    let s_off = linalg::sigma_max(&model.off_diagonal());
    let s_c = linalg::sigma_max(c_mat);
    let s_hxa = linalg::sigma_max(&h_x.tr_mul(a));
    let lam_hx = linalg::lambda_max_sym(&(h_x.tr_mul(&h_x) + DMatrix::identity(h_x.ncols(), h_x.ncols())));
    let lambda_max_ata = linalg::lambda_max_sym(&a.tr_mul(a));

    let (c_low, a4_ly) = match convention {
        ConstantConvention::Paper => (linalg::sigma_min(c_mat), 1.0),
        ConstantConvention::Tight => (linalg::lower_gain(c_mat), mo.l_y),
    };

    // Lipschitz constant of the update direction in u and in x - H_x u.
    let alpha = n * mo.l_u + n * mo.l_y * s_hd * s_h;
    let beta = n * mo.l_y * s_hd * s_c;

    let m_prime = 2.0 * (n * mo.m_u + n * mo.m_y * s_hmin * s_hmin - n * mo.l_y * s_off * s_h);
    let l_prime = lam_hx * alpha * alpha;
    let a1 = lam_hx * beta * alpha;
    let a2 = s_hxa * alpha + 2.0 * n * mo.m_y * s_c * s_h + n * mo.l_y * s_c * (s_off + s_h);
    let a3 = lam_hx * beta * beta;
    let a4 = 2.0 * (s_hxa * a4_ly * s_hd * s_c - (n * mo.m_y * c_low * c_low - n * mo.l_y * s_c * s_c));

    Ok(LtiConstants {
        m_prime,
        l_prime,
        a1,
        a2,
        a3,
        a4,
        t: 1.0 - lambda_max_ata,
        lambda_max_ata,
        convention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaBranch {
    /// Positive quadratic coefficient: the positive root of the quadratic.
    Eta1,
    /// Non-positive quadratic coefficient: the linear bound.
    Eta2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaStar {
    pub eta_star: f64,
    pub branch: EtaBranch,
    /// Value of the selected branch formula before capping; `None` is `+inf`.
    pub branch_value: Option<f64>,
    /// `m' / L'`, below which the lower-right entry of `Xi` stays under one.
    pub cap: f64,
    pub capped: bool,
}

fn eta_star_from(k: &LtiConstants) -> Result<EtaStar> {
    if k.m_prime.is_nan() || k.m_prime <= 0.0 {
        return Err(OfoError::NotCertifiable(format!("m' = {} is not positive", k.m_prime)));
    }
    if k.t.is_nan() || k.t <= 0.0 {
        return Err(OfoError::NotCertifiable(format!(
            "lambda_max(A^T A) = {} is not below one",
            k.lambda_max_ata
        )));
    }
    let q = k.quadratic_coefficient();
    let b = k.linear_coefficient();
    let tm = k.t * k.m_prime;
    let (branch, branch_value) = if q > 0.0 {
        // Positive root of q eta^2 + b eta - t m' in cancellation-free form.
        let disc = (b * b + 4.0 * tm * q).sqrt();
        (EtaBranch::Eta1, Some(2.0 * tm / (disc + b)))
    } else if b > 0.0 {
        (EtaBranch::Eta2, Some(tm / b))
    } else {
        (EtaBranch::Eta2, None)
    };
    let cap = k.m_prime / k.l_prime;
    let eta_star = branch_value.map_or(cap, |v| v.min(cap));
    Ok(EtaStar {
        eta_star,
        branch,
        branch_value,
        cap,
        capped: branch_value.is_none_or(|v| v > cap),
    })
}

pub fn eta_star(
    plant: &LtiPlant,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    convention: ConstantConvention,
) -> Result<EtaStar> {
    eta_star_from(&lti_constants(plant, obj, model, convention)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LtiRateCertificate {
    pub eta: f64,
    pub xi: [[f64; 2]; 2],
    pub lambda_max: f64,
    #[serde(flatten)]
    pub constants: LtiConstants,
    /// `None` when the step bound is not certifiable (`t <= 0`).
    pub eta_star: Option<EtaStar>,
    pub convention: ConstantConvention,
}

pub fn xi_matrix(
    plant: &LtiPlant,
    obj: &SeparableObjective,
    model: &SensitivityModel,
    eta: f64,
    convention: ConstantConvention,
) -> Result<LtiRateCertificate> {
    let constants = lti_constants(plant, obj, model, convention)?;
    if constants.m_prime <= 0.0 {
        let c = monotonicity_constants(obj, model, convention);
        return Err(OfoError::CouplingTooStrong { m: c.m, c: c.c });
    }
    let xi = constants.xi(eta);
    Ok(LtiRateCertificate {
        eta,
        xi,
        lambda_max: linalg::lambda_max_2x2(&xi),
        constants,
        eta_star: eta_star_from(&constants).ok(),
        convention,
    })
}

/// `<F(u1) - F(u2), u1 - u2> - (m - c) |u1 - u2|^2` for the pseudo-gradient `F`.
pub fn monotonicity_gap(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    consts: &MonotonicityConstants,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
) -> Result<f64> {
    let f1 = equilibria::pseudo_gradient(obj, model, d, u1)?;
    let f2 = equilibria::pseudo_gradient(obj, model, d, u2)?;
    let du = u1 - u2;
    Ok((f1 - f2).dot(&du) - consts.monotonicity() * du.norm_squared())
}

/// Minimum of [`monotonicity_gap`] over `trials` random pairs in `[-10, 10]^N`.
pub fn monotonicity_gap_test<R: Rng>(
    obj: &SeparableObjective,
    model: &SensitivityModel,
    d: &DVector<f64>,
    consts: &MonotonicityConstants,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = model.n();
    let mut draw = || DVector::from_fn(n, |_, _| rng.random_range(-10.0..=10.0));
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let (u1, u2) = (draw(), draw());
        worst = worst.min(monotonicity_gap(obj, model, d, consts, &u1, &u2)?);
    }
    Ok(worst)
}

/// A value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome<T> {
    Ok(T),
    Error(String),
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Error(e.to_string()),
        }
    }
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Error(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerConvention<T> {
    pub tight: T,
    pub paper: T,
}

impl<T> PerConvention<T> {
    pub fn build(mut f: impl FnMut(ConstantConvention) -> T) -> Self {
        Self {
            tight: f(ConstantConvention::Tight),
            paper: f(ConstantConvention::Paper),
        }
    }

    pub fn get(&self, c: ConstantConvention) -> &T {
        match c {
            ConstantConvention::Tight => &self.tight,
            ConstantConvention::Paper => &self.paper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoRow {
    pub eta: f64,
    pub tight: Outcome<ContractionRate>,
    pub paper: Outcome<ContractionRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSummary {
    pub u_star: Vec<f64>,
    pub u_inf: Vec<f64>,
    pub distance: f64,
    pub relative_distance: Option<f64>,
    pub nash_residual: f64,
    pub unique: bool,
}

/// Everything the certificates say about one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n_agents: usize,
    pub n_states: Option<usize>,
    pub eta: f64,
    pub selected_convention: ConstantConvention,
    pub coupling_condition: CouplingCondition,
    pub constants: PerConvention<MonotonicityConstants>,
    pub rate: PerConvention<Outcome<ContractionRate>>,
    pub rho_table: Vec<RhoRow>,
    pub equilibria: Outcome<EquilibriumSummary>,
    pub suboptimality: PerConvention<Outcome<SuboptimalityBound>>,
    pub lti: Option<PerConvention<Outcome<LtiRateCertificate>>>,
}

impl AnalysisReport {
    pub fn build(
        obj: &SeparableObjective,
        model: &SensitivityModel,
        d: &DVector<f64>,
        plant: Option<&LtiPlant>,
        eta: f64,
        eta_grid: &[f64],
        selected_convention: ConstantConvention,
    ) -> Result<Self> {
        if obj.n() != model.n() {
            return Err(OfoError::dims("analysis objective", format!("{} agents", model.n()), format!("{} agents", obj.n())));
        }
        linalg::check_len(d, model.n(), "analysis disturbance")?;
        let constants = PerConvention::build(|c| monotonicity_constants(obj, model, c));
        let rate = PerConvention::build(|c| contraction_rate(constants.get(c), eta).into());
        let rho_table = eta_grid
            .iter()
            .map(|&e| RhoRow {
                eta: e,
                tight: contraction_rate(&constants.tight, e).into(),
                paper: contraction_rate(&constants.paper, e).into(),
            })
            .collect();
        let solved = equilibria::global_optimum(obj, model, d)
            .and_then(|opt| Ok((opt, equilibria::decentralized_fixed_point(obj, model, d)?)));
        let (equilibria, suboptimality) = match solved {
            Ok((opt, fp)) => {
                let distance = (&opt.u - &fp.u).norm();
                let unorm = opt.u.norm();
                let summary = EquilibriumSummary {
                    u_star: opt.u.iter().copied().collect(),
                    u_inf: fp.u.iter().copied().collect(),
                    distance,
                    relative_distance: (unorm > 0.0).then(|| distance / unorm),
                    nash_residual: fp.residual,
                    unique: fp.unique,
                };
                let sub = PerConvention::build(|c| suboptimality_bound(obj, model, d, &fp.u, constants.get(c)).into());
                (Outcome::Ok(summary), sub)
            }
            Err(e) => {
                let msg = e.to_string();
                (
                    Outcome::Error(msg.clone()),
                    PerConvention::build(|_| Outcome::Error(msg.clone())),
                )
            }
        };
        let lti = plant.map(|p| PerConvention::build(|c| xi_matrix(p, obj, model, eta, c).into()));
        Ok(Self {
            n_agents: model.n(),
            n_states: plant.map(LtiPlant::n_state),
            eta,
            selected_convention,
            coupling_condition: coupling_condition(obj, model),
            constants,
            rate,
            rho_table,
            equilibria,
            suboptimality,
            lti,
        })
    }

    /// Coupling condition holds and `eta` is admissible under the selected convention.
    pub fn certified(&self) -> bool {
        self.coupling_condition.satisfied
            && self
                .rate
                .get(self.selected_convention)
                .ok()
                .is_some_and(|r| r.admissible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(h: DMatrix<f64>) -> (SeparableObjective, SensitivityModel) {
        let n = h.nrows();
        (
            SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(n)).unwrap(),
            SensitivityModel::from_h(h).unwrap(),
        )
    }

    fn reference() -> (SeparableObjective, SensitivityModel) {
        unit(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]))
    }

    #[test]
    fn identity_constants() {
        let (obj, model) = unit(DMatrix::identity(2, 2));
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        assert_relative_eq!(k.m, 2.0, epsilon = 1e-14);
        assert_eq!(k.c, 0.0);
        assert_relative_eq!(k.l, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn reference_constants_both_conventions() {
        // eigenvalues of H^T H = (2.25 +- sqrt(1.0625)) / 2
        let lo = (2.25 - 1.0625f64.sqrt()) / 2.0;
        let hi = (2.25 + 1.0625f64.sqrt()) / 2.0;
        let (obj, model) = reference();
        let t = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        assert_relative_eq!(t.sigma_min_h, lo.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t.sigma_max_h, hi.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t.sigma_max_offdiag, 0.5, epsilon = 1e-14);
        assert_relative_eq!(t.m, 1.0 + lo, epsilon = 1e-12);
        assert_relative_eq!(t.c, 0.5 * hi.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t.l, 1.0 + hi, epsilon = 1e-12);
        assert!((t.m - 1.6096).abs() < 1e-4 && (t.c - 0.6404).abs() < 1e-4 && (t.l - 2.6404).abs() < 1e-4);
        let p = monotonicity_constants(&obj, &model, ConstantConvention::Paper);
        assert_relative_eq!(p.m, 2.0 * t.m, epsilon = 1e-14);
        assert_relative_eq!(p.c, 2.0 * t.c, epsilon = 1e-14);
        assert_relative_eq!(p.l, 2.0 * t.l, epsilon = 1e-14);
    }

    #[test]
    fn coupling_condition_examples() {
        let (obj, model) = unit(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])));
        let cc = coupling_condition(&obj, &model);
        assert!(cc.satisfied && cc.lhs == 0.0);

        let (obj, model) = reference();
        let cc = coupling_condition(&obj, &model);
        assert!(cc.satisfied);
        assert_relative_eq!(cc.lhs, 0.5, epsilon = 1e-14);
        assert!((cc.rhs - 1.2567).abs() < 1e-4);
        let p = CouplingCondition::from_constants(
            &monotonicity_constants(&obj, &model, ConstantConvention::Paper),
            1.0,
        );
        assert_relative_eq!(p.rhs, cc.rhs, epsilon = 1e-15);
        assert_eq!(p.lhs, cc.lhs);

        let (obj, model) = unit(DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]));
        let cc = coupling_condition(&obj, &model);
        assert!(!cc.satisfied);
        assert_relative_eq!(cc.lhs, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn contraction_rate_examples() {
        let (obj, model) = unit(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Paper);
        assert_relative_eq!(k.m, 4.0, epsilon = 1e-12);
        assert_relative_eq!(k.l, 10.0, epsilon = 1e-12);
        let r = contraction_rate(&k, 0.05).unwrap();
        assert_relative_eq!(r.rho, 0.85f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r.eta_upper.unwrap(), 8.0 / 84.0, epsilon = 1e-12);
        assert!(r.admissible);

        let r0 = contraction_rate(&k, 0.0).unwrap();
        assert_eq!(r0.rho, 1.0);
        assert!(!r0.admissible);

        let bad = MonotonicityConstants { m: 1.0, c: 1.5, ..k };
        assert!(matches!(contraction_rate(&bad, 0.1), Err(OfoError::CouplingTooStrong { .. })));
    }

    #[test]
    fn rho_below_one_for_small_steps() {
        let (obj, model) = reference();
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        for eps in [1e-4, 1e-3] {
            assert!(contraction_rate(&k, eps).unwrap().rho < 1.0);
        }
    }

    #[test]
    fn degenerate_interval() {
        let (obj, model) = unit(DMatrix::identity(3, 3));
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        let r = contraction_rate(&k, 0.3).unwrap();
        assert!(r.degenerate && r.eta_upper.is_none());
        assert!(r.admissible);
        assert!(!contraction_rate(&k, 1.5).unwrap().admissible);
    }

    #[test]
    fn suboptimality_bound_reference_values() {
        let (obj, model) = reference();
        let d = DVector::from_element(2, 1.0);
        let u_inf = DVector::from_vec(vec![-0.375, -0.5]);
        let u_star = DVector::from_vec(vec![-6.0 / 17.0, -10.0 / 17.0]);
        let truth = (&u_star - &u_inf).norm();
        let tight = suboptimality_bound(&obj, &model, &d, &u_inf, &monotonicity_constants(&obj, &model, ConstantConvention::Tight)).unwrap();
        assert_relative_eq!(tight.coupling_gradient_norm, 0.1875, epsilon = 1e-14);
        assert!(tight.applicable);
        assert!((tight.bound - 0.1259).abs() < 1e-3);
        assert!(tight.bound >= truth);
        let paper = suboptimality_bound(&obj, &model, &d, &u_inf, &monotonicity_constants(&obj, &model, ConstantConvention::Paper)).unwrap();
        assert!((paper.bound - 0.0804).abs() < 1e-3);
        assert!(paper.bound < truth);
    }

    #[test]
    fn diagonal_h_has_zero_bound() {
        let (obj, model) = unit(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])));
        let d = DVector::from_vec(vec![1.0, -1.0]);
        let fp = equilibria::decentralized_fixed_point(&obj, &model, &d).unwrap();
        let b = suboptimality_bound(&obj, &model, &d, &fp.u, &monotonicity_constants(&obj, &model, ConstantConvention::Tight)).unwrap();
        assert_eq!(b.bound, 0.0);
    }

    fn scalar_plant() -> (LtiPlant, SeparableObjective, SensitivityModel) {
        let p = LtiPlant::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
        )
        .unwrap();
        let m = plant::compute_sensitivity(&p).unwrap();
        (p, SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(1)).unwrap(), m)
    }

    #[test]
    fn xi_at_zero_step() {
        let (p, obj, m) = scalar_plant();
        let cert = xi_matrix(&p, &obj, &m, 0.0, ConstantConvention::Tight).unwrap();
        assert_relative_eq!(cert.xi[0][0], 0.25, epsilon = 1e-14);
        assert_eq!(cert.xi[1][1], 1.0);
        assert_eq!(cert.xi[0][1], 0.0);
        assert_eq!(cert.lambda_max, 1.0);
    }

    #[test]
    fn scalar_plant_constants_by_hand() {
        // H = H_x = H_diag = 2, sigma(C) = 1, sigma(H_x^T A) = 1, lambda(H_x^T H_x + 1) = 5
        // alpha = 1 + 2*2 = 5, beta = 2
        let (p, obj, m) = scalar_plant();
        let k = lti_constants(&p, &obj, &m, ConstantConvention::Tight).unwrap();
        assert_relative_eq!(k.m_prime, 10.0, epsilon = 1e-12);
        assert_relative_eq!(k.l_prime, 125.0, epsilon = 1e-10);
        assert_relative_eq!(k.a1, 50.0, epsilon = 1e-10);
        assert_relative_eq!(k.a2, 11.0, epsilon = 1e-12);
        assert_relative_eq!(k.a3, 20.0, epsilon = 1e-10);
        assert_relative_eq!(k.a4, 4.0, epsilon = 1e-12);
        assert_relative_eq!(k.t, 0.75, epsilon = 1e-14);

        let cert = xi_matrix(&p, &obj, &m, 0.01, ConstantConvention::Tight).unwrap();
        let expected = [[0.292, 0.115], [0.115, 0.9125]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(cert.xi[i][j], expected[i][j], epsilon = 1e-12);
            }
        }
        let lam = (1.2045 + (0.6205f64.powi(2) + 4.0 * 0.115f64.powi(2)).sqrt()) / 2.0;
        assert_relative_eq!(cert.lambda_max, lam, epsilon = 1e-12);
        assert!(cert.lambda_max < 1.0);

        // q = 20*10 + 2*50*11 - 4*125 = 800, b = 4*10 + 121 + 0.75*125 = 254.75
        let es = cert.eta_star.unwrap();
        assert_eq!(es.branch, EtaBranch::Eta1);
        let eta1 = ((254.75f64.powi(2) + 4.0 * 7.5 * 800.0).sqrt() - 254.75) / 1600.0;
        assert_relative_eq!(es.eta_star, eta1, epsilon = 1e-12);
        assert!(!es.capped);
        let inside = xi_matrix(&p, &obj, &m, 0.9 * es.eta_star, ConstantConvention::Tight).unwrap();
        assert!(inside.lambda_max < 1.0);
        let at = xi_matrix(&p, &obj, &m, es.eta_star, ConstantConvention::Tight).unwrap();
        assert_relative_eq!(at.lambda_max, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn branch_follows_quadratic_coefficient_sign() {
        let (p, obj, m) = scalar_plant();
        for conv in ConstantConvention::BOTH {
            let k = lti_constants(&p, &obj, &m, conv).unwrap();
            let es = eta_star_from(&k).unwrap();
            assert_eq!(es.branch == EtaBranch::Eta1, k.quadratic_coefficient() > 0.0);
        }
        let k = lti_constants(&p, &obj, &m, ConstantConvention::Tight).unwrap();
        let flipped = LtiConstants { a4: 100.0, ..k };
        assert_eq!(eta_star_from(&flipped).unwrap().branch, EtaBranch::Eta2);
    }

    #[test]
    fn strongly_coupled_plant_not_certifiable() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]);
        let p = LtiPlant::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), h, DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let m = plant::compute_sensitivity(&p).unwrap();
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(2)).unwrap();
        assert!(matches!(eta_star(&p, &obj, &m, ConstantConvention::Tight), Err(OfoError::NotCertifiable(_))));
        assert!(matches!(xi_matrix(&p, &obj, &m, 0.01, ConstantConvention::Tight), Err(OfoError::CouplingTooStrong { .. })));
    }

    #[test]
    fn non_normal_plant_with_large_gain_not_certifiable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, 0.5]);
        let p = LtiPlant::new(a, DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let m = plant::compute_sensitivity(&p).unwrap();
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(2)).unwrap();
        let r = eta_star(&p, &obj, &m, ConstantConvention::Tight);
        assert!(matches!(r, Err(OfoError::NotCertifiable(_))), "{r:?}");
    }

    #[test]
    fn monotonicity_gap_reference() {
        let (obj, model) = reference();
        let d = DVector::from_element(2, 1.0);
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(monotonicity_gap_test(&obj, &model, &d, &k, 1000, &mut rng).unwrap() >= -1e-10);
        let u = DVector::from_vec(vec![0.3, 2.0]);
        assert_eq!(monotonicity_gap(&obj, &model, &d, &k, &u, &u).unwrap(), 0.0);

        let (obj, model) = unit(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])));
        let k = monotonicity_constants(&obj, &model, ConstantConvention::Tight);
        assert!(monotonicity_gap_test(&obj, &model, &d, &k, 1000, &mut rng).unwrap() >= -1e-10);
    }

    #[test]
    fn report_serializes_with_both_conventions() {
        let (obj, model) = reference();
        let d = DVector::from_element(2, 1.0);
        let r = AnalysisReport::build(&obj, &model, &d, None, 0.1, &[0.01, 0.1], ConstantConvention::Tight).unwrap();
        assert!(r.certified());
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["constants"]["paper"]["m"].as_f64().unwrap() > v["constants"]["tight"]["m"].as_f64().unwrap());
        assert_eq!(v["rho_table"].as_array().unwrap().len(), 2);
        assert!(v["lti"].is_null());
    }
}
