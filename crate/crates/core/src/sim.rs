//! Closed-loop runs of a controller against the algebraic map `y = H u + d`
//! or against the dynamic plant.
//!
//! Timing in the dynamic loop is synchronous: at iteration `k` the controller
//! reads `y_k` computed from `(x_k, u_k)`, then plant and controller both
//! advance once.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, ControllerMode};
use crate::error::{OfoError, Result};
use crate::linalg;
use crate::objective::SeparableObjective;
use crate::plant::{self, LtiPlant, SensitivityModel};

/// Runs stop once `|u_{k+1} - u_k|` (and `|x_{k+1} - x_k|` for dynamic runs)
/// falls below this.
pub const EARLY_STOP_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: usize = 100_000;
/// Slack on the per-step combined-error decay check.
pub const DECAY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Algebraic,
    Lti,
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlantKind::Algebraic => "algebraic",
            PlantKind::Lti => "lti",
        })
    }
}

impl std::str::FromStr for PlantKind {
    type Err = OfoError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "algebraic" => Ok(Self::Algebraic),
            "lti" => Ok(Self::Lti),
            other => Err(OfoError::invalid("loop", format!("unknown plant kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub mode: ControllerMode,
    pub eta: f64,
    pub plant_kind: PlantKind,
    /// Controller updates performed.
    pub iterations: usize,
    /// Whether the run stopped on [`EARLY_STOP_TOL`].
    pub converged: bool,
    pub seed: Option<u64>,
}

/// Recorded samples `k = 0..=iterations`. All series have the same length.
#[derive(Clone, PartialEq)]
pub struct Trajectory {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub x: Option<Vec<DVector<f64>>>,
    pub meta: TrajectoryMeta,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("samples", &self.u.len())
            .field("has_state", &self.x.is_some())
            .field("last_u", &self.u.last().map(|u| u.as_slice().to_vec()))
            .field("meta", &self.meta)
            .finish()
    }
}

impl Trajectory {
    fn new(cfg: &ControllerConfig, kind: PlantKind) -> Self {
        Self {
            u: Vec::new(),
            y: Vec::new(),
            x: (kind == PlantKind::Lti).then(Vec::new),
            meta: TrajectoryMeta {
                mode: cfg.mode,
                eta: cfg.eta,
                plant_kind: kind,
                iterations: 0,
                converged: false,
                seed: None,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn last_u(&self) -> &DVector<f64> {
        self.u.last().expect("trajectory has at least one sample")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }

    /// `|u_K - u_{K-1}|` for the last recorded transition.
    pub fn final_step_norm(&self) -> f64 {
        match self.u.len() {
            0 | 1 => 0.0,
            n => (&self.u[n - 1] - &self.u[n - 2]).norm(),
        }
    }

    fn diverged(mut self, step: usize) -> OfoError {
        self.meta.iterations = step.saturating_sub(1);
        OfoError::NonFinite {
            step,
            partial: Box::new(self),
        }
    }
}

pub fn run_algebraic(
    model: &SensitivityModel,
    obj: &SeparableObjective,
    d: &DVector<f64>,
    cfg: &ControllerConfig,
    u0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(OfoError::invalid("steps", "must be at least 1"));
    }
    linalg::check_len(u0, model.n(), "initial input")?;
    let mut traj = Trajectory::new(cfg, PlantKind::Algebraic);
    let mut u = u0.clone();
    for k in 0..steps {
        let y = model.steady_state_output(&u, d)?;
        let next = cfg.step(obj, model, &u, &y)?;
        traj.u.push(u.clone());
        traj.y.push(y);
        if !linalg::all_finite(&next) {
            return Err(traj.diverged(k + 1));
        }
        let du = (&next - &u).norm();
        u = next;
        traj.meta.iterations = k + 1;
        if du < EARLY_STOP_TOL {
            traj.meta.converged = true;
            break;
        }
    }
    let y = model.steady_state_output(&u, d)?;
    traj.u.push(u);
    traj.y.push(y);
    Ok(traj)
}

pub fn run_lti(
    plant: &LtiPlant,
    obj: &SeparableObjective,
    cfg: &ControllerConfig,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    let model = plant::compute_sensitivity(plant)?;
    run_lti_with_model(plant, &model, obj, cfg, x0, u0, steps)
}

/// [`run_lti`] with a precomputed sensitivity model.
pub fn run_lti_with_model(
    plant: &LtiPlant,
    model: &SensitivityModel,
    obj: &SeparableObjective,
    cfg: &ControllerConfig,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(OfoError::invalid("steps", "must be at least 1"));
    }
    let (stable, radius) = plant::is_schur_stable(plant.a())?;
    if !stable {
        return Err(OfoError::UnstablePlant { radius });
    }
    linalg::check_len(x0, plant.n_state(), "initial state")?;
    linalg::check_len(u0, plant.n_io(), "initial input")?;
    let mut traj = Trajectory::new(cfg, PlantKind::Lti);
    let (mut x, mut u) = (x0.clone(), u0.clone());
    for k in 0..steps {
        let (x_next, y) = plant.step(&x, &u)?;
        let u_next = cfg.step(obj, model, &u, &y)?;
        traj.x.as_mut().expect("dynamic run records states").push(x.clone());
        traj.u.push(u.clone());
        traj.y.push(y);
        if !linalg::all_finite(&u_next) || !linalg::all_finite(&x_next) {
            return Err(traj.diverged(k + 1));
        }
        let du = (&u_next - &u).norm();
        let dx = (&x_next - &x).norm();
        x = x_next;
        u = u_next;
        traj.meta.iterations = k + 1;
        if du < EARLY_STOP_TOL && dx < EARLY_STOP_TOL {
            traj.meta.converged = true;
            break;
        }
    }
    let y = plant.output(&x, &u)?;
    traj.x.as_mut().expect("dynamic run records states").push(x);
    traj.u.push(u);
    traj.y.push(y);
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorMetrics {
    /// `|u_k - u_ref| / |u_ref|`, or the absolute error when `u_ref = 0`.
    pub rel_err_u: Vec<f64>,
    /// False when `u_ref = 0` and `rel_err_u` holds absolute errors.
    pub relative: bool,
    /// `|x_k - H_x u_k|^2 + |u_k - u_ref|^2` for dynamic runs.
    pub combined_sq: Option<Vec<f64>>,
}

pub fn metrics(traj: &Trajectory, u_ref: &DVector<f64>, model: &SensitivityModel) -> ErrorMetrics {
    let scale = u_ref.norm();
    let relative = scale > 0.0;
    let rel_err_u = traj
        .u
        .iter()
        .map(|u| {
            let e = (u - u_ref).norm();
            if relative {
                e / scale
            } else {
                e
            }
        })
        .collect();
    ErrorMetrics {
        rel_err_u,
        relative,
        combined_sq: combined_sq(traj, model, u_ref),
    }
}

/// Combined squared error around the equilibrium input `u_eq`; `None` for
/// algebraic runs or when the model carries no state sensitivity.
pub fn combined_sq(traj: &Trajectory, model: &SensitivityModel, u_eq: &DVector<f64>) -> Option<Vec<f64>> {
    let xs = traj.x.as_ref()?;
    let h_x = model.h_x()?;
    Some(
        xs.iter()
            .zip(&traj.u)
            .map(|(x, u)| (x - h_x * u).norm_squared() + (u - u_eq).norm_squared())
            .collect(),
    )
}

/// `combined[k+1] <= (rate + DECAY_SLACK) combined[k]` for every transition.
pub fn decay_check(combined: &[f64], rate: f64) -> Vec<bool> {
    combined
        .windows(2)
        .map(|w| w[1] <= (rate + DECAY_SLACK) * w[0])
        .collect()
}

/// Writes `k,u_1..u_N,y_1..y_N[,x_1..x_n],rel_err_u[,combined_sq]`, keeping
/// every `every`-th sample and the last one. Values use 17 significant digits.
pub fn write_csv<W: Write>(
    w: &mut W,
    traj: &Trajectory,
    metrics: &ErrorMetrics,
    every: usize,
) -> io::Result<()> {
    let every = every.max(1);
    let n = traj.u.first().map_or(0, DVector::len);
    let nx = traj.x.as_ref().and_then(|x| x.first()).map(DVector::len);
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("u_{i}")));
    header.extend((1..=n).map(|i| format!("y_{i}")));
    if let Some(nx) = nx {
        header.extend((1..=nx).map(|i| format!("x_{i}")));
    }
    header.push("rel_err_u".into());
    if metrics.combined_sq.is_some() {
        header.push("combined_sq".into());
    }
    writeln!(w, "{}", header.join(","))?;

    let last = traj.len().saturating_sub(1);
    for k in (0..traj.len()).filter(|&k| k % every == 0 || k == last) {
        let mut row = vec![k.to_string()];
        row.extend(traj.u[k].iter().map(|v| fmt_f64(*v)));
        row.extend(traj.y[k].iter().map(|v| fmt_f64(*v)));
        if let Some(xs) = &traj.x {
            row.extend(xs[k].iter().map(|v| fmt_f64(*v)));
        }
        row.push(fmt_f64(metrics.rel_err_u[k]));
        if let Some(c) = &metrics.combined_sq {
            row.push(fmt_f64(c[k]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Round-trip-exact decimal formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria;
    use nalgebra::DMatrix;

    fn reference() -> (SeparableObjective, SensitivityModel, DVector<f64>) {
        (
            SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(2)).unwrap(),
            SensitivityModel::from_h(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap(),
            DVector::from_element(2, 1.0),
        )
    }

    #[test]
    fn optimum_is_stationary_under_centralized_control() {
        let (obj, model, d) = reference();
        let opt = equilibria::global_optimum(&obj, &model, &d).unwrap();
        let cfg = ControllerConfig::centralized(0.1).unwrap();
        let t = run_algebraic(&model, &obj, &d, &cfg, &opt.u, 50).unwrap();
        assert!(t.meta.converged);
        for u in &t.u {
            assert!((u - &opt.u).norm() < 1e-14);
        }
    }

    #[test]
    fn algebraic_runs_reach_their_equilibria() {
        let (obj, model, d) = reference();
        let z = DVector::zeros(2);
        let dec = run_algebraic(&model, &obj, &d, &ControllerConfig::decentralized(0.1).unwrap(), &z, 10_000).unwrap();
        assert!((dec.last_u() - DVector::from_vec(vec![-0.375, -0.5])).norm() < 1e-8);
        let cen = run_algebraic(&model, &obj, &d, &ControllerConfig::centralized(0.1).unwrap(), &z, 10_000).unwrap();
        assert!((cen.last_u() - DVector::from_vec(vec![-6.0 / 17.0, -10.0 / 17.0])).norm() < 1e-8);
        assert_eq!(dec.u.len(), dec.y.len());
        assert_eq!(dec.u.len(), dec.meta.iterations + 1);
    }

    #[test]
    fn relative_error_eventually_decreasing() {
        let (obj, model, d) = reference();
        let fp = equilibria::decentralized_fixed_point(&obj, &model, &d).unwrap();
        let t = run_algebraic(&model, &obj, &d, &ControllerConfig::decentralized(0.1).unwrap(), &DVector::zeros(2), 10_000).unwrap();
        let m = metrics(&t, &fp.u, &model);
        assert!(m.relative && m.combined_sq.is_none());
        let start = m.rel_err_u.iter().position(|&e| e < 1e-6).unwrap();
        let tail = &m.rel_err_u[start..];
        // stop comparing once the error reaches round-off level
        for w in tail.windows(2).take_while(|w| w[0] > 1e-13) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn divergent_step_reports_partial_trajectory() {
        let (obj, model, d) = reference();
        let cfg = ControllerConfig::decentralized(10.0).unwrap();
        match run_algebraic(&model, &obj, &d, &cfg, &DVector::zeros(2), 100_000) {
            Err(OfoError::NonFinite { step, partial }) => {
                assert_eq!(partial.u.len(), step);
                assert!(partial.u.iter().all(linalg::all_finite));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn scalar_plant() -> LtiPlant {
        LtiPlant::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn lti_equilibrium_is_stationary() {
        let p = scalar_plant().with_disturbance(DVector::from_element(1, 1.0)).unwrap();
        let model = plant::compute_sensitivity(&p).unwrap();
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(1)).unwrap();
        let fp = equilibria::decentralized_fixed_point(&obj, &model, p.disturbance()).unwrap();
        let x0 = model.h_x().unwrap() * &fp.u;
        let t = run_lti(&p, &obj, &ControllerConfig::decentralized(0.05).unwrap(), &x0, &fp.u, 100).unwrap();
        let c = combined_sq(&t, &model, &fp.u).unwrap();
        assert!(c.iter().all(|&v| v < 1e-28));
        assert!(t.meta.converged);
    }

    #[test]
    fn lti_scalar_run_converges_to_zero() {
        let p = scalar_plant();
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(1)).unwrap();
        let t = run_lti(&p, &obj, &ControllerConfig::decentralized(0.02).unwrap(), &DVector::from_element(1, 1.0), &DVector::from_element(1, 2.0), 100_000).unwrap();
        assert!(t.meta.converged);
        assert!(t.last_u().norm() < 1e-9);
        let x = t.x.as_ref().unwrap();
        assert_eq!(x.len(), t.u.len());
    }

    #[test]
    fn csv_layout() {
        let p = scalar_plant();
        let model = plant::compute_sensitivity(&p).unwrap();
        let obj = SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(1)).unwrap();
        let t = run_lti(&p, &obj, &ControllerConfig::decentralized(0.02).unwrap(), &DVector::zeros(1), &DVector::from_element(1, 1.0), 10).unwrap();
        let m = metrics(&t, &DVector::from_element(1, 1.0), &model);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t, &m, 4).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "k,u_1,y_1,x_1,rel_err_u,combined_sq");
        let ks: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ks, ["0", "4", "8", "10"]);
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[1].parse::<f64>().unwrap(), 1.0);
        assert!(!s.contains('\r'));
    }

    #[test]
    fn fmt_roundtrips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456.789, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
