//! DC power-grid voltage regulation case study.
//!
//! Node voltages `V` and line currents `f` follow
//!
//! ```text
//! C dV/dt = -G V - B f + I
//! L df/dt = B^T V - R f
//! ```
//!
//! with incidence matrix `B` (edges oriented from the lower to the higher node
//! index) and total injection `I = I* - dI + I_c`. The measured voltage is
//! `V + d`. The model is discretized by forward Euler with step `epsilon`.
//!
//! The constant injection `I* - dI` is folded into the output disturbance:
//! in coordinates shifted by its steady state, the discretized grid is exactly
//! `x+ = A x + B u`, `y = C x + d~` with `u = I_c` and
//! `d~ = H (I* - dI) + d`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, ConstantConvention};
use crate::controller::ControllerConfig;
use crate::equilibria;
use crate::error::{OfoError, Result};
use crate::objective::SeparableObjective;
use crate::plant::{self, LtiPlant, SensitivityModel};
use crate::sim;

/// Default G values of the diagonal-dominance sweep.
pub const DEFAULT_SWEEP: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_nodes: usize,
    /// 1-based node pairs.
    pub edges: Vec<[usize; 2]>,
    /// Node capacitances (diagonal of `C`).
    pub capacitance: Vec<f64>,
    /// Line inductances (diagonal of `L`).
    pub inductance: Vec<f64>,
    /// Line resistances (diagonal of `R`).
    pub line_resistance: Vec<f64>,
    /// Node conductances (diagonal of `G`).
    pub node_conductance: Vec<f64>,
    pub i_star: Vec<f64>,
    pub delta_i: Vec<f64>,
    /// Measurement error `d`.
    pub d_meas: Vec<f64>,
    /// Euler step.
    pub epsilon: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        default_topology()
    }
}

/// Two hubs (nodes 4 and 5) joined by an edge, each serving three nodes,
/// plus the edges (1,2) and (6,7): 8 nodes and 9 edges.
pub fn default_topology() -> GridSpec {
    let edges = vec![[1, 4], [2, 4], [3, 4], [4, 5], [5, 6], [5, 7], [5, 8], [1, 2], [6, 7]];
    let (n, e) = (8, edges.len());
    GridSpec {
        n_nodes: n,
        edges,
        capacitance: vec![1.0; n],
        inductance: vec![1.0; e],
        line_resistance: vec![10.0; e],
        node_conductance: vec![1.0; n],
        i_star: vec![1.0; n],
        delta_i: vec![1.0; n],
        d_meas: vec![0.0; n],
        epsilon: 0.1,
        gamma1: 1.0,
        gamma2: 1.0,
    }
}

impl GridSpec {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Same grid with every node conductance set to `g`.
    pub fn with_conductance(mut self, g: f64) -> Self {
        self.node_conductance = vec![g; self.n_nodes];
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: GridSpec = serde_json::from_str(s).map_err(|e| OfoError::Parse {
            key: "grid".into(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, e) = (self.n_nodes, self.n_edges());
        if n < 2 {
            return Err(OfoError::invalid("n_nodes", "need at least two nodes"));
        }
        for (k, [a, b]) in self.edges.iter().copied().enumerate() {
            if a == 0 || b == 0 || a > n || b > n || a == b {
                return Err(OfoError::invalid("edges", format!("edge {k} = ({a},{b}) is invalid for {n} nodes")));
            }
        }
        let lens: [(&'static str, &[f64], usize); 7] = [
            ("capacitance", &self.capacitance, n),
            ("inductance", &self.inductance, e),
            ("line_resistance", &self.line_resistance, e),
            ("node_conductance", &self.node_conductance, n),
            ("i_star", &self.i_star, n),
            ("delta_i", &self.delta_i, n),
            ("d_meas", &self.d_meas, n),
        ];
        for (name, v, want) in lens {
            if v.len() != want {
                return Err(OfoError::invalid(name, format!("expected {want} entries, found {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(OfoError::invalid(name, "non-finite entry"));
            }
        }
        for (name, v) in [
            ("capacitance", &self.capacitance),
            ("inductance", &self.inductance),
            ("line_resistance", &self.line_resistance),
            ("node_conductance", &self.node_conductance),
        ] {
            if v.iter().any(|&x| x <= 0.0) {
                return Err(OfoError::invalid(name, "entries must be strictly positive"));
            }
        }
        for (name, x) in [("epsilon", self.epsilon), ("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(OfoError::invalid(name, "must be positive"));
            }
        }
        if !self.is_connected() {
            return Err(OfoError::invalid("edges", "graph is not connected"));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.n_nodes;
        let mut adj = vec![Vec::new(); n];
        for &[a, b] in &self.edges {
            adj[a - 1].push(b - 1);
            adj[b - 1].push(a - 1);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Node-by-edge incidence: `+1` at the lower endpoint, `-1` at the higher.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_nodes, self.n_edges());
        for (j, &[p, q]) in self.edges.iter().enumerate() {
            let (lo, hi) = (p.min(q), p.max(q));
            b[(lo - 1, j)] = 1.0;
            b[(hi - 1, j)] = -1.0;
        }
        b
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &[a, b] in &self.edges {
            deg[a - 1] += 1;
            deg[b - 1] += 1;
        }
        deg
    }
}

/// Assembled grid: discretized plant (in shifted coordinates), its
/// sensitivity, the effective disturbance and the voltage reference.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub spec: GridSpec,
    pub plant: LtiPlant,
    pub model: SensitivityModel,
    /// `H (I* - dI) + d`.
    pub disturbance: DVector<f64>,
    /// `H I* + d`.
    pub y_ref: DVector<f64>,
}

impl GridModel {
    pub fn objective(&self) -> Result<SeparableObjective> {
        SeparableObjective::quadratic(self.spec.gamma1, self.spec.gamma2, self.y_ref.clone())
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }
}

fn discretize(spec: &GridSpec) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (n, e) = (spec.n_nodes, spec.n_edges());
    let ns = n + e;
    let inc = spec.incidence_matrix();
    let mut k = DMatrix::zeros(ns, ns);
    for i in 0..n {
        k[(i, i)] = -spec.node_conductance[i];
    }
    for j in 0..e {
        k[(n + j, n + j)] = -spec.line_resistance[j];
    }
    k.view_mut((0, n), (n, e)).copy_from(&(-&inc));
    k.view_mut((n, 0), (e, n)).copy_from(&inc.transpose());

    let inv_e: Vec<f64> = spec
        .capacitance
        .iter()
        .chain(&spec.inductance)
        .map(|x| 1.0 / x)
        .collect();
    let mut a = DMatrix::identity(ns, ns);
    for r in 0..ns {
        for c in 0..ns {
            a[(r, c)] += spec.epsilon * inv_e[r] * k[(r, c)];
        }
    }
    let b = DMatrix::from_fn(ns, n, |r, c| if r == c { spec.epsilon * inv_e[r] } else { 0.0 });
    let c = DMatrix::from_fn(n, ns, |r, c| if r == c { 1.0 } else { 0.0 });
    (a, b, c)
}

pub fn assemble_plant(spec: &GridSpec) -> Result<GridModel> {
    spec.validate()?;
    let n = spec.n_nodes;
    let (a, b, c) = discretize(spec);
    let (stable, radius) = plant::is_schur_stable(&a)?;
    if !stable {
        return Err(OfoError::UnstableDiscretization { radius });
    }
    let plant = LtiPlant::new(a, b, c, DMatrix::zeros(n, n), DVector::zeros(n))?;
    let model = plant::compute_sensitivity(&plant)?;
    let i_star = DVector::from_column_slice(&spec.i_star);
    let delta_i = DVector::from_column_slice(&spec.delta_i);
    let d_meas = DVector::from_column_slice(&spec.d_meas);
    let disturbance = model.h() * (&i_star - &delta_i) + &d_meas;
    let y_ref = model.h() * &i_star + &d_meas;
    let plant = plant.with_disturbance(disturbance.clone())?;
    Ok(GridModel {
        spec: spec.clone(),
        plant,
        model,
        disturbance,
        y_ref,
    })
}

/// Assembles the grid, halving `epsilon` until the discretization is stable.
/// The sensitivity does not depend on `epsilon`.
pub fn assemble_stabilized(spec: &GridSpec) -> Result<(GridModel, bool)> {
    let mut s = spec.clone();
    for halvings in 0..=MAX_HALVINGS {
        match assemble_plant(&s) {
            Ok(g) => return Ok((g, halvings == 0)),
            Err(OfoError::UnstableDiscretization { .. }) => s.epsilon *= 0.5,
            Err(e) => return Err(e),
        }
    }
    assemble_plant(&s).map(|g| (g, false))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub g: f64,
    /// Euler step actually used.
    pub epsilon: Option<f64>,
    /// Whether the nominal `epsilon` gave a stable discretization.
    pub nominal_stable: Option<bool>,
    pub condition_satisfied: Option<bool>,
    pub condition_lhs: Option<f64>,
    pub condition_rhs: Option<f64>,
    /// `|u* - u_inf| / |u*|`.
    pub true_rel_subopt: Option<f64>,
    pub tight_bound_rel: Option<f64>,
    pub tight_applicable: Option<bool>,
    pub paper_bound_rel: Option<f64>,
    pub paper_applicable: Option<bool>,
    pub loop_converged: Option<bool>,
    /// Final `|u_K - u_inf| / |u*|` of the decentralized algebraic loop.
    pub loop_rel_err: Option<f64>,
    /// `lambda_max(Xi)` at the sweep step size (Tight).
    pub lambda_max_xi: Option<f64>,
    /// Tight step-size bound for the dynamic loop.
    pub eta_star: Option<f64>,
    pub note: Option<String>,
}

impl SweepRow {
    fn failed(g: f64, note: String) -> Self {
        Self {
            g,
            epsilon: None,
            nominal_stable: None,
            condition_satisfied: None,
            condition_lhs: None,
            condition_rhs: None,
            true_rel_subopt: None,
            tight_bound_rel: None,
            tight_applicable: None,
            paper_bound_rel: None,
            paper_applicable: None,
            loop_converged: None,
            loop_rel_err: None,
            lambda_max_xi: None,
            eta_star: None,
            note: Some(note),
        }
    }
}

fn sweep_row(base: &GridSpec, g: f64, eta: f64, steps: usize) -> Result<SweepRow> {
    let (grid, nominal_stable) = assemble_stabilized(&base.clone().with_conductance(g))?;
    let obj = grid.objective()?;
    let (model, d) = (&grid.model, &grid.disturbance);
    let cond = analysis::coupling_condition(&obj, model);
    let opt = equilibria::global_optimum(&obj, model, d)?;
    let fp = equilibria::decentralized_fixed_point(&obj, model, d)?;
    let scale = opt.u.norm();
    let rel = |v: f64| if scale > 0.0 { v / scale } else { v };
    let tight = analysis::suboptimality_bound(&obj, model, d, &fp.u, &analysis::monotonicity_constants(&obj, model, ConstantConvention::Tight))?;
    let paper = analysis::suboptimality_bound(&obj, model, d, &fp.u, &analysis::monotonicity_constants(&obj, model, ConstantConvention::Paper))?;
    let cfg = ControllerConfig::decentralized(eta)?;
    let mut notes = Vec::new();
    if !nominal_stable {
        notes.push(format!("epsilon reduced to {} for a stable discretization", grid.epsilon()));
    }
    let (loop_converged, loop_rel_err) =
        match sim::run_algebraic(model, &obj, d, &cfg, &DVector::zeros(model.n()), steps) {
            Ok(t) => (Some(t.meta.converged), Some(rel((t.last_u() - &fp.u).norm()))),
            Err(e) => {
                notes.push(format!("decentralized loop: {e}"));
                (Some(false), None)
            }
        };
    let cert = analysis::xi_matrix(&grid.plant, &obj, model, eta, ConstantConvention::Tight);
    let (lambda_max_xi, eta_star) = match &cert {
        Ok(c) => (Some(c.lambda_max), c.eta_star.map(|e| e.eta_star)),
        Err(e) => {
            notes.push(format!("rate certificate: {e}"));
            (None, None)
        }
    };
    if cert.as_ref().is_ok_and(|c| c.eta_star.is_none()) {
        notes.push("step bound for the dynamic loop not certifiable".into());
    }
    let finite = |x: f64| x.is_finite().then_some(x);
    Ok(SweepRow {
        g,
        epsilon: Some(grid.epsilon()),
        nominal_stable: Some(nominal_stable),
        condition_satisfied: Some(cond.satisfied),
        condition_lhs: Some(cond.lhs),
        condition_rhs: Some(cond.rhs),
        true_rel_subopt: Some(rel((&opt.u - &fp.u).norm())),
        tight_bound_rel: finite(rel(tight.bound)),
        tight_applicable: Some(tight.applicable),
        paper_bound_rel: finite(rel(paper.bound)),
        paper_applicable: Some(paper.applicable),
        loop_converged,
        loop_rel_err,
        lambda_max_xi,
        eta_star,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

/// One row per conductance value; a failing row carries its error in `note`
/// and never aborts the sweep.
pub fn sweep_g(base: &GridSpec, g_values: &[f64], eta: f64, steps: usize, parallel: bool) -> Vec<SweepRow> {
    let row = |&g: &f64| sweep_row(base, g, eta, steps).unwrap_or_else(|e| SweepRow::failed(g, e.to_string()));
    if parallel {
        g_values.par_iter().map(row).collect()
    } else {
        g_values.iter().map(row).collect()
    }
}

pub const SWEEP_CSV_HEADER: &str = "g,epsilon,nominal_stable,condition_satisfied,condition_lhs,condition_rhs,true_rel_subopt,tight_bound_rel,tight_applicable,paper_bound_rel,paper_applicable,loop_converged,loop_rel_err,lambda_max_xi,eta_star,note";

pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    fn num(x: Option<f64>) -> String {
        x.map(sim::fmt_f64).unwrap_or_default()
    }
    fn flag(x: Option<bool>) -> String {
        x.map(|b| b.to_string()).unwrap_or_default()
    }
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let note = r.note.as_deref().unwrap_or("").replace('"', "'");
        let fields = [
            sim::fmt_f64(r.g),
            num(r.epsilon),
            flag(r.nominal_stable),
            flag(r.condition_satisfied),
            num(r.condition_lhs),
            num(r.condition_rhs),
            num(r.true_rel_subopt),
            num(r.tight_bound_rel),
            flag(r.tight_applicable),
            num(r.paper_bound_rel),
            flag(r.paper_applicable),
            flag(r.loop_converged),
            num(r.loop_rel_err),
            num(r.lambda_max_xi),
            num(r.eta_star),
            if note.is_empty() { note } else { format!("\"{note}\"") },
        ];
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
