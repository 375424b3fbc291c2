use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use ofo_core::analysis::{self, ConstantConvention};
use ofo_core::equilibria::{self, EquilibriumSolution};
use ofo_core::powergrid::{self, SweepRow, DEFAULT_SWEEP};
use ofo_core::sim::{self, Trajectory};
use ofo_core::{AnalysisReport, ControllerConfig, ControllerMode, DVector, OfoError, PlantKind};

use crate::config::{Loaded, Problem};
use crate::error::CliError;

pub const DEFAULT_OUT: &str = "ofo-out";
const FIGURE_ETA: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub convention: ConstantConvention,
    pub config: Value,
    pub parameters: Value,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuboptimalityMetrics {
    pub realized_distance: f64,
    pub relative_distance: Option<f64>,
    pub tight_bound: Option<f64>,
    pub tight_applicable: bool,
    pub paper_bound: Option<f64>,
    pub paper_applicable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub mode: ControllerMode,
    pub eta: f64,
    #[serde(rename = "loop")]
    pub loop_kind: PlantKind,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
    pub final_step_norm: Option<f64>,
    pub final_u: Vec<f64>,
    pub u_star: Vec<f64>,
    pub u_inf: Vec<f64>,
    pub final_rel_err_u_star: Option<f64>,
    pub final_rel_err_u_inf: Option<f64>,
    /// Present for decentralized runs.
    pub suboptimality: Option<SuboptimalityMetrics>,
    pub seed: u64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn manifest(loaded: &Loaded, command: &str, parameters: Value, files: Vec<String>) -> Manifest {
    Manifest {
        tool: "ofo",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        seed: loaded.config.seed(),
        convention: loaded.config.convention(),
        config: loaded.resolved.clone(),
        parameters,
        files,
    }
}

fn equilibria_of(p: &Problem) -> Result<(EquilibriumSolution, EquilibriumSolution), CliError> {
    Ok((
        equilibria::global_optimum(&p.obj, &p.model, &p.d)?,
        equilibria::decentralized_fixed_point(&p.obj, &p.model, &p.d)?,
    ))
}

fn suboptimality(p: &Problem, opt: &EquilibriumSolution, fp: &EquilibriumSolution) -> Result<SuboptimalityMetrics, CliError> {
    let bound = |c| analysis::suboptimality_bound(&p.obj, &p.model, &p.d, &fp.u, &analysis::monotonicity_constants(&p.obj, &p.model, c));
    let (tight, paper) = (bound(ConstantConvention::Tight)?, bound(ConstantConvention::Paper)?);
    let realized = (&opt.u - &fp.u).norm();
    let scale = opt.u.norm();
    Ok(SuboptimalityMetrics {
        realized_distance: realized,
        relative_distance: (scale > 0.0).then(|| realized / scale),
        tight_bound: finite(tight.bound),
        tight_applicable: tight.applicable,
        paper_bound: finite(paper.bound),
        paper_applicable: paper.applicable,
    })
}

fn relative(u: &DVector<f64>, r: &DVector<f64>) -> Option<f64> {
    let scale = r.norm();
    finite(if scale > 0.0 { (u - r).norm() / scale } else { (u - r).norm() })
}

struct RunOutcome {
    traj: Trajectory,
    diverged_at: Option<usize>,
}

fn run(
    p: &Problem,
    cfg: &ControllerConfig,
    kind: PlantKind,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<RunOutcome, CliError> {
    let result = match kind {
        PlantKind::Algebraic => sim::run_algebraic(&p.model, &p.obj, &p.d, cfg, u0, steps),
        PlantKind::Lti => {
            let plant = p.plant.as_ref().expect("loop kind checked");
            sim::run_lti_with_model(plant, &p.model, &p.obj, cfg, x0, u0, steps)
        }
    };
    match result {
        Ok(traj) => Ok(RunOutcome { traj: traj.with_seed(seed), diverged_at: None }),
        Err(OfoError::NonFinite { step, partial }) => Ok(RunOutcome {
            traj: partial.with_seed(seed),
            diverged_at: Some(step),
        }),
        Err(e) => Err(e.into()),
    }
}

fn run_metrics(
    p: &Problem,
    out: &RunOutcome,
    opt: &EquilibriumSolution,
    fp: &EquilibriumSolution,
    seed: u64,
) -> Result<RunMetrics, CliError> {
    let t = &out.traj;
    let last = t.last_u();
    let decentralized = t.meta.mode == ControllerMode::Decentralized;
    Ok(RunMetrics {
        mode: t.meta.mode,
        eta: t.meta.eta,
        loop_kind: t.meta.plant_kind,
        iterations: t.meta.iterations,
        converged: t.meta.converged,
        diverged: out.diverged_at.is_some(),
        divergence_step: out.diverged_at,
        final_step_norm: finite(t.final_step_norm()),
        final_u: last.iter().copied().collect(),
        u_star: opt.u.iter().copied().collect(),
        u_inf: fp.u.iter().copied().collect(),
        final_rel_err_u_star: relative(last, &opt.u),
        final_rel_err_u_inf: relative(last, &fp.u),
        suboptimality: if decentralized { Some(suboptimality(p, opt, fp)?) } else { None },
        seed,
    })
}

fn write_trajectory(path: &Path, out: &RunOutcome, p: &Problem, u_ref: &DVector<f64>, every: usize) -> Result<(), CliError> {
    let m = sim::metrics(&out.traj, u_ref, &p.model);
    let mut w = create(path)?;
    sim::write_csv(&mut w, &out.traj, &m, every)?;
    w.flush()?;
    Ok(())
}

pub fn analyze(loaded: &Loaded, out: Option<&Path>) -> Result<bool, CliError> {
    let cfg = &loaded.config;
    let eta = cfg.require_eta()?;
    let p = loaded.problem(false)?;
    let report = AnalysisReport::build(&p.obj, &p.model, &p.d, p.plant.as_ref(), eta, &cfg.eta_grid(), cfg.convention())?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("analysis.json"), &report)?;
    }
    Ok(report.certified())
}

/// Runs the configured loop; writes `trajectory.csv`, `metrics.json` and
/// `manifest.json`. A diverging run still writes its truncated trajectory.
pub fn simulate(loaded: &Loaded, out: &Path, force_grid: bool) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let controller = cfg.controller()?;
    let p = loaded.problem(force_grid)?;
    let kind = loaded.loop_kind(&p)?;
    let mut rng = loaded.rng();
    let u0 = loaded.initial("u0", cfg.u0.as_ref(), p.n(), &mut rng)?;
    let n_state = p.plant.as_ref().map_or(0, |pl| pl.n_state());
    let x0 = loaded.initial("x0", cfg.x0.as_ref(), n_state, &mut rng)?;
    let (opt, fp) = equilibria_of(&p)?;
    let outcome = run(&p, &controller, kind, &x0, &u0, cfg.steps(), cfg.seed())?;

    ensure_dir(out)?;
    write_trajectory(&out.join("trajectory.csv"), &outcome, &p, &opt.u, cfg.decimation())?;
    let metrics = run_metrics(&p, &outcome, &opt, &fp, cfg.seed())?;
    write_json(&out.join("metrics.json"), &metrics)?;
    let command = if force_grid { "grid simulate" } else { "simulate" };
    let params = json!({
        "mode": controller.mode,
        "eta": controller.eta,
        "loop": kind,
        "steps": cfg.steps(),
        "decimation": cfg.decimation(),
        "u0": u0.as_slice(),
        "x0": x0.as_slice(),
    });
    let files = vec!["trajectory.csv".into(), "metrics.json".into()];
    write_json(&out.join("manifest.json"), &manifest(loaded, command, params, files))?;
    match outcome.diverged_at {
        Some(step) => Err(CliError::Numerical(format!(
            "iterates left the finite range at step {step}; trajectory truncated in {}",
            out.join("trajectory.csv").display()
        ))),
        None => Ok(()),
    }
}

/// Centralized and decentralized runs on the algebraic and dynamic grid.
pub fn figure3(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let eta = cfg.eta.unwrap_or(FIGURE_ETA);
    let p = loaded.problem(true)?;
    let grid = p.grid.as_ref().expect("grid problem");
    let (opt, fp) = equilibria_of(&p)?;
    let (u0, x0) = (DVector::zeros(p.n()), DVector::zeros(grid.plant.n_state()));
    ensure_dir(out)?;
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for mode in [ControllerMode::Centralized, ControllerMode::Decentralized] {
        for kind in [PlantKind::Algebraic, PlantKind::Lti] {
            let controller = ControllerConfig::new(mode, eta)?;
            let outcome = run(&p, &controller, kind, &x0, &u0, cfg.steps(), cfg.seed())?;
            if let Some(step) = outcome.diverged_at {
                return Err(CliError::Numerical(format!("{mode} {kind} run diverged at step {step}")));
            }
            let name = format!("{mode}_{kind}.csv");
            write_trajectory(&out.join(&name), &outcome, &p, &opt.u, cfg.decimation())?;
            runs.push(json!({ "file": name, "metrics": run_metrics(&p, &outcome, &opt, &fp, cfg.seed())? }));
            files.push(name);
        }
    }
    let params = json!({
        "eta": eta,
        "g": grid.spec.node_conductance,
        "epsilon": grid.spec.epsilon,
        "steps": cfg.steps(),
        "decimation": cfg.decimation(),
        "runs": runs,
    });
    write_json(&out.join("manifest.json"), &manifest(loaded, "figures fig3", params, files))
}

pub struct SweepArgs {
    pub g: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub parallel: bool,
}

/// G sweep; writes `<stem>.csv`, `<stem>.json` and `manifest.json`.
pub fn sweep(loaded: &Loaded, out: &Path, args: &SweepArgs, stem: &str, command: &str) -> Result<Vec<SweepRow>, CliError> {
    let cfg = &loaded.config;
    let g = args.g.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    if g.is_empty() {
        return Err(CliError::Config("--g needs at least one value".into()));
    }
    let eta = args.eta.or(cfg.eta).unwrap_or(FIGURE_ETA);
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CliError::Config(format!("`eta` must be positive, got {eta}")));
    }
    let steps = args.steps.unwrap_or(cfg.steps());
    let parallel = args.parallel || cfg.parallel.unwrap_or(false);
    let spec = loaded.grid_spec()?;
    let rows = powergrid::sweep_g(&spec, &g, eta, steps, parallel);
    ensure_dir(out)?;
    let csv = format!("{stem}.csv");
    let js = format!("{stem}.json");
    let mut w = create(&out.join(&csv))?;
    powergrid::write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    write_json(&out.join(&js), &rows)?;
    let params = json!({ "g": g, "eta": eta, "steps": steps, "epsilon": spec.epsilon });
    write_json(&out.join("manifest.json"), &manifest(loaded, command, params, vec![csv, js]))?;
    Ok(rows)
}

#[derive(Serialize)]
struct SensitivityFile {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    h_diag: Vec<f64>,
    disturbance: Vec<f64>,
    y_ref: Vec<f64>,
    epsilon: f64,
    spectral_radius: f64,
    degrees: Vec<usize>,
}

/// Writes the grid spec, the discretized plant and its sensitivity.
pub fn grid_build(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    let spec = loaded.grid_spec()?;
    let grid = powergrid::assemble_plant(&spec)?;
    ensure_dir(out)?;
    write_json(&out.join("grid_spec.json"), &grid.spec)?;
    write_json(&out.join("plant.json"), &grid.plant.to_file())?;
    let sens = SensitivityFile {
        h: ofo_core::linalg::matrix_to_rows(grid.model.h()),
        h_diag: grid.model.h_diag().diagonal().iter().copied().collect(),
        disturbance: grid.disturbance.iter().copied().collect(),
        y_ref: grid.y_ref.iter().copied().collect(),
        epsilon: spec.epsilon,
        spectral_radius: ofo_core::linalg::spectral_radius(grid.plant.a()),
        degrees: spec.degrees(),
    };
    write_json(&out.join("sensitivity.json"), &sens)?;
    let files = vec!["grid_spec.json".into(), "plant.json".into(), "sensitivity.json".into()];
    let params = json!({ "n_nodes": spec.n_nodes, "n_edges": spec.n_edges(), "n_states": grid.plant.n_state() });
    write_json(&out.join("manifest.json"), &manifest(loaded, "grid build", params, files))
}

pub fn out_dir(out: Option<&Path>, sub: Option<&str>) -> PathBuf {
    let base = out.map_or_else(|| PathBuf::from(DEFAULT_OUT), Path::to_path_buf);
    match sub {
        Some(s) if out.is_none() => base.join(s),
        _ => base,
    }
}
