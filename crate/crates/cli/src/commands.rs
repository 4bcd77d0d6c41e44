use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use veripc_core::hybrid::{HybridAutomaton, Trajectory};
use veripc_core::mpc::{build_parametric_lp, solve_mplp, ExplicitSolution, MplpConfig};
use veripc_core::reach::{compute_reach, Reachtube, Verdict, VerdictJson};

use crate::model::{load_model, read_json, ModelSpec};
use crate::plot::{render_svg, PlotScene};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub k: usize,
    pub wall_time_s: f64,
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifacts serialize") + "\n"
}

pub fn synthesize(spec: &ModelSpec) -> Result<(ExplicitSolution, SynthReport), CliError> {
    let prob = spec.mpc.as_ref().ok_or_else(|| CliError::Validation {
        field: "mpc".into(),
        message: "synthesis needs an MPC problem".into(),
    })?;
    let started = Instant::now();
    let plp = build_parametric_lp(prob)?;
    let sol = solve_mplp(&plp, &prob.param_domain, &MplpConfig::default())?;
    let report = SynthReport { k: sol.k(), wall_time_s: started.elapsed().as_secs_f64() };
    Ok((sol, report))
}

pub fn load_solution(path: &Path) -> Result<ExplicitSolution, CliError> {
    read_json(path)
}

/// Explicit `--solution`, then the model's `solution_file`, then synthesis.
pub fn obtain_solution(spec: &ModelSpec, explicit: Option<&Path>) -> Result<ExplicitSolution, CliError> {
    let sol = match explicit.or(spec.solution_file.as_deref()) {
        Some(p) => load_solution(p)?,
        None => synthesize(spec)?.0,
    };
    if sol.state_dim() != spec.state_dim() || sol.input_dim() != spec.input_dim() {
        return Err(CliError::Validation {
            field: "solution_file".into(),
            message: format!(
                "law is for {} states / {} inputs, model has {} / {}",
                sol.state_dim(),
                sol.input_dim(),
                spec.state_dim(),
                spec.input_dim()
            ),
        });
    }
    Ok(sol)
}

pub fn automaton(spec: &ModelSpec, sol: ExplicitSolution) -> Result<HybridAutomaton, CliError> {
    Ok(HybridAutomaton::new(spec.field.clone(), spec.jacobian.clone(), sol, spec.ts, spec.hold)?)
}

pub fn cmd_synthesize(model: &Path, out: &Path) -> Result<SynthReport, CliError> {
    let spec = load_model(model)?;
    let (sol, report) = synthesize(&spec)?;
    write(out, to_json(&sol))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    pub threads: Option<usize>,
    pub deterministic: bool,
}

pub fn verify(spec: &ModelSpec, sol: ExplicitSolution, opts: VerifyOptions) -> Result<Verdict, CliError> {
    let task = spec.verify.as_ref().ok_or_else(|| CliError::Validation {
        field: "verify".into(),
        message: "the model has no verification task".into(),
    })?;
    let ha = automaton(spec, sol)?;
    let mut cfg = task.config.clone();
    cfg.threads = opts.threads;
    cfg.deterministic = opts.deterministic;
    Ok(compute_reach(&ha, &task.initial, task.tv, &task.unsafe_sets, &cfg))
}

/// Runs the pipeline and writes `verdict.json` and `tube.json` into `out_dir`.
pub fn cmd_verify(model: &Path, solution: Option<&Path>, out_dir: &Path, opts: VerifyOptions) -> Result<Verdict, CliError> {
    let spec = load_model(model)?;
    let sol = obtain_solution(&spec, solution)?;
    let verdict = verify(&spec, sol, opts)?;
    write(&out_dir.join("verdict.json"), to_json(&verdict.to_json()))?;
    write(&out_dir.join("tube.json"), to_json(&verdict.tube))?;
    Ok(verdict)
}

/// Writes the trajectory CSV. An initial state outside the law's regions
/// still yields a one-row file, flagged infeasible.
pub fn cmd_simulate(model: &Path, x0: &[f64], tv: f64, h: f64, out: &Path) -> Result<Trajectory, CliError> {
    let spec = load_model(model)?;
    if x0.len() != spec.state_dim() {
        return Err(CliError::Usage(format!(
            "--x0 has {} entries, the model has {} states",
            x0.len(),
            spec.state_dim()
        )));
    }
    let sol = obtain_solution(&spec, None)?;
    let ha = automaton(&spec, sol)?;
    let traj = ha.simulate(&DVector::from_row_slice(x0), tv, h)?;
    write(out, traj.to_csv())?;
    Ok(traj)
}

/// Draws a tube. `model` adds the initial box and unsafe sets; a
/// `verdict.json` next to the tube adds a caption.
pub fn cmd_plot(tube_path: &Path, dims: (usize, usize), out: &Path, model: Option<&Path>) -> Result<(), CliError> {
    let tube: Reachtube = read_json(tube_path)?;
    let verdict = tube_path
        .parent()
        .map(|d| d.join("verdict.json"))
        .filter(|p| p.exists())
        .map(|p| read_json::<VerdictJson>(&p))
        .transpose()?;
    let spec = model.map(load_model).transpose()?;
    let task = spec.as_ref().and_then(|s| s.verify.as_ref());
    let scene = PlotScene {
        tube: &tube,
        initial: task.map(|t| &t.initial),
        unsafe_sets: task.map_or(&[][..], |t| &t.unsafe_sets[..]),
        caption: verdict.map(|v| format!("{:?}: {}", v.kind, v.detail)),
    };
    let svg = render_svg(&scene, dims)?;
    write(out, svg)
}
