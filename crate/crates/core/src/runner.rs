//! Run orchestration: single flow runs with their output files, radius and
//! penalty sweeps, and snapshot classification.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{build_confinement, ConfinementSpec, CurveSpec, OpenBoundary, RunConfig};
use crate::confinement::CompositeConfinement;
use crate::curve_model::{dof_map, generate, perturb_positions, BoundaryCondition};
use crate::diagnostics::{classify, normalized_energy, ClassificationResult, ClassifyTolerances, ShapeClass};
use crate::error::{Error, Result};
use crate::flow::{FlowParams, FlowSolver, FlowState, Termination};
use crate::io::{read_snapshot, write_json, write_snapshot, EnergyLog, RunSummary, SummaryEnergies, TerminationReason};
use crate::spline::DiscreteCurve;

/// Everything a flow run needs, resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub curve: DiscreteCurve,
    pub bc: BoundaryCondition,
    pub confinement: CompositeConfinement,
    pub params: FlowParams,
}

/// Builds the (possibly perturbed) initial curve, boundary condition,
/// confinement and flow parameters.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let (mut curve, bc) = match &config.curve {
        CurveSpec::File { file, boundary } => {
            let curve = read_snapshot(file)?.curve;
            let bc = if curve.mesh().closed() {
                BoundaryCondition::Periodic
            } else {
                match boundary.unwrap_or(OpenBoundary::Clamped) {
                    OpenBoundary::Clamped => BoundaryCondition::clamped_at(&curve),
                    OpenBoundary::Free => BoundaryCondition::Free,
                }
            };
            (curve, bc)
        }
        _ => {
            let analytic = config.analytic_curve().expect("analytic curve source");
            let n = config.n_elements.ok_or(Error::InvalidParameter { name: "n_elements", msg: "missing".into() })?;
            (generate(&analytic, n)?, BoundaryCondition::Periodic)
        }
    };
    let dofs = dof_map(curve.mesh(), &bc)?;
    perturb_positions(&mut curve, &dofs, config.flow.perturb_amplitude, config.flow.seed);
    let params = config.flow.params(curve.mesh().max_element_length());
    Ok(Prepared { curve, bc, confinement: build_confinement(&config.confinement)?, params })
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub state: FlowState,
    pub classification: Option<ClassificationResult>,
}

fn snapshot_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("snap_{k}.txt"))
}

/// Runs the flow described by `config`, writing `energy.csv`, `snap_<k>.txt`
/// (initial, every `snapshot_every` steps, final) and `summary.json` into
/// `out_dir`. On failure a summary with reason `error` is still written.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut progress = None;
    let result = run_inner(config, out_dir, &mut progress);
    if let Err(e) = &result {
        let (steps, tau, length, n) = progress.unwrap_or((0, 0.0, 0.0, 0));
        let summary = RunSummary {
            termination_reason: TerminationReason::Error,
            error: Some(e.to_string()),
            steps,
            time: steps as f64 * tau,
            n_elements: n,
            length,
            kappa: config.flow.kappa,
            epsilon: config.flow.epsilon,
            tau,
            seed: config.flow.seed,
            energies: None,
            dtu_norm: None,
            arclen_violation: None,
            max_penetration: None,
            shape: None,
            classification: None,
        };
        write_json(&out_dir.join("summary.json"), &summary)?;
    }
    result
}

fn run_inner(config: &RunConfig, out_dir: &Path, progress: &mut Option<(usize, f64, f64, usize)>) -> Result<RunOutcome> {
    let prepared = prepare(config)?;
    let mesh = prepared.curve.mesh().clone();
    let params = prepared.params.clone();
    *progress = Some((0, params.tau, mesh.length(), mesh.n_elements()));
    let solver = FlowSolver::new(&mesh, &prepared.bc, prepared.confinement, params.clone())?;
    let state = solver.start(prepared.curve)?;

    let mut log = EnergyLog::create(&out_dir.join("energy.csv"))?;
    log.push(state.last_record())?;
    write_snapshot(&snapshot_path(out_dir, 0), &state.curve, 0)?;
    let every = params.snapshot_every.max(1);
    let mut last_written = 0;
    let outcome = solver.run(state, |s| {
        log.push(s.last_record())?;
        *progress = Some((s.k, params.tau, mesh.length(), mesh.n_elements()));
        if s.k % every == 0 {
            write_snapshot(&snapshot_path(out_dir, s.k), &s.curve, s.k)?;
            last_written = s.k;
        }
        Ok(())
    });
    log.finish()?;
    let state = outcome?;
    if last_written != state.k {
        write_snapshot(&snapshot_path(out_dir, state.k), &state.curve, state.k)?;
    }

    let classification =
        if mesh.closed() { Some(classify(&state.curve, &ClassifyTolerances::default())?) } else { None };
    let last = *state.last_record();
    let normalized = if mesh.closed() { normalized_energy(&state.curve, params.kappa) } else { f64::NAN };
    let summary = RunSummary {
        termination_reason: match state.termination {
            Some(Termination::Stationary) => TerminationReason::Stationary,
            _ => TerminationReason::StepBudget,
        },
        error: None,
        steps: state.k,
        time: last.time,
        n_elements: mesh.n_elements(),
        length: mesh.length(),
        kappa: params.kappa,
        epsilon: params.epsilon,
        tau: params.tau,
        seed: config.flow.seed,
        energies: Some(SummaryEnergies {
            bend: last.e_bend,
            conf: last.e_conf,
            total: last.e_total,
            normalized: if normalized.is_finite() { normalized } else { 0.0 },
        }),
        dtu_norm: Some(last.dtu_norm),
        arclen_violation: Some(last.arclen_violation),
        max_penetration: Some(last.max_penetration),
        shape: classification.map(|c| c.shape.to_string()),
        classification,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(RunOutcome { summary, state, classification })
}

/// Runs `jobs` on a pool of `workers` threads (all cores if `None`),
/// preserving the input order of the results.
fn parallel<T: Sync, R: Send>(workers: Option<usize>, jobs: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Result<Vec<R>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidParameter { name: "workers", msg: e.to_string() })?;
    Ok(pool.install(|| jobs.par_iter().enumerate().map(|(i, j)| f(i, j)).collect()))
}

fn shape_indices(shape: &ShapeClass) -> (Option<u32>, Option<u32>) {
    match *shape {
        ShapeClass::Circle { mu } => (Some(mu), None),
        ShapeClass::Clew { mu, nu } => (Some(mu), Some(nu)),
        ShapeClass::Unclassified => (None, None),
    }
}

fn nominal_length(config: &RunConfig) -> Result<f64> {
    match &config.curve {
        CurveSpec::File { file, .. } => Ok(read_snapshot(file)?.curve.mesh().length()),
        _ => Ok(config.analytic_curve().expect("analytic curve source").length),
    }
}

pub const RADIUS_HEADER: [&str; 8] = ["radius", "ratio", "normalized_energy", "shape", "mu", "nu", "steps", "termination"];

/// One row of `sweep.csv` for a radius sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub radius: f64,
    /// `r_L / R` with `r_L = L / 2π`.
    pub ratio: f64,
    /// `sqrt(E_bend / E_L)`.
    pub normalized_energy: f64,
    pub shape: String,
    pub mu: Option<u32>,
    pub nu: Option<u32>,
    pub steps: usize,
    pub termination: TerminationReason,
}

/// Runs the configuration once per ball radius (replacing its confinements)
/// and writes `sweep.csv` into the configured output directory; run `i`
/// writes its files to `run_<i>/`.
pub fn sweep_radius(config: &RunConfig, radii: &[f64], workers: Option<usize>) -> Result<Vec<RadiusRow>> {
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidParameter { name: "radius", msg: format!("must be positive, got {r}") });
    }
    if matches!(config.curve, CurveSpec::File { .. }) {
        let curve = read_snapshot(&file_of(config))?.curve;
        if !curve.mesh().closed() {
            return Err(Error::InvalidCurve("radius sweeps need a closed curve".into()));
        }
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let r_l = nominal_length(config)? / TAU;
    let results = parallel(workers, radii, |i, &radius| {
        let mut sub = config.clone();
        sub.confinement = vec![ConfinementSpec::ball(radius)];
        sub.output_dir = config.output_dir.join(format!("run_{i}"));
        run(&sub, &sub.output_dir).map(|o| {
            let c = o.classification.expect("closed curve");
            let (mu, nu) = shape_indices(&c.shape);
            RadiusRow {
                radius,
                ratio: r_l / radius,
                normalized_energy: o.summary.energies.as_ref().map_or(f64::NAN, |e| e.normalized),
                shape: c.shape.to_string(),
                mu,
                nu,
                steps: o.summary.steps,
                termination: o.summary.termination_reason,
            }
        })
    })?;
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_csv(&config.output_dir.join("sweep.csv"), &RADIUS_HEADER, &rows)?;
    Ok(rows)
}

fn file_of(config: &RunConfig) -> PathBuf {
    match &config.curve {
        CurveSpec::File { file, .. } => file.clone(),
        _ => unreachable!(),
    }
}

pub const EPSILON_HEADER: [&str; 8] = ["epsilon", "max_penetration", "shape", "mu", "nu", "e_total", "steps", "termination"];

/// One row of `sweep.csv` for a penalty sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub max_penetration: f64,
    pub shape: String,
    pub mu: Option<u32>,
    pub nu: Option<u32>,
    pub e_total: f64,
    pub steps: usize,
    pub termination: TerminationReason,
}

/// Penalty sweep result; `slope` is the least-squares slope of
/// `log(max_penetration)` against `log(ε)` (needs two positive points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweep {
    pub rows: Vec<EpsilonRow>,
    pub slope: Option<f64>,
}

/// Runs the configuration once per penalty scale; writes `sweep.csv` and a
/// `summary.json` holding the fitted slope.
pub fn sweep_epsilon(config: &RunConfig, epsilons: &[f64], workers: Option<usize>) -> Result<EpsilonSweep> {
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter { name: "epsilon", msg: format!("must be positive, got {e}") });
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let results = parallel(workers, epsilons, |i, &epsilon| {
        let mut sub = config.clone();
        sub.flow.epsilon = epsilon;
        sub.output_dir = config.output_dir.join(format!("run_{i}"));
        run(&sub, &sub.output_dir).map(|o| {
            let shape = o.classification.map_or(ShapeClass::Unclassified, |c| c.shape);
            let (mu, nu) = shape_indices(&shape);
            EpsilonRow {
                epsilon,
                max_penetration: o.summary.max_penetration.unwrap_or(f64::NAN),
                shape: shape.to_string(),
                mu,
                nu,
                e_total: o.summary.energies.as_ref().map_or(f64::NAN, |e| e.total),
                steps: o.summary.steps,
                termination: o.summary.termination_reason,
            }
        })
    })?;
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, r.max_penetration)).collect();
    let sweep = EpsilonSweep { slope: log_log_slope(&points), rows };
    write_csv(&config.output_dir.join("sweep.csv"), &EPSILON_HEADER, &sweep.rows)?;
    write_json(&config.output_dir.join("summary.json"), &sweep)?;
    Ok(sweep)
}

/// Least-squares slope of `ln y` against `ln x` over the points with
/// positive coordinates; `None` with fewer than two such points.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Classifies the closed curve stored in a snapshot file.
pub fn classify_snapshot(path: &Path) -> Result<ClassificationResult> {
    let snap = read_snapshot(path)?;
    if !snap.curve.mesh().closed() {
        return Err(Error::InvalidCurve("classification needs a closed curve".into()));
    }
    classify(&snap.curve, &ClassifyTolerances::default())
}
