//! Run configuration: a TOML document with `[curve]`, `[mesh]`, `[flow]`,
//! `[[confinement]]` and `[output]` tables.
//!
//! ```toml
//! [curve]
//! type = "torus_knot"
//! length = 31.9
//! p = 2
//! q = 3
//!
//! [mesh]
//! n_elements = 107
//!
//! [flow]
//! epsilon = 0.01
//!
//! [[confinement]]
//! type = "ball"
//! radius = 4.6
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::confinement::{build, Axis, AxisName, CompositeConfinement, ConfinementKind, Point};
use crate::curve_model::{AnalyticCurve, CurveFamily};
use crate::error::{Error, Result};
use crate::flow::{FlowParams, DEFAULT_KAPPA, DEFAULT_SNAPSHOT_EVERY, DEFAULT_STOP_TOL, DEFAULT_TAU_FACTOR};
use crate::saddle::SolveMethod;

pub const DEFAULT_MAX_STEPS: usize = 100_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    curve: CurveSpec,
    mesh: Option<RawMesh>,
    #[serde(default)]
    flow: RawFlow,
    #[serde(default)]
    confinement: Vec<ConfinementSpec>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    n_elements: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    kappa: Option<f64>,
    epsilon: Option<f64>,
    tau: Option<f64>,
    tau_factor: Option<f64>,
    max_steps: Option<usize>,
    stop_tol: Option<f64>,
    snapshot_every: Option<usize>,
    seed: Option<u64>,
    perturb_amplitude: Option<f64>,
    solver: Option<SolveMethod>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// Boundary condition requested for an open curve loaded from a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpenBoundary {
    Clamped,
    Free,
}

/// The `[curve]` table: exactly one curve source.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Circle {
        length: f64,
        #[serde(default = "one")]
        turns: u32,
    },
    TorusKnot {
        length: f64,
        p: i64,
        q: i64,
        a: Option<f64>,
        b: Option<f64>,
        c: Option<f64>,
    },
    PerturbedCircle {
        length: f64,
        nu: u32,
        amplitude: Option<f64>,
    },
    File {
        file: PathBuf,
        boundary: Option<OpenBoundary>,
    },
}

fn one() -> u32 {
    1
}

/// One `[[confinement]]` entry; all confinements are intersected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConfinementSpec {
    Ball {
        radius: f64,
        center: Option<[f64; 3]>,
    },
    Ellipsoid {
        radii: [f64; 3],
        center: Option<[f64; 3]>,
    },
    Slab {
        normal: [f64; 3],
        radius: f64,
        center: Option<[f64; 3]>,
    },
    Halfspace {
        normal: [f64; 3],
        offset: f64,
        center: Option<[f64; 3]>,
    },
    Cylinder {
        radius: f64,
        /// Half-height along the axis.
        height: f64,
        axis: Option<Axis>,
        center: Option<[f64; 3]>,
    },
    Box {
        radii: [f64; 3],
        center: Option<[f64; 3]>,
    },
}

impl ConfinementSpec {
    pub fn ball(radius: f64) -> Self {
        ConfinementSpec::Ball { radius, center: None }
    }

    pub fn kind(&self) -> ConfinementKind {
        match *self {
            ConfinementSpec::Ball { radius, .. } => ConfinementKind::Ball { radius },
            ConfinementSpec::Ellipsoid { radii, .. } => ConfinementKind::Ellipsoid { radii },
            ConfinementSpec::Slab { normal, radius, .. } => ConfinementKind::Slab { normal, radius },
            ConfinementSpec::Halfspace { normal, offset, .. } => ConfinementKind::HalfSpace { normal, offset },
            ConfinementSpec::Cylinder { radius, height, axis, .. } => {
                ConfinementKind::Cylinder { radius, height, axis: axis.unwrap_or(Axis::Named(AxisName::Z)) }
            }
            ConfinementSpec::Box { radii, .. } => ConfinementKind::Box { radii },
        }
    }

    pub fn center(&self) -> Option<Point> {
        let c = match self {
            ConfinementSpec::Ball { center, .. }
            | ConfinementSpec::Ellipsoid { center, .. }
            | ConfinementSpec::Slab { center, .. }
            | ConfinementSpec::Halfspace { center, .. }
            | ConfinementSpec::Cylinder { center, .. }
            | ConfinementSpec::Box { center, .. } => center,
        };
        c.map(Point::from)
    }

    pub fn build(&self) -> Result<CompositeConfinement> {
        build(&self.kind(), self.center())
    }
}

/// Builds the intersection of all listed confinements. An empty list gives an
/// inactive confinement (free elastica).
pub fn build_confinement(specs: &[ConfinementSpec]) -> Result<CompositeConfinement> {
    if specs.is_empty() {
        return CompositeConfinement::unconfined();
    }
    CompositeConfinement::intersect(specs.iter().map(ConfinementSpec::build).collect::<Result<Vec<_>>>()?)
}

/// Flow settings as given; `τ` is resolved against the mesh size later.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub kappa: f64,
    pub epsilon: f64,
    /// Absolute time step; ignored when `tau_factor` is set.
    pub tau: Option<f64>,
    /// Time step relative to the largest element length.
    pub tau_factor: Option<f64>,
    pub max_steps: usize,
    pub stop_tol: f64,
    pub snapshot_every: usize,
    pub seed: u64,
    pub perturb_amplitude: f64,
    pub solver: SolveMethod,
}

impl FlowConfig {
    /// Resolves the time step for maximal element length `h`.
    pub fn params(&self, h: f64) -> FlowParams {
        let tau = match (self.tau_factor, self.tau) {
            (Some(f), _) => f * h,
            (None, Some(t)) => t,
            (None, None) => DEFAULT_TAU_FACTOR * h,
        };
        FlowParams {
            kappa: self.kappa,
            epsilon: self.epsilon,
            tau,
            max_steps: self.max_steps,
            stop_tol: self.stop_tol,
            snapshot_every: self.snapshot_every,
            method: self.solver,
        }
    }
}

/// A validated run configuration with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub curve: CurveSpec,
    /// Required for analytic curves; taken from the file otherwise.
    pub n_elements: Option<usize>,
    pub flow: FlowConfig,
    pub confinement: Vec<ConfinementSpec>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// The analytic curve, if the curve source is not a file.
    pub fn analytic_curve(&self) -> Option<AnalyticCurve> {
        analytic(&self.curve)
    }

    /// Resolves a relative curve file path against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let CurveSpec::File { file, .. } = &mut self.curve {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
        Error::Config { line, msg: e.message().to_string() }
    })?;
    let locate = Locator { text };

    let n_elements = raw.mesh.as_ref().map(|m| m.n_elements);
    match (&raw.curve, n_elements) {
        (CurveSpec::File { .. }, Some(_)) => {
            return Err(locate.error("mesh", 0, "n_elements", "mesh.n_elements must not be set when the curve comes from a file"));
        }
        (CurveSpec::File { .. }, None) => {}
        (_, None) => return Err(locate.error("curve", 0, "type", "missing required table [mesh] with n_elements")),
        (_, Some(n)) if n < 8 => {
            return Err(locate.error("mesh", 0, "n_elements", &format!("n_elements must be at least 8, got {n}")));
        }
        _ => {}
    }
    validate_curve(&raw.curve, &locate)?;

    let f = &raw.flow;
    let kappa = f.kappa.unwrap_or(DEFAULT_KAPPA);
    let flow = FlowConfig {
        kappa,
        epsilon: f.epsilon.unwrap_or(1.0 / (10.0 * kappa)),
        tau: f.tau,
        tau_factor: f.tau_factor.or(if f.tau.is_none() { Some(DEFAULT_TAU_FACTOR) } else { None }),
        max_steps: f.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        stop_tol: f.stop_tol.unwrap_or(DEFAULT_STOP_TOL),
        snapshot_every: f.snapshot_every.unwrap_or(DEFAULT_SNAPSHOT_EVERY),
        seed: f.seed.unwrap_or(0),
        perturb_amplitude: f.perturb_amplitude.unwrap_or(0.0),
        solver: f.solver.unwrap_or_default(),
    };
    for (key, v) in [
        ("kappa", Some(flow.kappa)),
        ("epsilon", Some(flow.epsilon)),
        ("tau", flow.tau),
        ("tau_factor", flow.tau_factor),
        ("stop_tol", Some(flow.stop_tol)),
    ] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(locate.error("flow", 0, key, &format!("{key} must be positive, got {v}")));
            }
        }
    }
    if !(flow.perturb_amplitude >= 0.0 && flow.perturb_amplitude.is_finite()) {
        return Err(locate.error("flow", 0, "perturb_amplitude", "perturb_amplitude must be non-negative"));
    }
    if flow.snapshot_every == 0 {
        return Err(locate.error("flow", 0, "snapshot_every", "snapshot_every must be at least 1"));
    }

    for (i, entry) in raw.confinement.iter().enumerate() {
        if let Err(e) = entry.build() {
            let key = match &e {
                Error::InvalidParameter { name, .. } => name,
                _ => "type",
            };
            return Err(locate.error("confinement", i, key, &format!("confinement #{}: {e}", i + 1)));
        }
    }

    Ok(RunConfig {
        curve: raw.curve,
        n_elements,
        flow,
        confinement: raw.confinement,
        output_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
    })
}

/// Reads and parses a configuration file; relative paths inside it are
/// resolved against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = parse_config(&text)?;
    if let Some(base) = path.parent() {
        config.resolve_paths(base);
    }
    Ok(config)
}

fn analytic(curve: &CurveSpec) -> Option<AnalyticCurve> {
    let (family, length) = match *curve {
        CurveSpec::Circle { length, turns } => (CurveFamily::Circle { radius: 1.0, turns }, length),
        CurveSpec::TorusKnot { length, p, q, a, b, c } => {
            let mut family = CurveFamily::torus_knot(p, q);
            if let CurveFamily::TorusKnot { a: a0, b: b0, c: c0, .. } = &mut family {
                *a0 = a.unwrap_or(*a0);
                *b0 = b.unwrap_or(*b0);
                *c0 = c.unwrap_or(*c0);
            }
            (family, length)
        }
        CurveSpec::PerturbedCircle { length, nu, amplitude } => {
            let mut family = CurveFamily::perturbed_circle(1.0, nu);
            if let (Some(a), CurveFamily::PerturbedCircle { amplitude: slot, .. }) = (amplitude, &mut family) {
                *slot = a;
            }
            (family, length)
        }
        CurveSpec::File { .. } => return None,
    };
    Some(AnalyticCurve { family, length })
}

fn validate_curve(curve: &CurveSpec, locate: &Locator<'_>) -> Result<()> {
    let positive = |key: &str, v: f64| -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(locate.error("curve", 0, key, &format!("{key} must be positive, got {v}")))
        }
    };
    match *curve {
        CurveSpec::Circle { length, turns } => {
            positive("length", length)?;
            if turns == 0 {
                return Err(locate.error("curve", 0, "turns", "turns must be at least 1"));
            }
        }
        CurveSpec::TorusKnot { length, p, q, a, b, c } => {
            positive("length", length)?;
            for (key, v) in [("a", a), ("b", b), ("c", c)] {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(locate.error("curve", 0, key, &format!("{key} must be finite")));
                    }
                }
            }
            let family = analytic(curve).map(|c| c.family).unwrap_or(CurveFamily::torus_knot(p, q));
            family.validate().map_err(|e| locate.error("curve", 0, "p", &e.to_string()))?;
        }
        CurveSpec::PerturbedCircle { length, nu, amplitude } => {
            positive("length", length)?;
            if nu == 0 {
                return Err(locate.error("curve", 0, "nu", "nu must be at least 1"));
            }
            if let Some(a) = amplitude {
                if !a.is_finite() {
                    return Err(locate.error("curve", 0, "amplitude", "amplitude must be finite"));
                }
            }
        }
        CurveSpec::File { .. } => {}
    }
    Ok(())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Finds the line of a key inside the `index`-th occurrence of a table.
struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    fn line(&self, table: &str, index: usize, key: &str) -> usize {
        let mut current: Option<(&str, usize)> = None;
        let mut seen = std::collections::HashMap::<String, usize>::new();
        let mut header_line = None;
        for (n, raw) in self.text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(name) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
                let name = name.trim();
                let count = seen.entry(name.to_string()).or_insert(0);
                current = Some((name, *count));
                *count += 1;
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some((name.trim(), 0));
            } else if current == Some((table, index)) {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim() == key {
                        return n + 1;
                    }
                }
                continue;
            } else {
                continue;
            }
            if current == Some((table, index)) {
                header_line = Some(n + 1);
            }
        }
        header_line.unwrap_or(1)
    }

    fn error(&self, table: &str, index: usize, key: &str, msg: &str) -> Error {
        Error::Config { line: self.line(table, index, key), msg: msg.to_string() }
    }
}
