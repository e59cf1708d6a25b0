//! Initial curves and boundary conditions.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confinement::Point;
use crate::error::{Error, Result};
use crate::spline::{unit_tangent, DiscreteCurve, Mesh, DOFS_PER_NODE};

/// Closed analytic curve families, parametrized over `t ∈ [0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveFamily {
    /// Planar circle traversed `turns` times.
    Circle { radius: f64, turns: u32 },
    /// `((a + b cos qt) cos pt, (a + b cos qt) sin pt, c sin qt)`.
    TorusKnot { p: i64, q: i64, a: f64, b: f64, c: f64 },
    /// Circle with out-of-plane ripple `z = A sin(νt)`, `ν`-fold symmetric about z.
    PerturbedCircle { radius: f64, nu: u32, amplitude: f64 },
}

impl CurveFamily {
    pub fn torus_knot(p: i64, q: i64) -> Self {
        CurveFamily::TorusKnot { p, q, a: 3.0, b: 1.0, c: 1.0 }
    }

    pub fn perturbed_circle(radius: f64, nu: u32) -> Self {
        CurveFamily::PerturbedCircle { radius, nu, amplitude: 0.3 * radius }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCurve(msg));
        match *self {
            CurveFamily::Circle { radius, turns } => {
                if !(radius > 0.0) {
                    return bad(format!("circle radius must be positive, got {radius}"));
                }
                if turns == 0 {
                    return bad("circle needs at least one turn".into());
                }
            }
            CurveFamily::TorusKnot { p, q, a, b, c } => {
                if p == 0 && q == 0 {
                    return bad("torus knot needs p or q non-zero".into());
                }
                if gcd(p.unsigned_abs(), q.unsigned_abs()) != 1 {
                    return bad(format!("torus knot winding numbers ({p}, {q}) are not coprime"));
                }
                if !(a > b.abs()) || !c.is_finite() {
                    return bad(format!("torus knot needs a > |b|, got a={a}, b={b}"));
                }
            }
            CurveFamily::PerturbedCircle { radius, nu, amplitude } => {
                if !(radius > 0.0) {
                    return bad(format!("perturbed circle radius must be positive, got {radius}"));
                }
                if nu == 0 {
                    return bad("symmetry order nu must be at least 1".into());
                }
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite".into());
                }
            }
        }
        Ok(())
    }

    pub fn point(&self, t: f64) -> Point {
        match *self {
            CurveFamily::Circle { radius, turns } => {
                let s = turns as f64 * t;
                Point::new(radius * s.cos(), radius * s.sin(), 0.0)
            }
            CurveFamily::TorusKnot { p, q, a, b, c } => {
                let (p, q) = (p as f64, q as f64);
                let rho = a + b * (q * t).cos();
                Point::new(rho * (p * t).cos(), rho * (p * t).sin(), c * (q * t).sin())
            }
            CurveFamily::PerturbedCircle { radius, nu, amplitude } => {
                Point::new(radius * t.cos(), radius * t.sin(), amplitude * (nu as f64 * t).sin())
            }
        }
    }

    pub fn derivative(&self, t: f64) -> Vector3<f64> {
        match *self {
            CurveFamily::Circle { radius, turns } => {
                let m = turns as f64;
                let s = m * t;
                Vector3::new(-radius * m * s.sin(), radius * m * s.cos(), 0.0)
            }
            CurveFamily::TorusKnot { p, q, a, b, c } => {
                let (p, q) = (p as f64, q as f64);
                let rho = a + b * (q * t).cos();
                let drho = -b * q * (q * t).sin();
                Vector3::new(
                    drho * (p * t).cos() - rho * p * (p * t).sin(),
                    drho * (p * t).sin() + rho * p * (p * t).cos(),
                    c * q * (q * t).cos(),
                )
            }
            CurveFamily::PerturbedCircle { radius, nu, amplitude } => {
                let nu = nu as f64;
                Vector3::new(-radius * t.sin(), radius * t.cos(), amplitude * nu * (nu * t).cos())
            }
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A curve family rescaled to a prescribed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCurve {
    pub family: CurveFamily,
    pub length: f64,
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn arclength(family: &CurveFamily, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GAUSS5.iter().map(|(x, w)| w * family.derivative(mid + half * x).norm()).sum::<f64>() * half
}

/// Arclength table for the family over `[0, 2π]`.
struct ArclengthTable<'a> {
    family: &'a CurveFamily,
    knots: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<'a> ArclengthTable<'a> {
    fn new(family: &'a CurveFamily, intervals: usize) -> Self {
        let knots: Vec<f64> = (0..=intervals).map(|j| TAU * j as f64 / intervals as f64).collect();
        let mut cumulative = Vec::with_capacity(intervals + 1);
        cumulative.push(0.0);
        for w in knots.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + arclength(family, w[0], w[1]));
        }
        Self { family, knots, cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Parameter `t` with `s(t) = s`, by bisection inside the bracketing interval.
    fn invert(&self, s: f64, tol: f64) -> f64 {
        let j = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(j) => return self.knots[j],
            Err(j) => j - 1,
        };
        let (t0, s0) = (self.knots[j], self.cumulative[j]);
        let (mut lo, mut hi) = (t0, self.knots[j + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = s0 + arclength(self.family, t0, mid) - s;
            if f.abs() <= tol || hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                return mid;
            }
            if f < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Samples `curve` at nodes equispaced in arclength and returns the closed
/// Hermite spline of total length `curve.length` with unit nodal tangents.
pub fn generate(curve: &AnalyticCurve, n_elements: usize) -> Result<DiscreteCurve> {
    if n_elements < 8 {
        return Err(Error::InvalidParameter { name: "n_elements", msg: format!("need at least 8, got {n_elements}") });
    }
    if !(curve.length > 0.0 && curve.length.is_finite()) {
        return Err(Error::InvalidParameter { name: "length", msg: format!("must be positive, got {}", curve.length) });
    }
    curve.family.validate()?;
    let table = ArclengthTable::new(&curve.family, (64 * n_elements).max(4096));
    let total = table.total();
    let scale = curve.length / total;
    let mesh = Mesh::uniform(n_elements, curve.length, true)?;
    let mut positions = Vec::with_capacity(n_elements);
    let mut tangents = Vec::with_capacity(n_elements);
    for i in 0..n_elements {
        let t = table.invert(total * i as f64 / n_elements as f64, 1e-13 * total);
        let d = curve.family.derivative(t);
        let norm = d.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidCurve(format!("curve family is singular at t = {t}")));
        }
        positions.push(curve.family.point(t) * scale);
        tangents.push(unit_tangent(&d));
    }
    DiscreteCurve::new(mesh, &positions, &tangents)
}

/// Boundary conditions of the curve.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    Periodic,
    /// Fixed positions and unit tangents at both ends.
    Clamped { start: (Point, Vector3<f64>), end: (Point, Vector3<f64>) },
    Free,
}

impl BoundaryCondition {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCondition::Periodic => "periodic",
            BoundaryCondition::Clamped { .. } => "clamped",
            BoundaryCondition::Free => "free",
        }
    }

    /// Clamps an open curve at its current endpoint data.
    pub fn clamped_at(curve: &DiscreteCurve) -> Self {
        let last = curve.n_nodes() - 1;
        BoundaryCondition::Clamped {
            start: (curve.position(0), curve.tangent(0)),
            end: (curve.position(last), curve.tangent(last)),
        }
    }
}

/// Map between free degrees of freedom and the global node-major DOF vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    n_global: usize,
    free_to_global: Vec<usize>,
    global_to_free: Vec<Option<usize>>,
    fixed: Vec<(usize, f64)>,
}

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.free_to_global.len()
    }

    pub fn n_global(&self) -> usize {
        self.n_global
    }

    pub fn global(&self, free: usize) -> usize {
        self.free_to_global[free]
    }

    pub fn free(&self, global: usize) -> Option<usize> {
        self.global_to_free[global]
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free_to_global
    }

    /// Prescribed `(global index, value)` pairs.
    pub fn fixed(&self) -> &[(usize, f64)] {
        &self.fixed
    }

    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        assert_eq!(global.len(), self.n_global);
        self.free_to_global.iter().map(|&g| global[g]).collect()
    }

    /// Lifts a free vector to global size with zeros in constrained slots.
    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut out = vec![0.0; self.n_global];
        for (&g, v) in self.free_to_global.iter().zip(free) {
            out[g] = *v;
        }
        out
    }

    /// Writes the prescribed values into a curve.
    pub fn impose(&self, curve: &mut DiscreteCurve) {
        let dofs = curve.dofs_mut();
        for &(g, v) in &self.fixed {
            dofs[g] = v;
        }
    }

    /// Whether all three tangent DOFs of `node` are free.
    pub fn tangent_free(&self, node: usize) -> bool {
        (3..6).all(|k| self.global_to_free[DOFS_PER_NODE * node + k].is_some())
    }
}

/// The flat `turns`-fold circle of length `length` as an exact critical point
/// of the discrete bending energy: nodes on a regular polygon with unit
/// tangents, chord `h·cos(θ/2)` for the turning angle `θ = 2π·turns/N`.
///
/// The nodal interpolant of the analytic circle differs from this curve by
/// a radial offset of order `h²` and relaxes onto it within a few flow steps.
pub fn discrete_circle(n_elements: usize, length: f64, turns: u32) -> Result<DiscreteCurve> {
    if n_elements < 8 {
        return Err(Error::InvalidParameter { name: "n_elements", msg: format!("need at least 8, got {n_elements}") });
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter { name: "length", msg: format!("must be positive, got {length}") });
    }
    if turns == 0 || 2 * turns as usize >= n_elements {
        return Err(Error::InvalidParameter { name: "turns", msg: format!("need 1 <= turns < N/2, got {turns}") });
    }
    let mesh = Mesh::uniform(n_elements, length, true)?;
    let h = length / n_elements as f64;
    let theta = TAU * turns as f64 / n_elements as f64;
    let radius = h / (2.0 * (0.5 * theta).tan());
    let mut positions = Vec::with_capacity(n_elements);
    let mut tangents = Vec::with_capacity(n_elements);
    for i in 0..n_elements {
        let phi = theta * i as f64;
        positions.push(Point::new(radius * phi.cos(), radius * phi.sin(), 0.0));
        tangents.push(unit_tangent(&Vector3::new(-phi.sin(), phi.cos(), 0.0)));
    }
    DiscreteCurve::new(mesh, &positions, &tangents)
}

pub fn dof_map(mesh: &Mesh, bc: &BoundaryCondition) -> Result<DofMap> {
    let n_global = mesh.n_dofs();
    let mut fixed = Vec::new();
    match (bc, mesh.closed()) {
        (BoundaryCondition::Periodic, true) => {}
        (BoundaryCondition::Periodic, false) => {
            return Err(Error::IncompatibleBoundary { bc: "periodic", mesh: "open" })
        }
        (_, true) => return Err(Error::IncompatibleBoundary { bc: bc.name(), mesh: "closed" }),
        (BoundaryCondition::Free, false) => {}
        (BoundaryCondition::Clamped { start, end }, false) => {
            for (node, (p, d)) in [(0, start), (mesh.n_nodes() - 1, end)] {
                let norm = d.norm();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidCurve(format!("clamped tangent at node {node} has length {norm}")));
                }
                for c in 0..3 {
                    fixed.push((DOFS_PER_NODE * node + c, p[c]));
                    fixed.push((DOFS_PER_NODE * node + 3 + c, d[c]));
                }
            }
            fixed.sort_by_key(|&(g, _)| g);
        }
    }
    let mut global_to_free = vec![None; n_global];
    let mut free_to_global = Vec::with_capacity(n_global);
    let mut fixed_iter = fixed.iter().map(|&(g, _)| g).peekable();
    for g in 0..n_global {
        if fixed_iter.peek() == Some(&g) {
            fixed_iter.next();
            continue;
        }
        global_to_free[g] = Some(free_to_global.len());
        free_to_global.push(g);
    }
    Ok(DofMap { n_global, free_to_global, global_to_free, fixed })
}

/// Adds seeded uniform noise in `[-amplitude, amplitude]` to the free
/// position DOFs. Tangents stay untouched, so admissibility is preserved.
pub fn perturb_positions(curve: &mut DiscreteCurve, dofs: &DofMap, amplitude: f64, seed: u64) {
    if amplitude == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = curve.dofs_mut();
    for &g in dofs.free_indices() {
        if g % DOFS_PER_NODE < 3 {
            values[g] += rng.random_range(-amplitude..=amplitude);
        }
    }
}
