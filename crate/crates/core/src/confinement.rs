//! Convex quadratic confinements and their penalty potentials.
//!
//! A simple confinement is either a (possibly degenerate) quadric
//! `{y : (y - c)·G(y - c) ≤ 1}` or a half-space `{y : a·(y - c) ≤ offset}`.
//! Both are described by a scalar *level* `s(y)` with `s ≤ 1` inside:
//! the seminorm `|y - c|_G` for quadrics, the signed ratio
//! `a·(y - c) / offset` for half-spaces.
//!
//! The penalty `V(y) = ½ (s - 1)₊²` is split into the quadratic part `s²`,
//! which the flow treats implicitly, and a concave remainder
//!
//! ```text
//! V_cv(y) = -s²          if s ≤ 1
//!         = -2 s + 1     otherwise
//! ```
//!
//! so that `V = ½ s² + ½ V_cv`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Quadratic { metric: Matrix3<f64> },
    HalfSpace { normal: Vector3<f64>, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleConfinement {
    shape: Shape,
    center: Point,
}

impl SimpleConfinement {
    /// Quadric confinement with metric `g` centered at the origin.
    pub fn quadratic(g: Matrix3<f64>) -> Result<Self> {
        let asym = (g - g.transpose()).abs().max();
        let scale = g.abs().max();
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfinement("metric has non-finite entries".into()));
        }
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidConfinement(format!(
                "metric is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        let g = 0.5 * (g + g.transpose());
        let min_eig = SymmetricEigen::new(g).eigenvalues.min();
        if min_eig < -1e-12 * g.norm() {
            return Err(Error::InvalidConfinement(format!(
                "metric is not positive semi-definite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self {
            shape: Shape::Quadratic { metric: g },
            center: Point::zeros(),
        })
    }

    /// Half-space `a·y ≤ offset`. The offset must be positive so that the
    /// origin (or the translated center) lies strictly inside.
    pub fn half_space(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        if normal.norm() == 0.0 || !normal.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfinement("half-space normal must be non-zero".into()));
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidConfinement(format!(
                "half-space offset must be positive, got {offset}"
            )));
        }
        Ok(Self {
            shape: Shape::HalfSpace { normal, offset },
            center: Point::zeros(),
        })
    }

    pub fn with_center(mut self, center: Point) -> Self {
        self.center = center;
        self
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    /// Matrix `G` of the quadratic part `s(y)² = (y - c)·G(y - c)`.
    /// For half-spaces this is the rank-one `a aᵀ / offset²`.
    pub fn metric(&self) -> Matrix3<f64> {
        match &self.shape {
            Shape::Quadratic { metric } => *metric,
            Shape::HalfSpace { normal, offset } => normal * normal.transpose() / (offset * offset),
        }
    }

    /// Level `s(y)`; `s ≤ 1` means inside. Non-negative for quadrics,
    /// signed for half-spaces.
    pub fn seminorm(&self, y: &Point) -> f64 {
        let z = y - self.center;
        match &self.shape {
            Shape::Quadratic { metric } => z.dot(&(metric * z)).max(0.0).sqrt(),
            Shape::HalfSpace { normal, offset } => normal.dot(&z) / offset,
        }
    }

    pub fn quadratic_part(&self, y: &Point) -> f64 {
        let s = self.seminorm(y);
        s * s
    }

    pub fn potential(&self, y: &Point) -> f64 {
        let excess = (self.seminorm(y) - 1.0).max(0.0);
        0.5 * excess * excess
    }

    pub fn concave_part(&self, y: &Point) -> f64 {
        let s = self.seminorm(y);
        if s <= 1.0 {
            -s * s
        } else {
            -2.0 * s + 1.0
        }
    }

    pub fn grad_concave_part(&self, y: &Point) -> Vector3<f64> {
        let z = y - self.center;
        let s = self.seminorm(y);
        if s <= 1.0 {
            return -2.0 * self.metric() * z;
        }
        match &self.shape {
            Shape::Quadratic { metric } => -2.0 * metric * z / s,
            Shape::HalfSpace { normal, offset } => -2.0 * normal / *offset,
        }
    }

    /// Gradient of the full potential `V`.
    pub fn grad_potential(&self, y: &Point) -> Vector3<f64> {
        self.metric() * (y - self.center) + 0.5 * self.grad_concave_part(y)
    }

    pub fn penetration(&self, y: &Point) -> f64 {
        (self.seminorm(y) - 1.0).max(0.0)
    }
}

/// Intersection of simple confinements. Energies and gradients add up over
/// the parts, penetration is the maximum over the parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeConfinement {
    parts: Vec<SimpleConfinement>,
}

impl CompositeConfinement {
    pub fn new(parts: Vec<SimpleConfinement>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidConfinement("composite confinement needs at least one part".into()));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[SimpleConfinement] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Concatenates the parts of several composites.
    /// A confinement that is inactive everywhere (zero metric).
    pub fn unconfined() -> Result<Self> {
        Self::new(vec![SimpleConfinement::quadratic(Matrix3::zeros())?])
    }

    pub fn intersect(confs: impl IntoIterator<Item = CompositeConfinement>) -> Result<Self> {
        Self::new(confs.into_iter().flat_map(|c| c.parts).collect())
    }

    pub fn translated(mut self, by: Point) -> Self {
        for part in &mut self.parts {
            part.center += by;
        }
        self
    }

    pub fn potential(&self, y: &Point) -> f64 {
        self.parts.iter().map(|p| p.potential(y)).sum()
    }

    pub fn quadratic_part(&self, y: &Point) -> f64 {
        self.parts.iter().map(|p| p.quadratic_part(y)).sum()
    }

    pub fn concave_part(&self, y: &Point) -> f64 {
        self.parts.iter().map(|p| p.concave_part(y)).sum()
    }

    pub fn grad_concave_part(&self, y: &Point) -> Vector3<f64> {
        self.parts.iter().map(|p| p.grad_concave_part(y)).sum()
    }

    pub fn grad_potential(&self, y: &Point) -> Vector3<f64> {
        self.parts.iter().map(|p| p.grad_potential(y)).sum()
    }

    pub fn penetration(&self, y: &Point) -> f64 {
        self.parts.iter().map(|p| p.penetration(y)).fold(0.0, f64::max)
    }

    pub fn contains(&self, y: &Point) -> bool {
        self.penetration(y) == 0.0
    }
}

/// Coordinate axis or explicit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Named(AxisName),
    Vector([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn direction(&self) -> Result<Vector3<f64>> {
        let v = match self {
            Axis::Named(AxisName::X) => Vector3::x(),
            Axis::Named(AxisName::Y) => Vector3::y(),
            Axis::Named(AxisName::Z) => Vector3::z(),
            Axis::Vector(v) => Vector3::from(*v),
        };
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidConfinement("axis/normal must be non-zero".into()));
        }
        Ok(v / n)
    }
}

/// Named confinement families.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfinementKind {
    Ball { radius: f64 },
    Ellipsoid { radii: [f64; 3] },
    Slab { normal: [f64; 3], radius: f64 },
    HalfSpace { normal: [f64; 3], offset: f64 },
    Cylinder { radius: f64, height: f64, axis: Axis },
    Box { radii: [f64; 3] },
}

impl ConfinementKind {
    pub const NAMES: [&'static str; 6] = ["ball", "ellipsoid", "slab", "halfspace", "cylinder", "box"];

    pub fn name(&self) -> &'static str {
        match self {
            ConfinementKind::Ball { .. } => "ball",
            ConfinementKind::Ellipsoid { .. } => "ellipsoid",
            ConfinementKind::Slab { .. } => "slab",
            ConfinementKind::HalfSpace { .. } => "halfspace",
            ConfinementKind::Cylinder { .. } => "cylinder",
            ConfinementKind::Box { .. } => "box",
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter { name, msg: format!("must be positive, got {v}") })
    }
}

fn slab(normal: Vector3<f64>, half_width: f64) -> Result<SimpleConfinement> {
    SimpleConfinement::quadratic(normal * normal.transpose() / (half_width * half_width))
}

/// Builds the composite confinement of a named family, optionally translated.
pub fn build(kind: &ConfinementKind, center: Option<Point>) -> Result<CompositeConfinement> {
    let parts = match kind {
        ConfinementKind::Ball { radius } => {
            let r = positive("radius", *radius)?;
            vec![SimpleConfinement::quadratic(Matrix3::identity() / (r * r))?]
        }
        ConfinementKind::Ellipsoid { radii } => {
            let mut g = Matrix3::zeros();
            for (i, r) in radii.iter().enumerate() {
                let r = positive("radii", *r)?;
                g[(i, i)] = 1.0 / (r * r);
            }
            vec![SimpleConfinement::quadratic(g)?]
        }
        ConfinementKind::Slab { normal, radius } => {
            let r = positive("radius", *radius)?;
            vec![slab(Axis::Vector(*normal).direction()?, r)?]
        }
        ConfinementKind::HalfSpace { normal, offset } => {
            let offset = positive("offset", *offset)?;
            vec![SimpleConfinement::half_space(Axis::Vector(*normal).direction()?, offset)?]
        }
        ConfinementKind::Cylinder { radius, height, axis } => {
            let r = positive("radius", *radius)?;
            let h = positive("height", *height)?;
            let e = axis.direction()?;
            let transverse = (Matrix3::identity() - e * e.transpose()) / (r * r);
            vec![SimpleConfinement::quadratic(transverse)?, slab(e, h)?]
        }
        ConfinementKind::Box { radii } => {
            let mut parts = Vec::with_capacity(3);
            for (i, r) in radii.iter().enumerate() {
                let r = positive("radii", *r)?;
                let mut n = Vector3::zeros();
                n[i] = 1.0;
                parts.push(slab(n, r)?);
            }
            parts
        }
    };
    let conf = CompositeConfinement::new(parts)?;
    Ok(match center {
        Some(c) => conf.translated(c),
        None => conf,
    })
}
