//! Curvature profiles, penetration reports and shape classification of
//! closed curves into μ-circles and μ-ν-clews.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::confinement::{CompositeConfinement, Point};
use crate::error::{Error, Result};
use crate::spline::DiscreteCurve;

/// Samples `|u''|` at `samples_per_element` uniformly spaced interior
/// points of every element (element midpoints for one sample).
pub fn curvature_profile(curve: &DiscreteCurve, samples_per_element: usize) -> Vec<(f64, f64)> {
    let mesh = curve.mesh();
    let spe = samples_per_element.max(1);
    let mut out = Vec::with_capacity(spe * mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let (x0, h) = (mesh.nodes()[e], mesh.element_length(e));
        for j in 0..spe {
            let t = (j as f64 + 0.5) / spe as f64;
            out.push((x0 + t * h, curve.evaluate_local(e, t, 2).norm()));
        }
    }
    out
}

/// Number of periods of the dominant oscillation in a uniformly sampled
/// periodic signal (0 for a constant signal).
pub fn dominant_period_count(values: &[f64]) -> usize {
    let n = values.len();
    if n < 4 {
        return 0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = values.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (best, mag) = (1..=n / 2).map(|k| (k, buf[k].norm())).fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    if mag <= 1e-12 * scale {
        0
    } else {
        best
    }
}

/// Nominal circle energy `E_L = 2κπ²/L` of a closed curve of length `L`.
pub fn circle_energy(kappa: f64, length: f64) -> f64 {
    2.0 * kappa * PI * PI / length
}

/// `sqrt(E_bend / E_L)` with `L` the nominal (mesh) length.
pub fn normalized_energy(curve: &DiscreteCurve, kappa: f64) -> f64 {
    (curve.bending_energy(kappa) / circle_energy(kappa, curve.mesh().length())).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenetrationReport {
    pub max_nodal: f64,
    pub node: usize,
}

pub fn penetration_report(curve: &DiscreteCurve, conf: &CompositeConfinement) -> PenetrationReport {
    (0..curve.n_nodes())
        .map(|i| PenetrationReport { max_nodal: conf.penetration(&curve.position(i)), node: i })
        .fold(PenetrationReport { max_nodal: 0.0, node: 0 }, |best, r| if r.max_nodal > best.max_nodal { r } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    pub nu_max: usize,
    /// Threshold on the normalized rotation-overlap score.
    pub tol_sym: f64,
    /// Threshold on relative curvature spread and flatness.
    pub tol_circ: f64,
    pub samples_per_element: usize,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        Self { nu_max: 12, tol_sym: 0.02, tol_circ: 0.01, samples_per_element: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeClass {
    Circle { mu: u32 },
    Clew { mu: u32, nu: u32 },
    Unclassified,
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeClass::Circle { mu } => write!(f, "circle({mu})"),
            ShapeClass::Clew { mu, nu } => write!(f, "clew({mu},{nu})"),
            ShapeClass::Unclassified => write!(f, "unclassified"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    /// Out-of-plane extent relative to `r_L`.
    pub circle_flatness: f64,
    /// Relative standard deviation of the curvature.
    pub curvature_spread: f64,
    /// Rotation-overlap score of the reported symmetry.
    pub symmetry_residual: f64,
    /// Dominant number of curvature oscillations along the curve.
    pub curvature_period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub shape: ShapeClass,
    pub axis: [f64; 3],
    pub mu: u32,
    pub nu: u32,
    pub scores: ClassificationScores,
}

/// Resampled closed polyline of the spline curve.
fn resample(curve: &DiscreteCurve, per_element: usize) -> Vec<Point> {
    let mesh = curve.mesh();
    let mut pts = Vec::with_capacity(per_element * mesh.n_elements());
    for e in 0..mesh.n_elements() {
        for j in 0..per_element {
            pts.push(curve.evaluate_local(e, j as f64 / per_element as f64, 0));
        }
    }
    pts
}

fn point_segment_distance_sq(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm_squared()
}

fn distance_to_closed_polyline(p: &Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| point_segment_distance_sq(p, &poly[i], &poly[(i + 1) % n])).fold(f64::INFINITY, f64::min).sqrt()
}

/// Signed number of turns of the closed polyline around `axis` through `center`;
/// `None` when the projection passes (nearly) through the axis.
fn winding_number(poly: &[Point], center: &Point, axis: &Vector3<f64>, r_ref: f64) -> Option<i64> {
    let e1 = axis.cross(&if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() }).normalize();
    let e2 = axis.cross(&e1);
    let angles: Vec<f64> = poly
        .iter()
        .map(|p| {
            let z = p - center;
            let (x, y) = (z.dot(&e1), z.dot(&e2));
            if x.hypot(y) < 1e-3 * r_ref {
                f64::NAN
            } else {
                y.atan2(x)
            }
        })
        .collect();
    if angles.iter().any(|a| a.is_nan()) {
        return None;
    }
    let n = angles.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut d = angles[(i + 1) % n] - angles[i];
        if d > PI {
            d -= TAU;
        } else if d < -PI {
            d += TAU;
        }
        if d.abs() > 0.75 * PI {
            return None;
        }
        total += d;
    }
    Some((total / TAU).round() as i64)
}

struct AxisCandidate {
    axis: Vector3<f64>,
    eigenvalue: f64,
    nu: usize,
    score: f64,
    winding: Option<i64>,
}

pub fn classify(curve: &DiscreteCurve, tol: &ClassifyTolerances) -> Result<ClassificationResult> {
    if !curve.mesh().closed() {
        return Err(Error::InvalidCurve("classification needs a closed curve".into()));
    }
    let r_l = curve.mesh().length() / TAU;
    let beta = curve.mesh().lumped_weights();
    let total: f64 = beta.iter().sum();
    let center: Point = (0..curve.n_nodes()).map(|i| curve.position(i) * beta[i]).sum::<Vector3<f64>>() / total;
    let moment: Matrix3<f64> = (0..curve.n_nodes())
        .map(|i| {
            let z = curve.position(i) - center;
            z * z.transpose() * beta[i]
        })
        .sum();
    let eig = SymmetricEigen::new(moment);
    let poly = resample(curve, tol.samples_per_element.max(1));

    let profile: Vec<f64> = curvature_profile(curve, tol.samples_per_element).into_iter().map(|(_, k)| k).collect();
    let mean_k = profile.iter().sum::<f64>() / profile.len() as f64;
    let var_k = profile.iter().map(|k| (k - mean_k).powi(2)).sum::<f64>() / profile.len() as f64;
    let curvature_spread = if mean_k > 0.0 { var_k.sqrt() / mean_k } else { f64::INFINITY };
    let curvature_period = dominant_period_count(&profile);

    // flatness along the direction of least extent
    let normal_idx = eig.eigenvalues.imin();
    let normal: Vector3<f64> = eig.eigenvectors.column(normal_idx).into();
    let extent = (0..curve.n_nodes()).map(|i| (curve.position(i) - center).dot(&normal).abs()).fold(0.0, f64::max);
    let circle_flatness = extent / r_l;

    if curvature_spread < tol.tol_circ && circle_flatness < tol.tol_circ {
        if let Some(w) = winding_number(&poly, &center, &normal, r_l).filter(|w| *w != 0) {
            let mu = w.unsigned_abs() as u32;
            return Ok(ClassificationResult {
                shape: ShapeClass::Circle { mu },
                axis: normal.into(),
                mu,
                nu: 0,
                scores: ClassificationScores { circle_flatness, curvature_spread, symmetry_residual: 0.0, curvature_period },
            });
        }
    }

    let candidates: Vec<AxisCandidate> = (0..3)
        .map(|k| {
            let axis: Vector3<f64> = eig.eigenvectors.column(k).into();
            let axis = axis.normalize();
            let mut best = (1, f64::INFINITY);
            let mut score2 = f64::INFINITY;
            for nu in 2..=tol.nu_max.max(2) {
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), TAU / nu as f64);
                let score = (0..curve.n_nodes())
                    .map(|i| distance_to_closed_polyline(&(rot * (curve.position(i) - center) + center), &poly))
                    .sum::<f64>()
                    / (curve.n_nodes() as f64 * r_l);
                if nu == 2 {
                    score2 = score;
                }
                if score < tol.tol_sym {
                    best = (nu, score);
                }
            }
            let (nu, score) = if best.0 == 1 { (1, score2) } else { best };
            AxisCandidate { axis, eigenvalue: eig.eigenvalues[k], nu, score, winding: winding_number(&poly, &center, &axis, r_l) }
        })
        .collect();

    let nu = candidates.iter().map(|c| c.nu).max().unwrap_or(1);
    let chosen = candidates
        .iter()
        .filter(|c| c.nu == nu)
        .max_by(|a, b| {
            let wa = a.winding.map_or(0, |w| w.unsigned_abs());
            let wb = b.winding.map_or(0, |w| w.unsigned_abs());
            wa.cmp(&wb)
                .then_with(|| b.score.total_cmp(&a.score))
                .then_with(|| b.eigenvalue.total_cmp(&a.eigenvalue))
        })
        .expect("three candidate axes");
    let mu = chosen.winding.map_or(0, |w| w.unsigned_abs() as u32);
    let shape = if mu == 0 { ShapeClass::Unclassified } else { ShapeClass::Clew { mu, nu: nu as u32 } };
    Ok(ClassificationResult {
        shape,
        axis: chosen.axis.into(),
        mu,
        nu: nu as u32,
        scores: ClassificationScores { circle_flatness, curvature_spread, symmetry_residual: chosen.score, curvature_period },
    })
}
