//! C¹ cubic Hermite spline curves and the matching finite-element operators.
//!
//! Degrees of freedom are stored node-major: every independent node carries
//! its position followed by its tangent, `(px, py, pz, dx, dy, dz)`. Scalar
//! operators act on the interleaved `(value, derivative)` pairs of one
//! component and are applied componentwise to R³.

use nalgebra::{Matrix4, Vector3};

use crate::confinement::Point;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

pub const DOFS_PER_NODE: usize = 6;

/// Partition `x₀ < x₁ < … < x_N` of the parameter interval. For closed
/// meshes node `N` is identified with node `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<f64>,
    closed: bool,
}

impl Mesh {
    pub fn new(nodes: Vec<f64>, closed: bool) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 elements, got {}",
                nodes.len().saturating_sub(1)
            )));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidMesh(format!("nodes not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Self { nodes, closed })
    }

    pub fn uniform(n_elements: usize, length: f64, closed: bool) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidMesh(format!("length must be positive, got {length}")));
        }
        let h = length / n_elements as f64;
        let mut nodes: Vec<f64> = (0..=n_elements).map(|i| i as f64 * h).collect();
        if let Some(last) = nodes.last_mut() {
            *last = length;
        }
        Self::new(nodes, closed)
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of independent nodes.
    pub fn n_nodes(&self) -> usize {
        if self.closed {
            self.n_elements()
        } else {
            self.nodes.len()
        }
    }

    pub fn n_dofs(&self) -> usize {
        DOFS_PER_NODE * self.n_nodes()
    }

    pub fn length(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn max_element_length(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_length(e)).fold(0.0, f64::max)
    }

    /// Independent node indices at the two ends of element `e`.
    pub fn element_nodes(&self, e: usize) -> (usize, usize) {
        let right = e + 1;
        (e, if self.closed && right == self.n_elements() { 0 } else { right })
    }

    /// Parameter of independent node `i`.
    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Lumped nodal weights `β_i = ∫ φ_i` of the piecewise-linear hat functions.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.n_nodes()];
        for e in 0..self.n_elements() {
            let (a, b) = self.element_nodes(e);
            let h = self.element_length(e);
            beta[a] += 0.5 * h;
            beta[b] += 0.5 * h;
        }
        beta
    }

    /// Element index and local coordinate `t ∈ [0, 1]` of parameter `x`.
    /// Closed meshes wrap `x` periodically.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.nodes[0], self.nodes[self.nodes.len() - 1]);
        let x = if self.closed {
            lo + (x - lo).rem_euclid(hi - lo)
        } else if x < lo || x > hi || !x.is_finite() {
            return Err(Error::OutOfDomain { x, lo, hi });
        } else {
            x
        };
        let e = match self.nodes.binary_search_by(|n| n.total_cmp(&x)) {
            Ok(i) => i.min(self.n_elements() - 1),
            Err(i) => (i - 1).min(self.n_elements() - 1),
        };
        let t = ((x - self.nodes[e]) / self.element_length(e)).clamp(0.0, 1.0);
        Ok((e, t))
    }
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidMesh(format!("element length must be positive, got {h}")))
    }
}

/// `∫ φ_a'' φ_b''` over an element of length `h`, basis ordered
/// (value-left, derivative-left, value-right, derivative-right).
pub fn element_stiffness(h: f64) -> Result<Matrix4<f64>> {
    check_h(h)?;
    let (h2, h3) = (h * h, h * h * h);
    #[rustfmt::skip]
    let k = Matrix4::new(
        12.0,      6.0 * h,  -12.0,      6.0 * h,
        6.0 * h,   4.0 * h2, -6.0 * h,   2.0 * h2,
        -12.0,    -6.0 * h,   12.0,     -6.0 * h,
        6.0 * h,   2.0 * h2, -6.0 * h,   4.0 * h2,
    );
    Ok(k / h3)
}

/// Consistent mass matrix `∫ φ_a φ_b` over an element of length `h`.
pub fn element_mass(h: f64) -> Result<Matrix4<f64>> {
    check_h(h)?;
    let h2 = h * h;
    #[rustfmt::skip]
    let m = Matrix4::new(
        156.0,      22.0 * h,   54.0,      -13.0 * h,
        22.0 * h,   4.0 * h2,   13.0 * h,  -3.0 * h2,
        54.0,       13.0 * h,   156.0,     -22.0 * h,
        -13.0 * h, -3.0 * h2,  -22.0 * h,   4.0 * h2,
    );
    Ok(m * (h / 420.0))
}

/// Hermite basis functions (or their derivatives) at local coordinate `t`.
pub fn hermite_basis(t: f64, h: f64, order: usize) -> Result<[f64; 4]> {
    let (t2, t3) = (t * t, t * t * t);
    Ok(match order {
        0 => [2.0 * t3 - 3.0 * t2 + 1.0, (t3 - 2.0 * t2 + t) * h, -2.0 * t3 + 3.0 * t2, (t3 - t2) * h],
        1 => [(6.0 * t2 - 6.0 * t) / h, 3.0 * t2 - 4.0 * t + 1.0, (-6.0 * t2 + 6.0 * t) / h, 3.0 * t2 - 2.0 * t],
        2 => [(12.0 * t - 6.0) / (h * h), (6.0 * t - 4.0) / h, (-12.0 * t + 6.0) / (h * h), (6.0 * t - 2.0) / h],
        o => return Err(Error::DerivativeOrder(o)),
    })
}

/// Global scalar operators on a mesh.
#[derive(Debug, Clone)]
pub struct Assembly {
    /// Bending stiffness on the `2n` scalar DOFs.
    pub stiffness: CsrMatrix,
    /// Consistent Hermite L² mass on the `2n` scalar DOFs.
    pub mass: CsrMatrix,
    /// Lumped nodal weights.
    pub lumped: Vec<f64>,
}

pub fn assemble(mesh: &Mesh) -> Result<Assembly> {
    let n = mesh.n_nodes();
    let mut kt = Vec::with_capacity(16 * mesh.n_elements());
    let mut mt = Vec::with_capacity(16 * mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let h = mesh.element_length(e);
        let (ke, me) = (element_stiffness(h)?, element_mass(h)?);
        let (a, b) = mesh.element_nodes(e);
        let dofs = [2 * a, 2 * a + 1, 2 * b, 2 * b + 1];
        for r in 0..4 {
            for c in 0..4 {
                kt.push((dofs[r], dofs[c], ke[(r, c)]));
                mt.push((dofs[r], dofs[c], me[(r, c)]));
            }
        }
    }
    Ok(Assembly {
        stiffness: CsrMatrix::from_triplets(2 * n, 2 * n, kt),
        mass: CsrMatrix::from_triplets(2 * n, 2 * n, mt),
        lumped: mesh.lumped_weights(),
    })
}

/// Index of the full DOF for scalar DOF `s` and component `c`.
#[inline]
pub fn full_index(s: usize, c: usize) -> usize {
    3 * s + c
}

/// Applies a scalar `2n × 2n` operator componentwise to a node-major DOF vector.
///
/// With node-major `(p, d)` ordering the full index `6i + 3k + c` equals
/// `3 (2i + k) + c`, so the scalar operator acts blockwise by `3 s + c`.
pub fn apply_componentwise(op: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), 3 * op.ncols());
    let mut y = vec![0.0; 3 * op.nrows()];
    for s in 0..op.nrows() {
        for (t, v) in op.row(s) {
            for c in 0..3 {
                y[3 * s + c] += v * x[3 * t + c];
            }
        }
    }
    y
}

pub fn componentwise_quad_form(op: &CsrMatrix, x: &[f64]) -> f64 {
    apply_componentwise(op, x).iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Hermite spline curve in R³.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    mesh: Mesh,
    dofs: Vec<f64>,
}

impl DiscreteCurve {
    pub fn new(mesh: Mesh, positions: &[Point], tangents: &[Vector3<f64>]) -> Result<Self> {
        let n = mesh.n_nodes();
        for len in [positions.len(), tangents.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        let mut dofs = Vec::with_capacity(DOFS_PER_NODE * n);
        for (p, d) in positions.iter().zip(tangents) {
            dofs.extend_from_slice(p.as_slice());
            dofs.extend_from_slice(d.as_slice());
        }
        Ok(Self { mesh, dofs })
    }

    pub fn from_dofs(mesh: Mesh, dofs: Vec<f64>) -> Result<Self> {
        if dofs.len() != mesh.n_dofs() {
            return Err(Error::LengthMismatch { expected: mesh.n_dofs(), got: dofs.len() });
        }
        Ok(Self { mesh, dofs })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn position(&self, i: usize) -> Point {
        Point::from_column_slice(&self.dofs[6 * i..6 * i + 3])
    }

    pub fn tangent(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.dofs[6 * i + 3..6 * i + 6])
    }

    pub fn set_position(&mut self, i: usize, p: Point) {
        self.dofs[6 * i..6 * i + 3].copy_from_slice(p.as_slice());
    }

    pub fn set_tangent(&mut self, i: usize, d: Vector3<f64>) {
        self.dofs[6 * i + 3..6 * i + 6].copy_from_slice(d.as_slice());
    }

    pub fn positions(&self) -> Vec<Point> {
        (0..self.n_nodes()).map(|i| self.position(i)).collect()
    }

    pub fn tangents(&self) -> Vec<Vector3<f64>> {
        (0..self.n_nodes()).map(|i| self.tangent(i)).collect()
    }

    /// Value (`order = 0`) or derivative of the interpolant at parameter `x`.
    pub fn evaluate(&self, x: f64, order: usize) -> Result<Vector3<f64>> {
        if order > 2 {
            return Err(Error::DerivativeOrder(order));
        }
        let (e, t) = self.mesh.locate(x)?;
        Ok(self.evaluate_local(e, t, order))
    }

    /// Evaluates on element `e` at local coordinate `t ∈ [0, 1]`.
    pub fn evaluate_local(&self, e: usize, t: f64, order: usize) -> Vector3<f64> {
        let h = self.mesh.element_length(e);
        let phi = hermite_basis(t, h, order).expect("order checked by caller");
        let (a, b) = self.mesh.element_nodes(e);
        self.position(a) * phi[0] + self.tangent(a) * phi[1] + self.position(b) * phi[2] + self.tangent(b) * phi[3]
    }

    /// `max_i | |d_i|² - 1 |`, the L∞ norm of the nodal interpolant of `|u'|² - 1`.
    pub fn arclength_violation(&self) -> f64 {
        (0..self.n_nodes()).map(|i| (self.tangent(i).norm_squared() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `κ/2 ∫ |u''|²`, equal to `κ/2 uᵀ K u` but evaluated element by element.
    ///
    /// On an element `u''` is linear with end values `g ± p`, where
    /// `g = (d_b − d_a)/h` and `p = 6(x_b − x_a − h(d_a + d_b)/2)/h²`, so the
    /// integral is the sum of squares `h(|g|² + |p|²/3)`. Unlike the global
    /// quadratic form this has no cancellation between large position terms,
    /// which keeps energy differences between nearby states accurate.
    pub fn bending_energy(&self, kappa: f64) -> f64 {
        let total: f64 = (0..self.mesh.n_elements())
            .map(|e| {
                let h = self.mesh.element_length(e);
                let (a, b) = self.mesh.element_nodes(e);
                let (da, db) = (self.tangent(a), self.tangent(b));
                let g = (db - da) / h;
                let p = (self.position(b) - self.position(a) - (da + db) * (0.5 * h)) * (6.0 / (h * h));
                h * (g.norm_squared() + p.norm_squared() / 3.0)
            })
            .sum();
        0.5 * kappa * total
    }

    /// Sum of the chord lengths between consecutive nodes.
    pub fn polygon_length(&self) -> f64 {
        (0..self.mesh.n_elements())
            .map(|e| {
                let (a, b) = self.mesh.element_nodes(e);
                (self.position(b) - self.position(a)).norm()
            })
            .sum()
    }
}

/// Hermite interpolant of nodal samples; tangents are normalized so that the
/// result satisfies the nodal arclength constraints.
pub fn interpolate(mesh: &Mesh, samples: &[(Point, Vector3<f64>)]) -> Result<DiscreteCurve> {
    if samples.len() != mesh.n_nodes() {
        return Err(Error::LengthMismatch { expected: mesh.n_nodes(), got: samples.len() });
    }
    let mut positions = Vec::with_capacity(samples.len());
    let mut tangents = Vec::with_capacity(samples.len());
    for (i, (p, d)) in samples.iter().enumerate() {
        let norm = d.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidCurve(format!("zero tangent sample at node {i}")));
        }
        positions.push(*p);
        tangents.push(unit_tangent(d));
    }
    DiscreteCurve::new(mesh.clone(), &positions, &tangents)
}

/// Normalizes `d`, nudging its components slightly (by at most 1e-12)
/// so that `|d|² == 1` holds exactly in floating point whenever possible.
pub fn unit_tangent(d: &Vector3<f64>) -> Vector3<f64> {
    let u = d / d.norm();
    if u.norm_squared() == 1.0 {
        return u;
    }
    // Solve |v|² = 1 for one component (largest first) with the others
    // nudged by a few ulps, then scan the neighbourhood of the solution.
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()));
    let step = |x: f64, k: i64| -> f64 {
        let mut y = x;
        for _ in 0..k.unsigned_abs() {
            y = if k > 0 { y.next_up() } else { y.next_down() };
        }
        y
    };
    for solved in order {
        let (o1, o2) = ((solved + 1) % 3, (solved + 2) % 3);
        for k1 in -3i64..=3 {
            for k2 in -3i64..=3 {
                let mut v = u;
                v[o1] = step(u[o1], if u[o1] == 0.0 { 0 } else { k1 });
                v[o2] = step(u[o2], if u[o2] == 0.0 { 0 } else { k2 });
                let rest = 1.0 - v[o1] * v[o1] - v[o2] * v[o2];
                if rest < 0.0 {
                    continue;
                }
                let guess = rest.sqrt().copysign(u[solved]);
                for k in -16i64..=16 {
                    v[solved] = step(guess, k);
                    if v.norm_squared() == 1.0 && (v - u).amax() <= 1e-12 {
                        return v;
                    }
                }
            }
        }
    }
    u
}

/// Lumped product `Σ β_i f_i · g_i`.
pub fn lumped_product(mesh: &Mesh, f: &[Vector3<f64>], g: &[Vector3<f64>]) -> Result<f64> {
    let n = mesh.n_nodes();
    for len in [f.len(), g.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    Ok(mesh.lumped_weights().iter().zip(f.iter().zip(g)).map(|(b, (f, g))| b * f.dot(g)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Gauss–Legendre nodes/weights on [0, 1].
    fn gauss(points: usize) -> Vec<(f64, f64)> {
        let (x, w): (Vec<f64>, Vec<f64>) = match points {
            2 => (vec![-1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt()], vec![1.0, 1.0]),
            4 => {
                let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
                let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
                let wa = (18.0 + 30f64.sqrt()) / 36.0;
                let wb = (18.0 - 30f64.sqrt()) / 36.0;
                (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
            }
            _ => unreachable!(),
        };
        x.into_iter().zip(w).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    }

    fn quadrature_matrix(h: f64, order: usize, points: usize) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for (t, w) in gauss(points) {
            let phi = hermite_basis(t, h, order).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    m[(a, b)] += w * h * phi[a] * phi[b];
                }
            }
        }
        m
    }

    #[test]
    fn stiffness_unit_element() {
        #[rustfmt::skip]
        let expected = Matrix4::new(
            12.0, 6.0, -12.0, 6.0,
            6.0, 4.0, -6.0, 2.0,
            -12.0, -6.0, 12.0, -6.0,
            6.0, 2.0, -6.0, 4.0,
        );
        assert_relative_eq!(element_stiffness(1.0).unwrap(), expected, epsilon = 1e-14);
        assert_relative_eq!(quadrature_matrix(1.0, 2, 2), expected, epsilon = 1e-12);
    }

    #[test]
    fn mass_unit_element() {
        #[rustfmt::skip]
        let expected = Matrix4::new(
            156.0, 22.0, 54.0, -13.0,
            22.0, 4.0, 13.0, -3.0,
            54.0, 13.0, 156.0, -22.0,
            -13.0, -3.0, -22.0, 4.0,
        ) / 420.0;
        assert_relative_eq!(element_mass(1.0).unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(quadrature_matrix(1.0, 0, 4), expected, epsilon = 1e-14);
    }

    #[test]
    fn element_matrices_match_quadrature_for_random_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let h: f64 = rng.random_range(0.01..2.0);
            let k = element_stiffness(h).unwrap();
            let kq = quadrature_matrix(h, 2, 2);
            assert!((k - kq).abs().max() <= 1e-13 * k.abs().max());
            let m = element_mass(h).unwrap();
            let mq = quadrature_matrix(h, 0, 4);
            assert!((m - mq).abs().max() <= 1e-13 * m.abs().max());
        }
    }

    #[test]
    fn stiffness_scaling_and_affine_null_space() {
        let (k1, kh) = (element_stiffness(1.0).unwrap(), element_stiffness(0.5).unwrap());
        let h = 0.5f64;
        for a in 0..4 {
            for b in 0..4 {
                let derivs = (a % 2) + (b % 2);
                let factor = h.powi(derivs as i32) / h.powi(3);
                assert_relative_eq!(kh[(a, b)], k1[(a, b)] * factor, epsilon = 1e-12);
            }
        }
        for &h in &[0.3, 1.0, 2.5] {
            let k = element_stiffness(h).unwrap();
            let (a, b) = (0.7, -1.3);
            let affine = nalgebra::Vector4::new(a, b, a + b * h, b);
            assert!((k * affine).norm() < 1e-12);
        }
        assert!(element_stiffness(0.0).is_err());
        assert!(element_mass(-1.0).is_err());
    }

    #[test]
    fn mass_constant_and_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h: f64 = rng.random_range(1e-3..1.0);
            let m = element_mass(h).unwrap();
            let one = nalgebra::Vector4::new(1.0, 0.0, 1.0, 0.0);
            assert_relative_eq!(one.dot(&(m * one)), h, epsilon = 1e-14);
            assert!(m.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn lumped_weights() {
        let open = Mesh::uniform(2, 2.0, false).unwrap();
        assert_eq!(open.lumped_weights(), vec![0.5, 1.0, 0.5]);
        let closed = Mesh::new(vec![0.0, 0.5, 1.5, 3.0], true).unwrap();
        let beta = closed.lumped_weights();
        assert_eq!(beta, vec![1.0, 0.75, 1.25]);
        assert_relative_eq!(beta.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn mesh_errors() {
        assert!(Mesh::new(vec![0.0, 1.0], false).is_err());
        assert!(Mesh::new(vec![0.0, 1.0, 1.0], false).is_err());
        assert!(Mesh::uniform(4, -1.0, true).is_err());
    }

    #[test]
    fn global_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for closed in [false, true] {
            let mut nodes = vec![0.0];
            for _ in 0..12 {
                nodes.push(nodes.last().unwrap() + rng.random_range(0.1..0.5));
            }
            let mesh = Mesh::new(nodes, closed).unwrap();
            let asm = assemble(&mesh).unwrap();
            let k: DMatrix<f64> = asm.stiffness.to_dense();
            let m: DMatrix<f64> = asm.mass.to_dense();
            assert!((&k - k.transpose()).abs().max() < 1e-12);
            assert!(k.clone().symmetric_eigenvalues().min() > -1e-9 * k.abs().max());
            assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
            assert!(asm.lumped.iter().all(|&b| b > 0.0));
            assert_relative_eq!(asm.lumped.iter().sum::<f64>(), mesh.length(), epsilon = 1e-12);
            // constants are in the kernel of K for both topologies
            let constant: Vec<f64> = (0..2 * mesh.n_nodes()).map(|s| if s % 2 == 0 { 1.0 } else { 0.0 }).collect();
            assert!(asm.stiffness.mul_vec(&constant).iter().all(|v| v.abs() < 1e-10));
            if !closed {
                let affine: Vec<f64> = (0..2 * mesh.n_nodes())
                    .map(|s| if s % 2 == 0 { 2.0 - 3.0 * mesh.node(s / 2) } else { -3.0 })
                    .collect();
                assert!(asm.stiffness.mul_vec(&affine).iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    fn circle_curve(n: usize, r: f64) -> DiscreteCurve {
        let length = 2.0 * PI * r;
        let mesh = Mesh::uniform(n, length, true).unwrap();
        let samples: Vec<_> = (0..n)
            .map(|i| {
                let s = mesh.node(i) / r;
                (Point::new(r * s.cos(), r * s.sin(), 0.0), Vector3::new(-s.sin(), s.cos(), 0.0))
            })
            .collect();
        interpolate(&mesh, &samples).unwrap()
    }

    #[test]
    fn circle_bending_energy() {
        let kappa = 10.0;
        for &r in &[1.0, 2.5] {
            let c = circle_curve(100, r);
            let length = 2.0 * PI * r;
            let exact = kappa * length / (2.0 * r * r);
            assert_relative_eq!(exact, 2.0 * kappa * PI * PI / length, epsilon = 1e-12);
            let e = c.bending_energy(kappa);
            assert!((e / exact - 1.0).abs() < 0.01, "E={e} exact={exact}");
            assert_eq!(c.arclength_violation(), 0.0);
        }
    }

    #[test]
    fn elementwise_bending_energy_matches_stiffness_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for closed in [true, false] {
            let mesh = Mesh::new((0..=12).map(|i| i as f64 + rng.random_range(0.0..0.5) * f64::from(i > 0 && i < 12)).collect(), closed).unwrap();
            let asm = assemble(&mesh).unwrap();
            let dofs: Vec<f64> = (0..mesh.n_dofs()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let curve = DiscreteCurve::from_dofs(mesh, dofs).unwrap();
            let reference = 0.5 * 3.0 * componentwise_quad_form(&asm.stiffness, curve.dofs());
            assert_relative_eq!(curve.bending_energy(3.0), reference, max_relative = 1e-12);
        }
    }

    #[test]
    fn bending_energy_converges_quadratically() {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let c = circle_curve(n, 1.0);
                (c.bending_energy(1.0) - PI).abs()
            })
            .collect();
        assert!(errs[0] / errs[1] >= 3.8 && errs[1] / errs[2] >= 3.8, "{errs:?}");
    }

    #[test]
    fn evaluate_interpolates_nodes_and_cubics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nodes = vec![0.0];
        for _ in 0..7 {
            nodes.push(nodes.last().unwrap() + rng.random_range(0.2..1.0));
        }
        let mesh = Mesh::new(nodes, false).unwrap();
        let coef: Vec<[f64; 4]> = (0..3).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let f = |x: f64, order: usize| -> Vector3<f64> {
            Vector3::from_fn(|c, _| {
                let a = coef[c];
                match order {
                    0 => a[0] + a[1] * x + a[2] * x * x + a[3] * x * x * x,
                    1 => a[1] + 2.0 * a[2] * x + 3.0 * a[3] * x * x,
                    _ => 2.0 * a[2] + 6.0 * a[3] * x,
                }
            })
        };
        let positions: Vec<_> = mesh.nodes().iter().map(|&x| f(x, 0)).collect();
        let tangents: Vec<_> = mesh.nodes().iter().map(|&x| f(x, 1)).collect();
        let curve = DiscreteCurve::new(mesh.clone(), &positions, &tangents).unwrap();
        for i in 0..mesh.n_nodes() {
            assert_eq!(curve.evaluate(mesh.node(i), 0).unwrap(), positions[i]);
            assert_eq!(curve.evaluate(mesh.node(i), 1).unwrap(), tangents[i]);
        }
        let len = mesh.length();
        for _ in 0..100 {
            let x = rng.random_range(0.0..len);
            for order in 0..3 {
                let d = curve.evaluate(x, order).unwrap() - f(x, order);
                assert!(d.norm() < 1e-10, "order {order} error {}", d.norm());
            }
        }
        assert!(curve.evaluate(-0.1, 0).is_err());
        assert!(curve.evaluate(len + 0.1, 0).is_err());
        assert!(matches!(curve.evaluate(0.5, 3), Err(Error::DerivativeOrder(3))));
    }

    #[test]
    fn first_derivative_continuous_at_nodes() {
        let c = circle_curve(12, 1.0);
        for e in 0..12 {
            let (_, b) = c.mesh().element_nodes(e);
            let left = c.evaluate_local(e, 1.0, 1);
            let right = c.evaluate_local((e + 1) % 12, 0.0, 1);
            assert_eq!(left, c.tangent(b));
            assert_eq!(right, c.tangent(b));
        }
    }

    #[test]
    fn closed_curves_wrap() {
        let c = circle_curve(20, 1.0);
        let a = c.evaluate(0.3, 0).unwrap();
        let b = c.evaluate(0.3 + 2.0 * PI, 0).unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn interpolation_normalizes_tangents() {
        let mesh = Mesh::uniform(4, 4.0, false).unwrap();
        let samples: Vec<_> = (0..5).map(|i| (Point::new(i as f64, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0))).collect();
        let c = interpolate(&mesh, &samples).unwrap();
        assert_eq!(c.arclength_violation(), 0.0);
        let unit: Vec<_> = (0..5).map(|i| (Point::new(i as f64, 0.0, 0.0), Vector3::x())).collect();
        let u = interpolate(&mesh, &unit).unwrap();
        assert_eq!(u, c);
        let mut bad = unit.clone();
        bad[2].1 = Vector3::zeros();
        assert!(interpolate(&mesh, &bad).is_err());
    }

    #[test]
    fn arclength_violation_of_scaled_tangent() {
        let mut c = circle_curve(10, 1.0);
        let d = c.tangent(3);
        c.set_tangent(3, d * 1.1);
        assert_relative_eq!(c.arclength_violation(), 0.21, epsilon = 1e-14);
    }

    #[test]
    fn lumped_products() {
        let mesh = Mesh::uniform(4, 2.0, false).unwrap();
        let e = vec![Vector3::z(); 5];
        assert_relative_eq!(lumped_product(&mesh, &e, &e).unwrap(), 2.0);
        let x = vec![Vector3::x(); 5];
        assert_eq!(lumped_product(&mesh, &e, &x).unwrap(), 0.0);
        assert!(lumped_product(&mesh, &e, &x[..4]).is_err());

        // trapezoid oracle on a non-uniform closed mesh
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nodes = vec![0.0];
        for _ in 0..9 {
            nodes.push(nodes.last().unwrap() + rng.random_range(0.1..1.0));
        }
        let mesh = Mesh::new(nodes, true).unwrap();
        let n = mesh.n_nodes();
        let f: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let g: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let trapezoid: f64 = (0..mesh.n_elements())
            .map(|e| {
                let (a, b) = mesh.element_nodes(e);
                0.5 * mesh.element_length(e) * (f[a].dot(&g[a]) + f[b].dot(&g[b]))
            })
            .sum();
        assert_relative_eq!(lumped_product(&mesh, &f, &g).unwrap(), trapezoid, epsilon = 1e-12);
    }

    #[test]
    fn unit_tangents_are_exactly_normalized() {
        let mut inexact = 0;
        for i in 0..20_000 {
            let t = 0.1 * i as f64;
            let d = Vector3::new(-t.sin(), t.cos(), 0.3 * (3.0 * t).cos() * (i % 2) as f64) * 1.7;
            let u = unit_tangent(&d);
            assert!((u - d / d.norm()).amax() <= 1e-12);
            if u.norm_squared() != 1.0 {
                inexact += 1;
            }
        }
        assert!(inexact <= 2, "{inexact} tangents not exactly unit");
    }
}
