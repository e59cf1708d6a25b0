//! Saddle-point solves for `[[A, Bᵀ], [B, 0]] [w; λ] = [b; 0]`.
//!
//! `A` is constant and symmetric positive definite; every row of `B` touches
//! the degrees of freedom of a single node. Unknowns are reordered node by
//! node (closed curves use a zig-zag node sequence so the periodic coupling
//! stays inside the band) and each multiplier is placed right after the
//! DOFs of its node. The KKT matrix is then banded and admits an `L D Lᵀ`
//! factorization without pivoting: every leading block is itself a saddle
//! system with SPD upper-left block and full-rank constraints.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{BandedSym, CsrMatrix};

/// One constraint row `Σ coeffs[k] · w[cols[k]] = 0` owned by `node`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub node: usize,
    pub cols: [usize; 3],
    pub coeffs: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    /// Banded `L D Lᵀ` of the full indefinite system, refactorized per step.
    #[default]
    Direct,
    /// Cached factorization of `A` plus a dense Schur complement `B A⁻¹ Bᵀ`.
    Schur,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Node sequence keeping neighbours within two positions of each other.
pub fn node_sequence(n_nodes: usize, closed: bool) -> Vec<usize> {
    if !closed {
        return (0..n_nodes).collect();
    }
    let mut seq = Vec::with_capacity(n_nodes);
    seq.push(0);
    let (mut lo, mut hi) = (1, n_nodes - 1);
    while lo <= hi {
        seq.push(lo);
        if hi != lo {
            seq.push(hi);
        }
        lo += 1;
        hi -= 1;
    }
    seq
}

/// Constant operator `A` together with the banded layouts of both solve paths.
#[derive(Debug)]
pub struct SaddleOperator {
    a: CsrMatrix,
    node_of: Vec<usize>,
    sequence: Vec<usize>,
    /// Position of each unknown in the `A`-only ordering.
    a_pos: Vec<usize>,
    a_bw: usize,
    a_factor: OnceLock<std::result::Result<BandedSym, usize>>,
}

impl SaddleOperator {
    /// `node_of[i]` is the node owning unknown `i`; `sequence` lists nodes in
    /// elimination order.
    pub fn new(a: CsrMatrix, node_of: Vec<usize>, sequence: Vec<usize>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows(), node_of.len());
        let a_pos = Self::positions(&node_of, &sequence, &[]).0;
        let a_bw = a.iter().map(|(r, c, _)| a_pos[r].abs_diff(a_pos[c])).max().unwrap_or(0);
        Self { a, node_of, sequence, a_pos, a_bw, a_factor: OnceLock::new() }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn node_of(&self, unknown: usize) -> usize {
        self.node_of[unknown]
    }

    /// Positions of unknowns and of constraint rows owned by `row_nodes`.
    fn positions(node_of: &[usize], sequence: &[usize], row_nodes: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let n_nodes = sequence.len();
        let mut by_node: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (i, &node) in node_of.iter().enumerate() {
            by_node[node].push(i);
        }
        let mut rows_by_node: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (j, &node) in row_nodes.iter().enumerate() {
            rows_by_node[node].push(j);
        }
        let mut pos = vec![0; node_of.len()];
        let mut row_pos = vec![0; row_nodes.len()];
        let mut next = 0;
        for &node in sequence {
            for &i in &by_node[node] {
                pos[i] = next;
                next += 1;
            }
            for &j in &rows_by_node[node] {
                row_pos[j] = next;
                next += 1;
            }
        }
        (pos, row_pos)
    }

    fn cached_factor(&self) -> Result<&BandedSym> {
        let f = self.a_factor.get_or_init(|| {
            let mut band = BandedSym::zeros(self.dim(), self.a_bw);
            for (r, c, v) in self.a.iter() {
                if r >= c {
                    band.add(self.a_pos[r], self.a_pos[c], v);
                }
            }
            band.factorize(true).map(|_| band)
        });
        match f {
            Ok(band) => Ok(band),
            Err(pos) => {
                let unknown = self.a_pos.iter().position(|p| p == pos).unwrap_or(*pos);
                Err(Error::NotPositiveDefinite(unknown))
            }
        }
    }

    /// Smallest pivot of the `L D Lᵀ` factorization of `A`; positive iff `A` is SPD.
    pub fn min_pivot(&self) -> Result<f64> {
        Ok(self.cached_factor()?.pivots().into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Solves `A x = b`.
    pub fn solve_a(&self, b: &[f64]) -> Result<Vec<f64>> {
        let factor = self.cached_factor()?;
        let mut x = vec![0.0; self.dim()];
        for (i, v) in b.iter().enumerate() {
            x[self.a_pos[i]] = *v;
        }
        factor.solve_in_place(&mut x);
        Ok((0..self.dim()).map(|i| x[self.a_pos[i]]).collect())
    }

    pub fn solve(&self, rows: &[ConstraintRow], rhs: &[f64], method: SolveMethod) -> Result<SaddleSolution> {
        assert_eq!(rhs.len(), self.dim());
        for row in rows {
            debug_assert!(row.cols.iter().all(|&c| self.node_of[c] == row.node));
        }
        match method {
            SolveMethod::Direct => self.solve_direct(rows, rhs),
            SolveMethod::Schur => self.solve_schur(rows, rhs),
        }
    }

    fn solve_direct(&self, rows: &[ConstraintRow], rhs: &[f64]) -> Result<SaddleSolution> {
        let n = self.dim();
        let m = rows.len();
        let row_nodes: Vec<usize> = rows.iter().map(|r| r.node).collect();
        let (pos, row_pos) = Self::positions(&self.node_of, &self.sequence, &row_nodes);
        let mut bw = self.a.iter().map(|(r, c, _)| pos[r].abs_diff(pos[c])).max().unwrap_or(0);
        for (j, row) in rows.iter().enumerate() {
            for &c in &row.cols {
                bw = bw.max(row_pos[j].abs_diff(pos[c]));
            }
        }
        let mut kkt = BandedSym::zeros(n + m, bw);
        for (r, c, v) in self.a.iter() {
            if r >= c {
                kkt.add(pos[r], pos[c], v);
            }
        }
        for (j, row) in rows.iter().enumerate() {
            for (&c, &v) in row.cols.iter().zip(&row.coeffs) {
                kkt.add(row_pos[j], pos[c], v);
            }
        }
        if let Err(p) = kkt.factorize(false) {
            let node = pos
                .iter()
                .position(|&q| q == p)
                .map(|i| self.node_of[i])
                .or_else(|| row_pos.iter().position(|&q| q == p).map(|j| rows[j].node));
            return Err(Error::SingularSystem { index: p, node });
        }
        let solve = |res_w: &[f64], res_c: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut x = vec![0.0; n + m];
            for i in 0..n {
                x[pos[i]] = res_w[i];
            }
            for j in 0..m {
                x[row_pos[j]] = res_c[j];
            }
            kkt.solve_in_place(&mut x);
            ((0..n).map(|i| x[pos[i]]).collect(), (0..m).map(|j| x[row_pos[j]]).collect())
        };
        let (mut w, mut lambda) = solve(rhs, &vec![0.0; m]);
        // one step of iterative refinement
        let (rw, rc) = self.residual_vectors(rows, rhs, &w, &lambda);
        let (dw, dl) = solve(&rw, &rc);
        w.iter_mut().zip(dw).for_each(|(a, b)| *a += b);
        lambda.iter_mut().zip(dl).for_each(|(a, b)| *a += b);
        Ok(SaddleSolution { w, lambda })
    }

    fn solve_schur(&self, rows: &[ConstraintRow], rhs: &[f64]) -> Result<SaddleSolution> {
        let n = self.dim();
        let m = rows.len();
        let mut columns = Vec::with_capacity(m);
        for row in rows {
            let mut e = vec![0.0; n];
            for (&c, &v) in row.cols.iter().zip(&row.coeffs) {
                e[c] += v;
            }
            columns.push(self.solve_a(&e)?);
        }
        let apply_b = |row: &ConstraintRow, x: &[f64]| -> f64 { row.cols.iter().zip(&row.coeffs).map(|(&c, v)| v * x[c]).sum() };
        let schur = DMatrix::from_fn(m, m, |i, j| apply_b(&rows[i], &columns[j]));
        let schur = 0.5 * (&schur + schur.transpose());
        let y = self.solve_a(rhs)?;
        let by = DVector::from_iterator(m, rows.iter().map(|r| apply_b(r, &y)));
        let lambda = match schur.clone().cholesky() {
            Some(ch) => ch.solve(&by),
            None => {
                let diag = schur.diagonal();
                let j = (0..m).min_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
                return Err(Error::SingularSystem { index: n + j, node: rows.get(j).map(|r| r.node) });
            }
        };
        let mut w = y;
        for (col, l) in columns.iter().zip(lambda.iter()) {
            for (wi, ci) in w.iter_mut().zip(col) {
                *wi -= l * ci;
            }
        }
        Ok(SaddleSolution { w, lambda: lambda.iter().copied().collect() })
    }

    /// `(b - A w - Bᵀ λ, -B w)`.
    fn residual_vectors(&self, rows: &[ConstraintRow], rhs: &[f64], w: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rw: Vec<f64> = self.a.mul_vec(w).iter().zip(rhs).map(|(aw, b)| b - aw).collect();
        let mut rc = vec![0.0; rows.len()];
        for (j, row) in rows.iter().enumerate() {
            for (&c, &v) in row.cols.iter().zip(&row.coeffs) {
                rw[c] -= v * lambda[j];
                rc[j] -= v * w[c];
            }
        }
        (rw, rc)
    }

    /// Relative primal residual `‖A w + Bᵀλ − b‖ / max(‖b‖, ‖A w‖)` and
    /// constraint residual `‖B w‖_∞`.
    pub fn residuals(&self, rows: &[ConstraintRow], rhs: &[f64], sol: &SaddleSolution) -> (f64, f64) {
        let (rw, rc) = self.residual_vectors(rows, rhs, &sol.w, &sol.lambda);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = norm(rhs).max(norm(&self.a.mul_vec(&sol.w))).max(f64::MIN_POSITIVE);
        (norm(&rw) / scale, rc.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zig_zag_sequence() {
        assert_eq!(node_sequence(6, true), vec![0, 1, 5, 2, 4, 3]);
        assert_eq!(node_sequence(5, true), vec![0, 1, 4, 2, 3]);
        assert_eq!(node_sequence(3, false), vec![0, 1, 2]);
        let seq = node_sequence(11, true);
        let mut pos = [0; 11];
        for (k, &n) in seq.iter().enumerate() {
            pos[n] = k;
        }
        for i in 0..11 {
            assert!(pos[i].abs_diff(pos[(i + 1) % 11]) <= 2);
        }
    }

    /// Random SPD operator coupling neighbouring nodes on a ring.
    fn random_problem(n_nodes: usize, rng: &mut ChaCha8Rng) -> (SaddleOperator, Vec<ConstraintRow>, Vec<f64>) {
        let per = 4;
        let n = n_nodes * per;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for a in 0..n_nodes {
            for b in [a, (a + 1) % n_nodes] {
                for i in 0..per {
                    for j in 0..per {
                        let (r, c) = (a * per + i, b * per + j);
                        if r != c {
                            let v = rng.random_range(-1.0..1.0);
                            dense[(r, c)] += v;
                            dense[(c, r)] += v;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            dense[(i, i)] = 20.0 + rng.random_range(0.0..1.0);
        }
        let triplets = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).filter(|&(r, c)| dense[(r, c)] != 0.0).map(|(r, c)| (r, c, dense[(r, c)])).collect();
        let a = CsrMatrix::from_triplets(n, n, triplets);
        let node_of = (0..n).map(|i| i / per).collect();
        let op = SaddleOperator::new(a, node_of, node_sequence(n_nodes, true));
        let rows = (0..n_nodes)
            .map(|k| ConstraintRow {
                node: k,
                cols: [k * per + 1, k * per + 2, k * per + 3],
                coeffs: std::array::from_fn(|_| rng.random_range(0.5..1.5)),
            })
            .collect();
        let rhs = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (op, rows, rhs)
    }

    fn dense_oracle(op: &SaddleOperator, rows: &[ConstraintRow], rhs: &[f64]) -> DVector<f64> {
        let n = op.dim();
        let m = rows.len();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&op.matrix().to_dense());
        for (j, row) in rows.iter().enumerate() {
            for (&c, &v) in row.cols.iter().zip(&row.coeffs) {
                k[(n + j, c)] = v;
                k[(c, n + j)] = v;
            }
        }
        let mut b = DVector::zeros(n + m);
        b.rows_mut(0, n).copy_from_slice(rhs);
        k.lu().solve(&b).unwrap()
    }

    #[test]
    fn both_paths_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n_nodes in [3, 8, 25] {
            let (op, rows, rhs) = random_problem(n_nodes, &mut rng);
            let oracle = dense_oracle(&op, &rows, &rhs);
            for method in [SolveMethod::Direct, SolveMethod::Schur] {
                let sol = op.solve(&rows, &rhs, method).unwrap();
                let (primal, constraint) = op.residuals(&rows, &rhs, &sol);
                assert!(primal < 1e-10 && constraint < 1e-10, "{method:?}: {primal:e} {constraint:e}");
                for i in 0..op.dim() {
                    assert!((sol.w[i] - oracle[i]).abs() < 1e-10);
                }
                for j in 0..rows.len() {
                    assert!((sol.lambda[j] - oracle[op.dim() + j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (op, rows, rhs) = random_problem(6, &mut rng);
        let zero = vec![0.0; rhs.len()];
        for method in [SolveMethod::Direct, SolveMethod::Schur] {
            let sol = op.solve(&rows, &zero, method).unwrap();
            assert!(sol.w.iter().chain(&sol.lambda).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn degenerate_row_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (op, mut rows, rhs) = random_problem(5, &mut rng);
        rows[3].coeffs = [0.0; 3];
        for method in [SolveMethod::Direct, SolveMethod::Schur] {
            match op.solve(&rows, &rhs, method) {
                Err(Error::SingularSystem { node, .. }) => assert_eq!(node, Some(3)),
                other => panic!("{method:?}: expected singular system, got {other:?}"),
            }
        }
    }
}
