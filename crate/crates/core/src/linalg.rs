//! Sparse and banded storage used by the step solver.

use nalgebra::DMatrix;

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, vals }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let ax = self.mul_vec(x);
        ax.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Symmetric banded matrix holding its lower band row by row, factorized in
/// place as `L D Lᵀ` without pivoting.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)], factored: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` at `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place `L D Lᵀ` factorization. With `positive` set, a non-positive
    /// pivot is reported (Cholesky semantics); otherwise only zero pivots
    /// fail. Returns the offending row on failure.
    pub fn factorize(&mut self, positive: bool) -> Result<(), usize> {
        assert!(!self.factored, "matrix already factorized");
        let (n, bw) = (self.n, self.bw);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut work = vec![0.0; bw + 1];
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                for k in lo..j {
                    s -= work[k - lo_i] * self.data[self.idx(j, k)];
                }
                // work holds L[i][k] * D[k]
                work[j - lo_i] = s;
                let d = self.data[self.idx(j, j)];
                let k = self.idx(i, j);
                self.data[k] = s / d;
            }
            let mut d = self.data[self.idx(i, i)];
            for j in lo_i..i {
                d -= work[j - lo_i] * self.data[self.idx(i, j)];
            }
            let tiny = 1e-14 * scale.max(f64::MIN_POSITIVE);
            if !d.is_finite() || d.abs() <= tiny || (positive && d <= 0.0) {
                return Err(i);
            }
            let k = self.idx(i, i);
            self.data[k] = d;
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the factorization.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert!(self.factored, "matrix not factorized");
        assert_eq!(x.len(), self.n);
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(lo) {
                s -= self.data[self.idx(i, j)] * xj;
            }
            x[i] = s;
        }
        for i in 0..self.n {
            x[i] /= self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                x[j] -= self.data[self.idx(i, j)] * xi;
            }
        }
    }

    /// Pivots of the factorization (`D`), available after [`factorize`](Self::factorize).
    pub fn pivots(&self) -> Vec<f64> {
        assert!(self.factored);
        (0..self.n).map(|i| self.data[self.idx(i, i)]).collect()
    }
}
