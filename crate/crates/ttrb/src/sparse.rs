//! Sparse symmetric-capable matrices in compressed column form, a banded
//! Cholesky factorization with triangular solves, Kronecker products, and
//! the rank-truncated SVD used by every reduction routine.
//!
//! The dense SVD / eigen / LU kernels are delegated to `nalgebra`; the rank
//! selection, sign convention and remainder contract are implemented here.

use nalgebra::DMatrix;

use crate::tensors::Tensor;
use crate::{argument, Error, Result};

/// Compressed sparse column matrix with optionally asserted symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Builds from triplets; duplicates are summed, explicit zeros are kept
    /// (structural pattern is preserved).
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
        symmetric: bool,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(argument(format!("triplet ({r},{c}) out of range")));
            }
            entries.push((c, r, v));
        }
        entries.sort_by_key(|&(c, r, _)| (c, r));
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (c, r, v) in entries {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            values.push(v);
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut m = Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
            symmetric: false,
        };
        m.merge_duplicates();
        if symmetric {
            m.assert_symmetric()?;
            m.symmetric = true;
        }
        Ok(m)
    }

    fn merge_duplicates(&mut self) {
        let mut col_ptr = vec![0usize; self.n_cols + 1];
        let mut row_idx = Vec::with_capacity(self.row_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.n_cols {
            let (lo, hi) = (self.col_ptr[c], self.col_ptr[c + 1]);
            let mut k = lo;
            while k < hi {
                let r = self.row_idx[k];
                let mut v = self.values[k];
                let mut j = k + 1;
                while j < hi && self.row_idx[j] == r {
                    v += self.values[j];
                    j += 1;
                }
                row_idx.push(r);
                values.push(v);
                k = j;
            }
            col_ptr[c + 1] = row_idx.len();
        }
        self.col_ptr = col_ptr;
        self.row_idx = row_idx;
        self.values = values;
    }

    fn assert_symmetric(&self) -> Result<()> {
        if self.n_rows != self.n_cols {
            return Err(argument("symmetric flag on a non-square matrix"));
        }
        for c in 0..self.n_cols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                let w = self.get(c, r);
                if (v - w).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(argument(format!("matrix not symmetric at ({r},{c})")));
                }
            }
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Stored entries of one column as `(rows, values)` slices.
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    /// Value at `(r, c)`; zero if not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (rows, vals) = self.col(c);
        match rows.binary_search(&r) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Position of a stored entry in the flat nonzero ordering (CSC order).
    pub fn nz_position(&self, r: usize, c: usize) -> Option<usize> {
        let (lo, hi) = (self.col_ptr[c], self.col_ptr[c + 1]);
        self.row_idx[lo..hi].binary_search(&r).ok().map(|k| lo + k)
    }

    /// The stored nonzero values in CSC order.
    pub fn nz_values(&self) -> &[f64] {
        &self.values
    }

    /// `(row, col)` of the `k`-th stored entry in CSC order.
    pub fn nz_coords(&self, k: usize) -> (usize, usize) {
        let c = match self.col_ptr.binary_search(&k) {
            Ok(mut c) => {
                while c + 1 < self.col_ptr.len() && self.col_ptr[c + 1] == k {
                    c += 1;
                }
                c
            }
            Err(c) => c - 1,
        };
        (self.row_idx[k], c)
    }

    pub fn max_semi_bandwidth(&self) -> usize {
        let mut b = 0usize;
        for c in 0..self.n_cols {
            let (rows, _) = self.col(c);
            for &r in rows {
                b = b.max(r.abs_diff(c));
            }
        }
        b
    }

    /// `y = A * x` where the first axis of `x` has length `n_cols`; any
    /// trailing axes are treated as independent right-hand sides.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if x.dims()[0] != self.n_cols {
            return Err(argument("mul_dense shape mismatch"));
        }
        let rest: usize = x.dims()[1..].iter().product();
        let mut out_dims = x.dims().to_vec();
        out_dims[0] = self.n_rows;
        let mut y = Tensor::zeros(out_dims);
        for c in 0..self.n_cols {
            let xrow = &x.data()[c * rest..(c + 1) * rest];
            let (rows, vals) = self.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                let yrow = &mut y.data_mut()[r * rest..(r + 1) * rest];
                for q in 0..rest {
                    yrow[q] += v * xrow[q];
                }
            }
        }
        Ok(y)
    }

    /// `self + beta * other` on the merged pattern.
    pub fn add_scaled(&self, other: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(argument("add_scaled shape mismatch"));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for c in 0..self.n_cols {
            let (rows, vals) = self.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                triplets.push((r, c, v));
            }
            let (rows, vals) = other.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                triplets.push((r, c, beta * v));
            }
        }
        SparseMatrix::from_triplets(self.n_rows, self.n_cols, &triplets, false)
    }

    pub fn scaled(&self, a: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= a;
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(vec![self.n_rows, self.n_cols]);
        for c in 0..self.n_cols {
            let (rows, vals) = self.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                out.set(&[r, c], v);
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Kronecker product consistent with [`crate::tensors::KronMap`]:
/// `(A (x) B)[i_a*N_b + i_b, j_c*N_d + j_d] = A[i_a, j_c] * B[i_b, j_d]`.
pub fn kron_sparse(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    let n_rows = a
        .n_rows
        .checked_mul(b.n_rows)
        .ok_or_else(|| Error::Capacity("kron row count overflow".into()))?;
    let n_cols = a
        .n_cols
        .checked_mul(b.n_cols)
        .ok_or_else(|| Error::Capacity("kron col count overflow".into()))?;
    let nnz = a.nnz() * b.nnz();
    let mut col_ptr = Vec::with_capacity(n_cols + 1);
    let mut row_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    col_ptr.push(0);
    for ca in 0..a.n_cols {
        let (arows, avals) = a.col(ca);
        for cb in 0..b.n_cols {
            let (brows, bvals) = b.col(cb);
            for (&ra, &va) in arows.iter().zip(avals) {
                for (&rb, &vb) in brows.iter().zip(bvals) {
                    row_idx.push(ra * b.n_rows + rb);
                    values.push(va * vb);
                }
            }
            col_ptr.push(row_idx.len());
        }
    }
    Ok(SparseMatrix {
        n_rows,
        n_cols,
        col_ptr,
        row_idx,
        values,
        symmetric: a.symmetric && b.symmetric,
    })
}

/// Upper-triangular Cholesky factor `H` with `H^T H = X`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    h: SparseMatrix,
    bandwidth: usize,
}

impl CholeskyFactor {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.h
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.h.n_rows
    }
}

/// Banded up-looking Cholesky with no reordering; fill stays inside the
/// input semi-bandwidth. Fails with the offending pivot index when the
/// matrix is not positive definite.
pub fn cholesky(x: &SparseMatrix) -> Result<CholeskyFactor> {
    if x.n_rows != x.n_cols {
        return Err(argument("cholesky expects a square matrix"));
    }
    let n = x.n_rows;
    let b = x.max_semi_bandwidth();
    let w = b + 1;
    // Band storage: band[j*w + d] = H[j-d, j].
    let mut band = vec![0.0f64; n * w];
    let mut diag = vec![0.0f64; n];
    for c in 0..n {
        let (rows, vals) = x.col(c);
        for (&r, &v) in rows.iter().zip(vals) {
            if r <= c {
                band[c * w + (c - r)] = v;
                if r == c {
                    diag[c] = v.abs();
                }
            }
        }
    }
    for j in 0..n {
        let lo = j.saturating_sub(b);
        for i in lo..j {
            let mut s = band[j * w + (j - i)];
            let klo = lo.max(i.saturating_sub(b));
            for k in klo..i {
                s -= band[i * w + (i - k)] * band[j * w + (j - k)];
            }
            band[j * w + (j - i)] = s / band[i * w];
        }
        let mut s = band[j * w];
        for k in lo..j {
            let hkj = band[j * w + (j - k)];
            s -= hkj * hkj;
        }
        // Pivots that vanish relative to the original diagonal are
        // cancellation noise of a singular matrix, not SPD pivots.
        if s <= 1e-13 * diag[j] || !s.is_finite() {
            return Err(Error::NotSpd { index: j });
        }
        band[j * w] = s.sqrt();
    }
    // Column-major band to CSC upper triangle; exact zeros are dropped.
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for j in 0..n {
        let lo = j.saturating_sub(b);
        for i in lo..=j {
            let v = band[j * w + (j - i)];
            if v != 0.0 {
                row_idx.push(i);
                values.push(v);
            }
        }
        col_ptr.push(row_idx.len());
    }
    Ok(CholeskyFactor {
        h: SparseMatrix {
            n_rows: n,
            n_cols: n,
            col_ptr,
            row_idx,
            values,
            symmetric: false,
        },
        bandwidth: b,
    })
}

/// Solves `H x = b` (back substitution) or `H^T x = b` (forward
/// substitution) for the upper-triangular factor; the first axis of `b`
/// carries the unknowns, trailing axes are independent right-hand sides.
pub fn tri_solve(factor: &CholeskyFactor, b: &Tensor, transpose: bool) -> Result<Tensor> {
    let h = &factor.h;
    let n = h.n_rows;
    if b.dims()[0] != n {
        return Err(argument("tri_solve shape mismatch"));
    }
    let rest: usize = b.dims()[1..].iter().product();
    let mut x = b.clone();
    if transpose {
        // H^T is lower triangular; row j of H^T is column j of H.
        for j in 0..n {
            let (rows, vals) = h.col(j);
            let mut diag = 0.0;
            let mut acc = vec![0.0f64; rest];
            for (&i, &v) in rows.iter().zip(vals) {
                if i == j {
                    diag = v;
                } else {
                    let xi = &x.data()[i * rest..(i + 1) * rest];
                    for q in 0..rest {
                        acc[q] += v * xi[q];
                    }
                }
            }
            if diag == 0.0 {
                return Err(Error::Singular(format!("zero diagonal at {j}")));
            }
            let xj = &mut x.data_mut()[j * rest..(j + 1) * rest];
            for q in 0..rest {
                xj[q] = (xj[q] - acc[q]) / diag;
            }
        }
    } else {
        for j in (0..n).rev() {
            let (rows, vals) = h.col(j);
            let diag = *vals
                .last()
                .filter(|_| rows.last() == Some(&j))
                .ok_or_else(|| Error::Singular(format!("zero diagonal at {j}")))?;
            {
                let xj = &mut x.data_mut()[j * rest..(j + 1) * rest];
                for q in 0..rest {
                    xj[q] /= diag;
                }
            }
            let xj = x.data()[j * rest..(j + 1) * rest].to_vec();
            for (&i, &v) in rows.iter().zip(vals) {
                if i == j {
                    continue;
                }
                let xi = &mut x.data_mut()[i * rest..(i + 1) * rest];
                for q in 0..rest {
                    xi[q] -= v * xj[q];
                }
            }
        }
    }
    Ok(x)
}

/// Output of [`truncated_svd`]: `phi` has orthonormal columns, `remainder`
/// is `Sigma V^T` restricted to the kept rank, and `sigma` collects all
/// computed singular values in descending order.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub phi: Tensor,
    pub remainder: Tensor,
    pub rank: usize,
    pub sigma: Vec<f64>,
}

/// Rank-truncated SVD with the relative energy criterion: the kept rank is
/// the smallest `r` with `sum_{i>r} sigma_i^2 <= eps^2 * ||a||_F^2` (at
/// least 1). Deterministic: dense SVD of the unfolding plus a sign
/// convention making the largest-magnitude entry of each column positive.
pub fn truncated_svd(a: &Tensor, eps: f64) -> Result<TruncatedSvd> {
    if eps < 0.0 {
        return Err(argument("negative tolerance"));
    }
    if a.order() != 2 {
        return Err(argument("truncated_svd expects a matrix-shaped tensor"));
    }
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mat = DMatrix::from_row_slice(m, n, a.data());
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdNonConvergence)?;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let rank = energy_rank(&sigma, eps);
    let mut phi = Tensor::zeros(vec![m, rank]);
    let mut rem = Tensor::zeros(vec![rank, n]);
    for k in 0..rank {
        // Sign convention: largest-magnitude entry of each column positive.
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..m {
            let v = u[(i, k)].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        let s = if u[(best, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            phi.data_mut()[i * rank + k] = s * u[(i, k)];
        }
        for j in 0..n {
            rem.data_mut()[k * n + j] = s * sigma[k] * vt[(k, j)];
        }
    }
    Ok(TruncatedSvd {
        phi,
        remainder: rem,
        rank,
        sigma,
    })
}

/// Smallest rank whose discarded energy is at most `eps^2` of the total.
pub fn energy_rank(sigma: &[f64], eps: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let budget = eps * eps * total;
    let mut tail = 0.0;
    let mut rank = sigma.len();
    for k in (0..sigma.len()).rev() {
        tail += sigma[k] * sigma[k];
        if tail <= budget {
            rank = k;
        } else {
            break;
        }
    }
    rank.max(1)
}

/// Dense LU with partial pivoting for the small reduced systems.
#[derive(Debug)]
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: &Tensor) -> Result<Self> {
        if a.order() != 2 || a.dims()[0] != a.dims()[1] {
            return Err(argument("DenseLu expects a square matrix"));
        }
        let n = a.dims()[0];
        let lu = DMatrix::from_row_slice(n, n, a.data()).lu();
        if lu.determinant().abs() == 0.0 {
            return Err(Error::Singular("zero determinant in dense LU".into()));
        }
        Ok(Self { lu, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(argument("DenseLu rhs length mismatch"));
        }
        let rhs = nalgebra::DVector::from_column_slice(b);
        let x = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("dense LU solve failed".into()))?;
        Ok(x.as_slice().to_vec())
    }

    /// Crude condition estimate: ratio of extreme |U| diagonal entries.
    pub fn condition_estimate(&self) -> f64 {
        let u = self.lu.u();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..self.n {
            let d = u[(k, k)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// Frobenius norm of the inverse, for the interpolation diagnostics.
    pub fn inverse_frobenius_norm(&self) -> f64 {
        let eye = DMatrix::<f64>::identity(self.n, self.n);
        match self.lu.solve(&eye) {
            Some(inv) => inv.iter().map(|v| v * v).sum::<f64>().sqrt(),
            None => f64::INFINITY,
        }
    }
}

/// Eigen-decomposition of a dense symmetric matrix; returns eigenvalues in
/// ascending order with matching eigenvector columns.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if a.order() != 2 || a.dims()[0] != a.dims()[1] {
        return Err(argument("symmetric_eigen expects a square matrix"));
    }
    let n = a.dims()[0];
    let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(n, n, a.data()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Tensor::zeros(vec![n, n]);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.data_mut()[i * n + k] = eig.eigenvectors[(i, src)];
        }
    }
    Ok((values, vectors))
}

/// Power-iteration estimate of the spectral radius of a symmetric matrix.
pub fn spectral_radius_estimate(a: &SparseMatrix, max_iters: usize, tol: f64) -> f64 {
    let n = a.n_rows;
    let mut v = Tensor::new(
        vec![n],
        (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect(),
    )
    .unwrap();
    let mut lambda = 0.0f64;
    for _ in 0..max_iters {
        let w = a.mul_dense(&v).expect("square matvec");
        let norm = w.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let mut w = w;
        w.scale(1.0 / norm);
        let delta = (next.abs() - lambda.abs()).abs();
        lambda = next;
        v = w;
        if delta <= tol * lambda.abs().max(1.0) {
            break;
        }
    }
    lambda.abs()
}
