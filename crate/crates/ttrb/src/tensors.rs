//! Dense tensors with axis bookkeeping, the contraction primitives used by
//! the tensor-train machinery, and the Kronecker index bijection.
//!
//! Data is stored first-axis-major: merging axes `(a, b)` maps the pair
//! `(i_a, i_b)` to the flat index `i_a * N_b + i_b` (0-based), so the last
//! axis is contiguous. This single convention fixes the identification of a
//! flat dof vector with its split-axes form and matches the row ordering of
//! Kronecker products assembled in [`crate::sparse`].

use std::io::{Read, Write};
use std::path::Path;

use crate::{argument, Error, Result};

/// Dense multi-axis array of `f64` in first-axis-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from axis lengths and flat data.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(argument("axis lengths must be positive"));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(argument(format!(
                "dims {:?} require {} entries, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    /// Fills a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut out = Self::zeros(dims);
        let mut idx = vec![0usize; out.order()];
        for k in 0..out.len() {
            out.data[k] = f(&idx);
            increment(&mut idx, &out.dims);
        }
        out
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index (first axis slowest).
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut flat = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            flat = flat * self.dims[k] + i;
        }
        flat
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let flat = self.flat_index(idx);
        self.data[flat] = v;
    }

    /// Reinterprets the data under new axis lengths with the same product.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(argument(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// `self - other`, element-wise; dims must match.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(argument("tensor dims mismatch in sub"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    /// Keeps only `count` trailing-axis slices starting at `start`.
    pub fn slice_last_axis(&self, start: usize, count: usize) -> Result<Tensor> {
        let last = *self.dims.last().ok_or_else(|| argument("empty tensor"))?;
        if start + count > last || count == 0 {
            return Err(argument("slice range out of bounds"));
        }
        let lead: usize = self.dims[..self.order() - 1].iter().product();
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = count;
        let mut data = Vec::with_capacity(lead * count);
        for p in 0..lead {
            let base = p * last + start;
            data.extend_from_slice(&self.data[base..base + count]);
        }
        Tensor::new(dims, data)
    }

    /// Writes the binary tensor format: magic `TTRB`, version byte 1, order
    /// byte, little-endian u64 dims, then f64 entries first-axis-major.
    pub fn write_ttrb(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"TTRB")?;
        w.write_all(&[1u8])?;
        if self.order() > u8::MAX as usize {
            return Err(Error::Capacity("tensor order exceeds 255".into()));
        }
        w.write_all(&[self.order() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_ttrb(path: impl AsRef<Path>) -> Result<Tensor> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut head = [0u8; 6];
        r.read_exact(&mut head)?;
        if &head[..4] != b"TTRB" {
            return Err(Error::Format("bad magic bytes".into()));
        }
        if head[4] != 1 {
            return Err(Error::Format(format!("unsupported version {}", head[4])));
        }
        let order = head[5] as usize;
        let mut dims = Vec::with_capacity(order);
        let mut buf8 = [0u8; 8];
        for _ in 0..order {
            r.read_exact(&mut buf8)?;
            dims.push(u64::from_le_bytes(buf8) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf8)?;
            data.push(f64::from_le_bytes(buf8));
        }
        Tensor::new(dims, data)
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Permutes axes: `out` has `out_dims[k] = dims[perm[k]]` and
/// `out[m] = t[i]` with `i[perm[k]] = m[k]`.
pub fn permute_axes(t: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let n = t.order();
    if perm.len() != n {
        return Err(argument("permutation length mismatch"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(argument("invalid permutation"));
        }
        seen[p] = true;
    }
    let out_dims: Vec<usize> = perm.iter().map(|&p| t.dims[p]).collect();
    let mut out = Tensor::zeros(out_dims);
    let out_strides = strides(out.dims());
    let mut idx = vec![0usize; n];
    for flat_in in 0..t.len() {
        let mut flat_out = 0;
        for k in 0..n {
            flat_out += idx[perm[k]] * out_strides[k];
        }
        out.data[flat_out] = t.data[flat_in];
        increment(&mut idx, &t.dims);
    }
    Ok(out)
}

/// Inverse of a permutation.
pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Merges contiguous runs of axes; `group_sizes` partitions the axes in
/// order. The data is untouched: first-axis-major merging is a relabeling.
pub fn merge_axes(t: &Tensor, group_sizes: &[usize]) -> Result<Tensor> {
    if group_sizes.iter().sum::<usize>() != t.order() || group_sizes.contains(&0) {
        return Err(argument("groups must cover all axes in order"));
    }
    let mut dims = Vec::with_capacity(group_sizes.len());
    let mut k = 0;
    for &g in group_sizes {
        dims.push(t.dims[k..k + g].iter().product());
        k += g;
    }
    Tensor::new(dims, t.data.clone())
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Contraction of `r` and `s` along one shared axis of each:
/// `T[..,..] = sum_c R[.., c, ..] * S[c, ..]` with the remaining axes of `r`
/// followed by the remaining axes of `s`.
pub fn contract(r: &Tensor, axis_r: usize, s: &Tensor, axis_s: usize) -> Result<Tensor> {
    if axis_r >= r.order() || axis_s >= s.order() {
        return Err(argument("contraction axis out of range"));
    }
    if r.dims[axis_r] != s.dims[axis_s] {
        return Err(argument(format!(
            "shared axis length mismatch: {} vs {}",
            r.dims[axis_r], s.dims[axis_s]
        )));
    }
    let c = r.dims[axis_r];
    // Bring the shared axis last in r and first in s, then multiply.
    let ra = move_axis_last(r, axis_r);
    let sa = move_axis_first(s, axis_s);
    let m: usize = ra.dims[..ra.order() - 1].iter().product();
    let n: usize = sa.dims[1..].iter().product();
    let mut out_dims: Vec<usize> = ra.dims[..ra.order() - 1].to_vec();
    out_dims.extend_from_slice(&sa.dims[1..]);
    if out_dims.is_empty() {
        out_dims.push(1);
    }
    let mut out = vec![0.0; m * n];
    matmul(&ra.data, &sa.data, &mut out, m, c, n);
    Tensor::new(out_dims, out)
}

fn move_axis_last(t: &Tensor, axis: usize) -> Tensor {
    if axis == t.order() - 1 {
        return t.clone();
    }
    let mut perm: Vec<usize> = (0..t.order()).filter(|&k| k != axis).collect();
    perm.push(axis);
    permute_axes(t, &perm).expect("valid permutation")
}

fn move_axis_first(t: &Tensor, axis: usize) -> Tensor {
    if axis == 0 {
        return t.clone();
    }
    let mut perm = vec![axis];
    perm.extend((0..t.order()).filter(|&k| k != axis));
    permute_axes(t, &perm).expect("valid permutation")
}

/// `out[m x n] += a[m x c] * b[c x n]`, plain ikj loop.
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, c: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * c..(i + 1) * c];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// Mode-`k` contraction: axis `k` of `t` is replaced by the first axis of
/// the matrix `m`, i.e. `out[.., a, ..] = sum_b m[a, b] * t[.., b, ..]`.
pub fn mode_contract(m: &Tensor, t: &Tensor, mode: usize) -> Result<Tensor> {
    if m.order() != 2 {
        return Err(argument("mode_contract expects a matrix-shaped tensor"));
    }
    if mode >= t.order() {
        return Err(argument("mode out of range"));
    }
    let (rows, cols) = (m.dims[0], m.dims[1]);
    if cols != t.dims[mode] {
        return Err(argument(format!(
            "mode-{} length mismatch: {} vs {}",
            mode, cols, t.dims[mode]
        )));
    }
    let pre: usize = t.dims[..mode].iter().product();
    let post: usize = t.dims[mode + 1..].iter().product();
    let mut out_dims = t.dims.clone();
    out_dims[mode] = rows;
    let mut out = Tensor::zeros(out_dims);
    for p in 0..pre {
        for a in 0..rows {
            let orow = &mut out.data[(p * rows + a) * post..(p * rows + a + 1) * post];
            for b in 0..cols {
                let mv = m.data[a * cols + b];
                if mv == 0.0 {
                    continue;
                }
                let trow = &t.data[(p * cols + b) * post..(p * cols + b + 1) * post];
                for q in 0..post {
                    orow[q] += mv * trow[q];
                }
            }
        }
    }
    Ok(out)
}

/// Index bijection between a pair of axes and their merged axis, matching
/// the row ordering of assembled Kronecker products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KronMap {
    pub n_left: usize,
    pub n_right: usize,
}

impl KronMap {
    pub fn new(n_left: usize, n_right: usize) -> Result<Self> {
        if n_left == 0 || n_right == 0 {
            return Err(argument("KronMap sizes must be positive"));
        }
        Ok(Self { n_left, n_right })
    }

    /// `(i_a, i_b) -> i_a * N_b + i_b` (0-based).
    pub fn index(&self, i_left: usize, i_right: usize) -> Result<usize> {
        if i_left >= self.n_left || i_right >= self.n_right {
            return Err(argument("kron index out of range"));
        }
        Ok(i_left * self.n_right + i_right)
    }

    pub fn index_inv(&self, i_merged: usize) -> Result<(usize, usize)> {
        if i_merged >= self.n_left * self.n_right {
            return Err(argument("merged kron index out of range"));
        }
        Ok((i_merged / self.n_right, i_merged % self.n_right))
    }
}

/// A tensor-train core: 3 axes `(r_left, N, r_right)` for bases, 4 axes
/// `(r_left, N, N', r_right)` for Jacobian cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TTCore {
    tensor: Tensor,
}

impl TTCore {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.order() != 3 && tensor.order() != 4 {
            return Err(argument("TT cores must have 3 or 4 axes"));
        }
        Ok(Self { tensor })
    }

    pub fn from_parts(
        left_rank: usize,
        axis_len: usize,
        right_rank: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::new(Tensor::new(vec![left_rank, axis_len, right_rank], data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn left_rank(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn right_rank(&self) -> usize {
        *self.tensor.dims().last().unwrap()
    }

    /// Length of the physical axis (first physical axis for 4-axis cores).
    pub fn axis_len(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn is_operator_core(&self) -> bool {
        self.tensor.order() == 4
    }

    /// Entry accessor for 3-axis cores.
    pub fn at(&self, left: usize, i: usize, right: usize) -> f64 {
        debug_assert!(!self.is_operator_core());
        let d = self.tensor.dims();
        self.tensor.data()[(left * d[1] + i) * d[2] + right]
    }

    /// Unfolds `(r_left, N, r_right)` (or the 4-axis variant) into the
    /// matrix with merged leading axes: `(r_left * N ..) x r_right`.
    pub fn unfold(&self) -> Tensor {
        let rows: usize = self.tensor.dims()[..self.tensor.order() - 1]
            .iter()
            .product();
        self.tensor
            .clone()
            .reshape(vec![rows, self.right_rank()])
            .expect("unfold reshape")
    }
}

/// Validates that consecutive cores chain: `right_rank(i) == left_rank(i+1)`.
pub fn check_rank_chain(cores: &[TTCore]) -> Result<()> {
    if cores.is_empty() {
        return Err(argument("empty core list"));
    }
    if cores[0].left_rank() != 1 {
        return Err(argument("first core must have left rank 1"));
    }
    for w in cores.windows(2) {
        if w[0].right_rank() != w[1].left_rank() {
            return Err(argument(format!(
                "rank chain break: {} vs {}",
                w[0].right_rank(),
                w[1].left_rank()
            )));
        }
    }
    Ok(())
}

/// Contracts a chain of 3-axis cores into the full tensor of
/// `(N_1, .., N_k[, r_last])`; with `coeffs` (length = last right rank) the
/// trailing rank axis is contracted away, yielding the reconstruction of one
/// member of the spanned subspace.
pub fn tt_reconstruct(cores: &[TTCore], coeffs: Option<&[f64]>) -> Result<Tensor> {
    check_rank_chain(cores)?;
    if cores.iter().any(|c| c.is_operator_core()) {
        return Err(argument("tt_reconstruct expects 3-axis cores"));
    }
    // acc axes: (N_1, .., N_i, r_i); the leading rank-1 axis is dropped.
    let first = cores[0].tensor();
    let mut acc = first
        .clone()
        .reshape(vec![first.dims()[1], first.dims()[2]])?;
    for core in &cores[1..] {
        acc = contract(&acc, acc.order() - 1, core.tensor(), 0)?;
    }
    if let Some(v) = coeffs {
        let r = *acc.dims().last().unwrap();
        if v.len() != r {
            return Err(argument(format!(
                "coefficient length {} does not match final rank {}",
                v.len(),
                r
            )));
        }
        let vec = Tensor::new(vec![r], v.to_vec())?;
        acc = contract(&acc, acc.order() - 1, &vec, 0)?;
        // contract() leaves a trailing singleton only for scalars.
        if acc.order() > 1 && *acc.dims().last().unwrap() == 1 {
            let dims = acc.dims()[..acc.order() - 1].to_vec();
            acc = acc.reshape(dims)?;
        }
    } else if *acc.dims().last().unwrap() == 1 && acc.order() > 1 {
        let dims = acc.dims()[..acc.order() - 1].to_vec();
        acc = acc.reshape(dims)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_tensor(dims: Vec<usize>, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        Tensor::new(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn permute_identity() {
        let t = seeded_tensor(vec![2, 3, 4], 1);
        let out = permute_axes(&t, &[0, 1, 2]).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn permute_transpose() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = permute_axes(&t, &[1, 0]).unwrap();
        assert_eq!(out.dims(), &[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(out.get(&[j, i]), t.get(&[i, j]));
            }
        }
    }

    #[test]
    fn permute_round_trip_bit_exact() {
        let t = seeded_tensor(vec![2, 3, 4], 2);
        let perm = [2, 0, 1];
        let fwd = permute_axes(&t, &perm).unwrap();
        let back = permute_axes(&fwd, &inverse_perm(&perm)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn merge_all_axes_ordering() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = merge_axes(&t, &[2]).unwrap();
        assert_eq!(v.dims(), &[6]);
        // v[i*3 + j] == t[i, j]
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(v.get(&[i * 3 + j]), t.get(&[i, j]));
            }
        }
    }

    #[test]
    fn merge_nothing_is_identity() {
        let t = seeded_tensor(vec![2, 3, 4], 3);
        let out = merge_axes(&t, &[1, 1, 1]).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn merge_then_split_round_trip() {
        let t = seeded_tensor(vec![2, 3, 4], 4);
        let merged = merge_axes(&t, &[2, 1]).unwrap();
        assert_eq!(merged.dims(), &[6, 4]);
        let back = merged.reshape(vec![2, 3, 4]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn merge_bad_groups_rejected() {
        let t = seeded_tensor(vec![2, 3, 4], 5);
        assert!(merge_axes(&t, &[2]).is_err());
        assert!(merge_axes(&t, &[2, 2]).is_err());
    }

    #[test]
    fn contract_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = seeded_tensor(vec![2, 5], 6);
        let out = contract(&eye, 1, &t, 0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn contract_dot_product() {
        let u = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let v = Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let out = contract(&u, 0, &v, 0).unwrap();
        assert_eq!(out.dims(), &[1]);
        assert_eq!(out.data()[0], 32.0);
    }

    #[test]
    fn contract_vs_reshape_multiply_oracle() {
        // (2,3,4) x (4,5) contracted on the length-4 axes equals the dense
        // matrix product of the (6,4) reshape with the (4,5) matrix.
        let r = seeded_tensor(vec![2, 3, 4], 7);
        let s = seeded_tensor(vec![4, 5], 8);
        let out = contract(&r, 2, &s, 0).unwrap();
        assert_eq!(out.dims(), &[2, 3, 5]);
        let rm = merge_axes(&r, &[2, 1]).unwrap();
        let mut oracle = vec![0.0; 6 * 5];
        matmul(rm.data(), s.data(), &mut oracle, 6, 4, 5);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
    }

    #[test]
    fn contract_length_mismatch_rejected() {
        let r = seeded_tensor(vec![2, 3], 9);
        let s = seeded_tensor(vec![4, 5], 10);
        assert!(contract(&r, 1, &s, 0).is_err());
    }

    #[test]
    fn mode_contract_identity() {
        let t = seeded_tensor(vec![2, 3, 4], 11);
        let eye = Tensor::from_fn(vec![3, 3], |ij| if ij[0] == ij[1] { 1.0 } else { 0.0 });
        let out = mode_contract(&eye, &t, 1).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn mode_contract_matrix_product() {
        let a = seeded_tensor(vec![4, 2], 12);
        let b = seeded_tensor(vec![2, 5], 13);
        let out = mode_contract(&a, &b, 0).unwrap();
        let mut oracle = vec![0.0; 4 * 5];
        matmul(a.data(), b.data(), &mut oracle, 4, 2, 5);
        for (x, y) in out.data().iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
    }

    #[test]
    fn mode_contract_vs_permute_merge_oracle() {
        // Mode-k contraction equals: permute axis k first, merge the rest,
        // multiply, split, permute back.
        let m = seeded_tensor(vec![6, 3], 14);
        let t = seeded_tensor(vec![2, 3, 4], 15);
        let out = mode_contract(&m, &t, 1).unwrap();
        let perm = [1usize, 0, 2];
        let tp = permute_axes(&t, &perm).unwrap();
        let tm = merge_axes(&tp, &[1, 2]).unwrap();
        let mut prod = vec![0.0; 6 * 8];
        matmul(m.data(), tm.data(), &mut prod, 6, 3, 8);
        let oracle = permute_axes(
            &Tensor::new(vec![6, 2, 4], prod).unwrap(),
            &inverse_perm(&perm),
        )
        .unwrap();
        for (x, y) in out.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
    }

    #[test]
    fn mode_out_of_range_rejected() {
        let m = seeded_tensor(vec![2, 2], 16);
        let t = seeded_tensor(vec![2, 2], 17);
        assert!(mode_contract(&m, &t, 2).is_err());
    }

    #[test]
    fn kron_index_examples() {
        // 1-based spec example: N_b = 3, (2, 1) -> 4; 0-based: (1, 0) -> 3.
        let map = KronMap::new(4, 3).unwrap();
        assert_eq!(map.index(1, 0).unwrap(), 3);
        assert_eq!(map.index(0, 0).unwrap(), 0);
    }

    #[test]
    fn kron_bijection_exhaustive() {
        let map = KronMap::new(4, 5).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let m = map.index(i, j).unwrap();
                assert_eq!(map.index_inv(m).unwrap(), (i, j));
            }
        }
        assert!(map.index(4, 0).is_err());
        assert!(map.index_inv(20).is_err());
    }

    #[test]
    fn reconstruct_single_core() {
        let core = TTCore::from_parts(1, 4, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let out = tt_reconstruct(&[core], None).unwrap();
        assert_eq!(out.dims(), &[4]);
        assert_eq!(out.data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn reconstruct_rank_one_outer_product() {
        let u = [1.0, 2.0];
        let v = [3.0, -1.0, 0.5];
        let w = [2.0, 4.0];
        let cores = vec![
            TTCore::from_parts(1, 2, 1, u.to_vec()).unwrap(),
            TTCore::from_parts(1, 3, 1, v.to_vec()).unwrap(),
            TTCore::from_parts(1, 2, 1, w.to_vec()).unwrap(),
        ];
        let out = tt_reconstruct(&cores, None).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    let expect = u[i] * v[j] * w[k];
                    assert!((out.get(&[i, j, k]) - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rank_chain_break_rejected() {
        let cores = vec![
            TTCore::from_parts(1, 2, 2, vec![0.0; 4]).unwrap(),
            TTCore::from_parts(3, 2, 1, vec![0.0; 6]).unwrap(),
        ];
        assert!(tt_reconstruct(&cores, None).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let t = seeded_tensor(vec![3, 2, 5], 18);
        let dir = std::env::temp_dir().join("ttrb_tensor_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ttrb");
        t.write_ttrb(&path).unwrap();
        let back = Tensor::read_ttrb(&path).unwrap();
        assert_eq!(back, t);
    }
}
