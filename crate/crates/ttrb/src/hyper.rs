//! Hyper-reduction: the greedy empirical interpolation loop, space-time
//! MDEIM, and its tensor-train variant with forward/backward index sweeps.
//!
//! Interpolation matrices are kept as index vectors; every application of a
//! sampling operator is a row gather. The TT variant returns per-axis index
//! vectors paired tuple-wise: entry `q` of every axis vector belongs to
//! interpolation point `q`.

use crate::fe::SparsityMap;
use crate::reduce::{tpod, tt_svd, TTBasis};
use crate::sparse::DenseLu;
use crate::tensors::{contract, permute_axes, Tensor};
use crate::{argument, Error, Result};

/// Greedy EIM indices of an orthonormal-column matrix: the first index
/// maximizes `|phi[:, 0]|`; each later index maximizes the interpolation
/// residual of the next column against the previous ones. Ties break to the
/// smallest row index.
pub fn eim_loop(phi: &Tensor) -> Result<Vec<usize>> {
    if phi.order() != 2 {
        return Err(argument("eim_loop expects a matrix"));
    }
    let (m, r) = (phi.dims()[0], phi.dims()[1]);
    if r == 0 || m < r {
        return Err(argument("eim_loop needs at least as many rows as columns"));
    }
    let col = |j: usize| -> Vec<f64> { (0..m).map(|i| phi.get(&[i, j])).collect() };
    let argmax_abs = |v: &[f64]| -> usize {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        best
    };
    let mut indices = vec![argmax_abs(&col(0))];
    for q in 1..r {
        // Interpolation coefficients of column q on the chosen rows.
        let mut small = Tensor::zeros(vec![q, q]);
        let mut rhs = vec![0.0f64; q];
        for (a, &i) in indices.iter().enumerate() {
            for b in 0..q {
                small.set(&[a, b], phi.get(&[i, b]));
            }
            rhs[a] = phi.get(&[i, q]);
        }
        let lu = DenseLu::new(&small).map_err(|_| Error::Degenerate { column: q })?;
        let coeff = lu
            .solve(&rhs)
            .map_err(|_| Error::Degenerate { column: q })?;
        let mut resid = col(q);
        for b in 0..q {
            if coeff[b] == 0.0 {
                continue;
            }
            for i in 0..m {
                resid[i] -= coeff[b] * phi.get(&[i, b]);
            }
        }
        indices.push(argmax_abs(&resid));
    }
    Ok(indices)
}

/// Interpolation index sets for the two hyper-reduction flavors.
#[derive(Debug, Clone, PartialEq)]
pub enum InterpIndices {
    /// Tuple-wise per-axis indices (spatial axes then, if present, time):
    /// point `q` is `(axes[0][q], .., axes[last][q])`.
    Tt { axes: Vec<Vec<usize>> },
    /// Cartesian product of spatial and temporal index lists.
    St { space: Vec<usize>, time: Vec<usize> },
}

/// Sampling indices plus the factorized interpolation matrix `P^T Phi`.
#[derive(Debug)]
pub struct Interpolation {
    indices: InterpIndices,
    matrix: Tensor,
    lu: DenseLu,
    /// For the ST flavor: LU factors of the two Kronecker blocks.
    st_factors: Option<(DenseLu, DenseLu)>,
    chi: f64,
}

impl Interpolation {
    pub(crate) fn from_tt(axes: Vec<Vec<usize>>, matrix: Tensor) -> Result<Self> {
        let lu = DenseLu::new(&matrix).map_err(|_| Error::Degenerate {
            column: matrix.dims()[1],
        })?;
        let chi = lu.inverse_frobenius_norm();
        Ok(Self {
            indices: InterpIndices::Tt { axes },
            matrix,
            lu,
            st_factors: None,
            chi,
        })
    }

    pub(crate) fn from_st(
        space: Vec<usize>,
        time: Vec<usize>,
        a_s: Tensor,
        a_t: Tensor,
    ) -> Result<Self> {
        let lu_s = DenseLu::new(&a_s).map_err(|_| Error::Degenerate {
            column: a_s.dims()[1],
        })?;
        let lu_t = DenseLu::new(&a_t).map_err(|_| Error::Degenerate {
            column: a_t.dims()[1],
        })?;
        let chi = lu_s.inverse_frobenius_norm() * lu_t.inverse_frobenius_norm();
        let (rs, rt) = (a_s.dims()[0], a_t.dims()[0]);
        let matrix = Tensor::from_fn(vec![rs * rt, rs * rt], |ij| {
            let (i, j) = (ij[0], ij[1]);
            a_s.get(&[i / rt, j / rt]) * a_t.get(&[i % rt, j % rt])
        });
        let lu = DenseLu::new(&matrix).map_err(|_| Error::Degenerate { column: rs * rt })?;
        Ok(Self {
            indices: InterpIndices::St { space, time },
            matrix,
            lu,
            st_factors: Some((lu_s, lu_t)),
            chi,
        })
    }

    pub fn indices(&self) -> &InterpIndices {
        &self.indices
    }

    /// The interpolation matrix `P^T Phi` (Kronecker-expanded for ST).
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Number of interpolation points / affine terms.
    pub fn n_points(&self) -> usize {
        self.matrix.dims()[0]
    }

    /// `||(P^T Phi)^{-1}||_F` diagnostic.
    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn condition_estimate(&self) -> f64 {
        self.lu.condition_estimate()
    }

    /// Reduced coefficients from the sampled entries: solves the small
    /// interpolation system. For ST the samples are ordered with the
    /// spatial index slow and temporal index fast.
    pub fn coefficients(&self, sampled: &[f64]) -> Result<Vec<f64>> {
        match &self.st_factors {
            None => self.lu.solve(sampled),
            Some((lu_s, lu_t)) => {
                let (rs, rt) = (lu_s.n(), lu_t.n());
                if sampled.len() != rs * rt {
                    return Err(argument("sampled entry count mismatch"));
                }
                // (A_s (x) A_t) x = b  <=>  A_s Y = B, A_t X^T = Y^T.
                let mut y = vec![0.0f64; rs * rt];
                for j in 0..rt {
                    let col: Vec<f64> = (0..rs).map(|i| sampled[i * rt + j]).collect();
                    let sol = lu_s.solve(&col)?;
                    for i in 0..rs {
                        y[i * rt + j] = sol[i];
                    }
                }
                let mut x = vec![0.0f64; rs * rt];
                for i in 0..rs {
                    let row: Vec<f64> = (0..rt).map(|j| y[i * rt + j]).collect();
                    let sol = lu_t.solve(&row)?;
                    for j in 0..rt {
                        x[i * rt + j] = sol[j];
                    }
                }
                Ok(x)
            }
        }
    }
}

/// Basis of an affine expansion: a TT decomposition or the ST pair.
#[derive(Debug, Clone)]
pub enum HyperBasis {
    Tt(TTBasis),
    St { phi_s: Tensor, phi_t: Tensor },
}

/// Affine approximation of a parameterized quantity: hyper basis,
/// interpolation data, and accuracy diagnostics.
#[derive(Debug)]
pub struct AffineDecomposition {
    pub basis: HyperBasis,
    pub interpolation: Interpolation,
    /// Number of compressed axes in the underlying reduction.
    pub k_axes: usize,
    pub eps: f64,
}

impl AffineDecomposition {
    /// Number of affine terms in the expansion.
    pub fn n_terms(&self) -> usize {
        match &self.basis {
            HyperBasis::Tt(b) => b.dimension(),
            HyperBasis::St { phi_s, phi_t } => phi_s.dims()[1] * phi_t.dims()[1],
        }
    }

    pub fn chi(&self) -> f64 {
        self.interpolation.chi()
    }

    /// Dense basis matrix `(prod N_i, n_terms)`; desk-scale diagnostics
    /// and reconstruction.
    pub fn merged_basis(&self) -> Result<Tensor> {
        match &self.basis {
            HyperBasis::Tt(b) => b.merged(),
            HyperBasis::St { phi_s, phi_t } => {
                let (ns, rs) = (phi_s.dims()[0], phi_s.dims()[1]);
                let (nt, rt) = (phi_t.dims()[0], phi_t.dims()[1]);
                Ok(Tensor::from_fn(vec![ns * nt, rs * rt], |ij| {
                    let (i, j) = (ij[0], ij[1]);
                    phi_s.get(&[i / nt, j / rt]) * phi_t.get(&[i % nt, j % rt])
                }))
            }
        }
    }

    /// Reconstructs the full quantity from reduced coefficients.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Tensor> {
        match &self.basis {
            HyperBasis::Tt(b) => crate::tensors::tt_reconstruct(b.cores(), Some(coeffs)),
            HyperBasis::St { phi_s, phi_t } => {
                let (rs, rt) = (phi_s.dims()[1], phi_t.dims()[1]);
                if coeffs.len() != rs * rt {
                    return Err(argument("coefficient length mismatch"));
                }
                let x = Tensor::new(vec![rs, rt], coeffs.to_vec())?;
                let sx = contract(phi_s, 1, &x, 0)?;
                let phi_t_t = permute_axes(phi_t, &[1, 0])?;
                contract(&sx, 1, &phi_t_t, 0)
            }
        }
    }

    /// Flat row indices of the interpolation points in the merged-axes
    /// ordering (first axis slowest).
    pub fn flat_indices(&self, dims: &[usize]) -> Result<Vec<usize>> {
        match self.interpolation.indices() {
            InterpIndices::Tt { axes } => {
                if axes.len() != dims.len() {
                    return Err(argument("axis count mismatch"));
                }
                let n = axes[0].len();
                let mut out = Vec::with_capacity(n);
                for q in 0..n {
                    let mut flat = 0usize;
                    for (k, axis) in axes.iter().enumerate() {
                        flat = flat * dims[k] + axis[q];
                    }
                    out.push(flat);
                }
                Ok(out)
            }
            InterpIndices::St { space, time } => {
                if dims.len() != 2 {
                    return Err(argument("St indices expand over (space, time)"));
                }
                let mut out = Vec::with_capacity(space.len() * time.len());
                for &s in space {
                    for &t in time {
                        out.push(s * dims[1] + t);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Space-time MDEIM: l2 TPOD of the snapshots followed by one EIM loop per
/// basis. Snapshot axes are `(space, time, parameter)`.
pub fn st_mdeim(l: &Tensor, eps: f64) -> Result<AffineDecomposition> {
    if l.order() != 3 {
        return Err(argument("st_mdeim expects axes (space, time, parameter)"));
    }
    let out = tpod(l, None, eps)?;
    let phi_s = out.basis.phi_s;
    let phi_t = out.basis.phi_t;
    let idx_s = eim_loop(&phi_s)?;
    let idx_t = if phi_t.dims()[0] == 1 {
        vec![0usize]
    } else {
        eim_loop(&phi_t)?
    };
    let gather = |phi: &Tensor, idx: &[usize]| {
        Tensor::from_fn(vec![idx.len(), phi.dims()[1]], |ij| {
            phi.get(&[idx[ij[0]], ij[1]])
        })
    };
    let a_s = gather(&phi_s, &idx_s);
    let a_t = gather(&phi_t, &idx_t);
    let interpolation = Interpolation::from_st(idx_s, idx_t, a_s, a_t)?;
    Ok(AffineDecomposition {
        basis: HyperBasis::St { phi_s, phi_t },
        interpolation,
        k_axes: 2,
        eps,
    })
}

/// TT-MDEIM: Euclidean TT-SVD of the split-axes snapshots, then a forward
/// sweep interpolating each accumulated core product and a backward sweep
/// splitting the composite indices into per-axis index vectors. The final
/// forward-sweep product is the interpolation matrix `P^T Phi`.
pub fn tt_mdeim(l: &Tensor, eps: f64) -> Result<AffineDecomposition> {
    if l.order() < 2 {
        return Err(argument("tt_mdeim needs at least one snapshot axis"));
    }
    let out = tt_svd(l, eps, false)?;
    let basis = out.basis;
    let k = basis.cores().len();
    // Forward sweep.
    let mut forward: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut carried: Option<Tensor> = None;
    for (c, core) in basis.cores().iter().enumerate() {
        let acc = match &carried {
            None => core.unfold(),
            Some(prev) => {
                let prod = contract(prev, 1, core.tensor(), 0)?;
                let rows = prod.dims()[0] * prod.dims()[1];
                prod.reshape(vec![rows, core.right_rank()])?
            }
        };
        let p = eim_loop(&acc)
            .map_err(|e| Error::Consistency(format!("forward sweep, level {c}: {e}")))?;
        let gathered = Tensor::from_fn(vec![p.len(), acc.dims()[1]], |ij| {
            acc.get(&[p[ij[0]], ij[1]])
        });
        forward.push(p);
        carried = Some(gathered);
    }
    let matrix = carried.expect("at least one core");
    // Backward sweep: split composite indices and compose through levels.
    let lens = basis.axis_lens();
    let mut axes = vec![Vec::new(); k];
    let mut current = forward[k - 1].clone();
    for c in (1..k).rev() {
        let n_c = lens[c];
        let mut rank_sel = Vec::with_capacity(current.len());
        let mut phys = Vec::with_capacity(current.len());
        for &comp in &current {
            rank_sel.push(comp / n_c);
            phys.push(comp % n_c);
        }
        axes[c] = phys;
        current = rank_sel.iter().map(|&a| forward[c - 1][a]).collect();
    }
    axes[0] = current;
    let interpolation = Interpolation::from_tt(axes, matrix)?;
    Ok(AffineDecomposition {
        basis: HyperBasis::Tt(basis),
        interpolation,
        k_axes: k,
        eps,
    })
}

/// Rearranges flat nonzero-vector snapshots `(N_z[, t], mu)` into the
/// split-axes tensor `(z_1, .., z_d[, t], mu)` through the sparsity map.
pub fn jacobian_snapshots_to_split_axes(kz: &Tensor, map: &SparsityMap) -> Result<Tensor> {
    if kz.dims()[0] != map.n_z() {
        return Err(Error::Consistency(format!(
            "snapshots carry {} nonzeros, map expects {}",
            kz.dims()[0],
            map.n_z()
        )));
    }
    let rest: usize = kz.dims()[1..].iter().product();
    let counts = map.nz_counts();
    let mut dims = counts.clone();
    dims.extend_from_slice(&kz.dims()[1..]);
    let mut out = Tensor::zeros(dims);
    let mut tuple = vec![0usize; counts.len()];
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let pos = map.tuple_to_pos(&tuple)?;
        let src = &kz.data()[pos * rest..(pos + 1) * rest];
        out.data_mut()[flat * rest..(flat + 1) * rest].copy_from_slice(src);
        for k in (0..tuple.len()).rev() {
            tuple[k] += 1;
            if tuple[k] < counts[k] {
                break;
            }
            tuple[k] = 0;
        }
    }
    Ok(out)
}

/// Inverse rearrangement: split-axes tensor back to flat nonzero vectors.
pub fn split_axes_to_flat(split: &Tensor, map: &SparsityMap) -> Result<Tensor> {
    let d = map.d();
    let counts = map.nz_counts();
    if split.dims()[..d] != counts[..] {
        return Err(argument("split tensor does not match the sparsity map"));
    }
    let rest: usize = split.dims()[d..].iter().product();
    let mut dims = vec![map.n_z()];
    dims.extend_from_slice(&split.dims()[d..]);
    let mut out = Tensor::zeros(dims);
    let mut tuple = vec![0usize; d];
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let pos = map.tuple_to_pos(&tuple)?;
        let src = &split.data()[flat * rest..(flat + 1) * rest];
        out.data_mut()[pos * rest..(pos + 1) * rest].copy_from_slice(src);
        for k in (0..d).rev() {
            tuple[k] += 1;
            if tuple[k] < counts[k] {
                break;
            }
            tuple[k] = 0;
        }
    }
    Ok(out)
}

/// Online coefficient evaluation per the interpolation system; the sampled
/// entries must be the quantity values at the interpolation points.
pub fn online_coefficients(interp: &Interpolation, sampled: &[f64]) -> Result<Vec<f64>> {
    interp.coefficients(sampled)
}
