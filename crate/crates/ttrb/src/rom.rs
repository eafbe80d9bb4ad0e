//! Offline Galerkin projection of the hyper-reduced residual and Jacobian
//! onto the reduced subspace, the online reduced solve, error metrics, and
//! the a posteriori estimator.
//!
//! The space-time operator of the theta scheme is block bi-diagonal. Its
//! diagonal blocks are the step operators learned by the hyper-reduction;
//! the subdiagonal blocks are `(1-theta)/theta D(t_{n-1}) - dt^-1/theta M`,
//! so the reduced system combines a diagonal projection, a time-shifted
//! projection of the same affine terms, and an exact mass-shift projection.
//! Nothing stored here scales with the number of spatial dofs beyond the
//! basis cores themselves.

use std::time::{Duration, Instant};

use crate::fe::{mass_1d, KronSum, SparsityMap};
use crate::fom::{EntryEvaluator, ProblemSpec};
use crate::hyper::{AffineDecomposition, HyperBasis, InterpIndices};
use crate::reduce::{ReducedBasis, STBasis, TTBasis};
use crate::sparse::{symmetric_eigen, DenseLu, SparseMatrix};
use crate::tensors::{contract, permute_axes, TTCore, Tensor};
use crate::{argument, Error, Result};

/// Projected affine expansions plus the reduced basis: everything the
/// online phase needs.
pub struct ReducedModel {
    pub basis: ReducedBasis,
    /// Diagonal-block Galerkin projection `(r, r_K, r)`.
    pub phi_k_diag: Tensor,
    /// Time-shifted projection of the same terms; transient only.
    pub phi_k_shift: Option<Tensor>,
    /// Exact mass-shift projection `(r, r)`; transient only.
    pub phi_m_shift: Option<Tensor>,
    /// Projected residual basis `(r, r_L)`.
    pub phi_l: Tensor,
    pub k_hyper: AffineDecomposition,
    pub l_hyper: AffineDecomposition,
    pub theta: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl ReducedModel {
    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    pub fn steady(&self) -> bool {
        self.n_steps == 0
    }
}

fn tt_cores<'a>(hyper: &'a AffineDecomposition, what: &str) -> Result<&'a TTBasis> {
    match &hyper.basis {
        HyperBasis::Tt(b) => Ok(b),
        HyperBasis::St { .. } => Err(argument(format!("{what}: expected a TT hyper basis"))),
    }
}

/// Pairwise core contraction `W'[a',b'] = sum_{a,b,n} W[a,b] B[a,n,a'] H[b,n,b']`.
fn pair_step(w: &Tensor, basis_core: &TTCore, hyper_core: &TTCore) -> Result<Tensor> {
    if basis_core.axis_len() != hyper_core.axis_len() {
        return Err(argument(
            "axis length mismatch between basis and hyper cores",
        ));
    }
    // (a,b) x (a,n,a') -> (b,n,a')
    let t1 = contract(w, 0, basis_core.tensor(), 0)?;
    // (b,n,a') x (b,n,b') over merged (b,n) -> (a',b')
    let rows = t1.dims()[0] * t1.dims()[1];
    let t1m = t1.reshape(vec![rows, basis_core.right_rank()])?;
    let h = hyper_core.unfold();
    let t1t = permute_axes(&t1m, &[1, 0])?;
    contract(&t1t, 1, &h, 0)
}

/// Core-by-core projection of the residual basis onto the solution basis:
/// `Phi^T Phi^L` computed without materializing merged matrices.
pub fn project_residual_tt(basis: &TTBasis, hyper: &AffineDecomposition) -> Result<Tensor> {
    let hyper_tt = tt_cores(hyper, "project_residual_tt")?;
    if basis.cores().len() != hyper_tt.cores().len() {
        return Err(argument("axis structure mismatch between bases"));
    }
    let mut w = Tensor::new(vec![1, 1], vec![1.0])?;
    for (bc, hc) in basis.cores().iter().zip(hyper_tt.cores()) {
        w = pair_step(&w, bc, hc)?;
    }
    Ok(w)
}

/// One spatial step of the triple chain: contributions of every 1-D
/// pattern entry `(n, m)` with its z-index, skipping structural zeros.
fn triple_step(
    w: &Tensor,
    basis_core: &TTCore,
    hyper_core: &TTCore,
    pattern: &[(usize, usize)],
) -> Result<Tensor> {
    let (ra, rb, rc) = (w.dims()[0], w.dims()[1], w.dims()[2]);
    let (ra2, rb2, rc2) = (
        basis_core.right_rank(),
        hyper_core.right_rank(),
        basis_core.right_rank(),
    );
    let n_i = basis_core.axis_len();
    debug_assert_eq!(ra, basis_core.left_rank());
    debug_assert_eq!(rb, hyper_core.left_rank());
    // s1[n][(b, c, a')] = sum_a W[a,b,c] basis[a,n,a']
    let mut s1 = vec![0.0f64; n_i * rb * rc * ra2];
    for a in 0..ra {
        for n in 0..n_i {
            for ap in 0..ra2 {
                let bv = basis_core.at(a, n, ap);
                if bv == 0.0 {
                    continue;
                }
                for b in 0..rb {
                    for c in 0..rc {
                        s1[((n * rb + b) * rc + c) * ra2 + ap] += w.get(&[a, b, c]) * bv;
                    }
                }
            }
        }
    }
    let mut out = Tensor::zeros(vec![ra2, rb2, rc2]);
    let mut s2 = vec![0.0f64; rc * ra2 * rb2];
    for (z, &(n, m)) in pattern.iter().enumerate() {
        // s2[(c, a', b')] = sum_b s1[n][(b, c, a')] hyper[b, z, b']
        s2.iter_mut().for_each(|v| *v = 0.0);
        for b in 0..rb {
            for bp in 0..rb2 {
                let hv = hyper_core.at(b, z, bp);
                if hv == 0.0 {
                    continue;
                }
                for c in 0..rc {
                    for ap in 0..ra2 {
                        s2[(c * ra2 + ap) * rb2 + bp] +=
                            s1[((n * rb + b) * rc + c) * ra2 + ap] * hv;
                    }
                }
            }
        }
        // out[a', b', c'] += sum_c s2[(c, a', b')] basis[c, m, c']
        for c in 0..rc {
            for cp in 0..rc2 {
                let bv = basis_core.at(c, m, cp);
                if bv == 0.0 {
                    continue;
                }
                for ap in 0..ra2 {
                    for bp in 0..rb2 {
                        out.data_mut()[(ap * rb2 + bp) * rc2 + cp] +=
                            s2[(c * ra2 + ap) * rb2 + bp] * bv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Temporal combination of the triple chain: diagonal blocks pair all three
/// factors at the same step; the shifted variant puts the operator and the
/// right basis factor one step behind the row block.
fn triple_temporal(
    w: &Tensor,
    basis_core: &TTCore,
    hyper_core: &TTCore,
    shifted: bool,
) -> Result<Tensor> {
    let (ra, rb, rc) = (w.dims()[0], w.dims()[1], w.dims()[2]);
    let n_t = basis_core.axis_len();
    if hyper_core.axis_len() != n_t {
        return Err(argument("temporal axis mismatch"));
    }
    let (rt, rkt) = (basis_core.right_rank(), hyper_core.right_rank());
    let mut out = Tensor::zeros(vec![rt, rkt, rt]);
    let start = if shifted { 1 } else { 0 };
    for n in start..n_t {
        let n_op = if shifted { n - 1 } else { n };
        for a in 0..ra {
            for at in 0..rt {
                let bv = basis_core.at(a, n, at);
                if bv == 0.0 {
                    continue;
                }
                for b in 0..rb {
                    for bt in 0..rkt {
                        let hv = hyper_core.at(b, n_op, bt);
                        if hv == 0.0 {
                            continue;
                        }
                        for c in 0..rc {
                            let wv = w.get(&[a, b, c]);
                            if wv == 0.0 {
                                continue;
                            }
                            for ct in 0..rt {
                                out.data_mut()[(at * rkt + bt) * rt + ct] +=
                                    wv * bv * hv * basis_core.at(c, n_op, ct);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Core-wise Galerkin projection of the hyper-reduced Jacobian: nested
/// contractions over the rank triples, using the 1-D stencil sparsity.
/// Returns the diagonal-block projection and, for transient problems, the
/// time-shifted one.
pub fn project_jacobian_tt(
    basis: &TTBasis,
    hyper: &AffineDecomposition,
    map: &SparsityMap,
    transient: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let hyper_tt = tt_cores(hyper, "project_jacobian_tt")?;
    let d = map.d();
    let expected = d + transient as usize;
    if basis.cores().len() != expected || hyper_tt.cores().len() != expected {
        return Err(argument(
            "axis structure mismatch between basis and hyper bases",
        ));
    }
    let mut w = Tensor::new(vec![1, 1, 1], vec![1.0])?;
    for i in 0..d {
        if hyper_tt.cores()[i].axis_len() != map.pattern(i).len() {
            return Err(argument(format!(
                "hyper core {i} does not match the sparsity pattern"
            )));
        }
        w = triple_step(&w, &basis.cores()[i], &hyper_tt.cores()[i], map.pattern(i))?;
    }
    if transient {
        let diag = triple_temporal(&w, &basis.cores()[d], &hyper_tt.cores()[d], false)?;
        let shift = triple_temporal(&w, &basis.cores()[d], &hyper_tt.cores()[d], true)?;
        Ok((diag, Some(shift)))
    } else {
        Ok((w, None))
    }
}

/// Projection of the exact (Kronecker) mass matrix with the temporal shift:
/// the mu-independent part of the subdiagonal blocks.
pub fn project_mass_shift_tt(basis: &TTBasis, mass: &[SparseMatrix]) -> Result<Tensor> {
    let d = mass.len();
    if basis.cores().len() != d + 1 {
        return Err(argument("mass shift projection needs a transient basis"));
    }
    let mut w = Tensor::new(vec![1, 1], vec![1.0])?;
    for (i, m) in mass.iter().enumerate() {
        let core = &basis.cores()[i];
        let (n_i, ra2) = (core.axis_len(), core.right_rank());
        // t1[(c, n, a')] = sum_a W[a,c] basis[a,n,a']
        let t1 = contract(&w, 0, core.tensor(), 0)?;
        // t2[(c, m, a')] = sum_n M[n,m] t1[c,n,a']
        let mut t2 = vec![0.0f64; w.dims()[1] * n_i * ra2];
        for mm in 0..n_i {
            let (rows, vals) = m.col(mm);
            for (&n, &v) in rows.iter().zip(vals) {
                for c in 0..w.dims()[1] {
                    for ap in 0..ra2 {
                        t2[(c * n_i + mm) * ra2 + ap] += v * t1.get(&[c, n, ap]);
                    }
                }
            }
        }
        // w'[a',c'] = sum_{c,m} t2[c,m,a'] basis[c,m,c']
        let mut next = Tensor::zeros(vec![ra2, ra2]);
        for c in 0..w.dims()[1] {
            for mm in 0..n_i {
                for ap in 0..ra2 {
                    let tv = t2[(c * n_i + mm) * ra2 + ap];
                    if tv == 0.0 {
                        continue;
                    }
                    for cp in 0..ra2 {
                        next.data_mut()[ap * ra2 + cp] += tv * core.at(c, mm, cp);
                    }
                }
            }
        }
        w = next;
    }
    // Temporal shift: left factor at n, right factor at n-1.
    let core = basis.cores().last().unwrap();
    let (ra, n_t, rt) = (core.left_rank(), core.axis_len(), core.right_rank());
    let mut out = Tensor::zeros(vec![rt, rt]);
    for n in 1..n_t {
        for a in 0..ra {
            for at in 0..rt {
                let bv = core.at(a, n, at);
                if bv == 0.0 {
                    continue;
                }
                for c in 0..ra {
                    let wv = w.get(&[a, c]);
                    if wv == 0.0 {
                        continue;
                    }
                    for ct in 0..rt {
                        out.data_mut()[at * rt + ct] += wv * bv * core.at(c, n - 1, ct);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn st_bases<'a>(hyper: &'a AffineDecomposition, what: &str) -> Result<(&'a Tensor, &'a Tensor)> {
    match &hyper.basis {
        HyperBasis::St { phi_s, phi_t } => Ok((phi_s, phi_t)),
        HyperBasis::Tt(_) => Err(argument(format!("{what}: expected an ST hyper basis"))),
    }
}

/// ST residual projection: Kronecker combination of the spatial and
/// temporal Galerkin factors.
pub fn project_residual_st(basis: &STBasis, hyper: &AffineDecomposition) -> Result<Tensor> {
    let (phi_ls, phi_lt) = st_bases(hyper, "project_residual_st")?;
    if basis.phi_s.dims()[0] != phi_ls.dims()[0] || basis.phi_t.dims()[0] != phi_lt.dims()[0] {
        return Err(argument("axis structure mismatch between bases"));
    }
    let s = contract(&permute_axes(&basis.phi_s, &[1, 0])?, 1, phi_ls, 0)?;
    let t = contract(&permute_axes(&basis.phi_t, &[1, 0])?, 1, phi_lt, 0)?;
    let (rs, rls) = (s.dims()[0], s.dims()[1]);
    let (rt, rlt) = (t.dims()[0], t.dims()[1]);
    Ok(Tensor::from_fn(vec![rs * rt, rls * rlt], |ij| {
        let (i, j) = (ij[0], ij[1]);
        s.get(&[i / rt, j / rlt]) * t.get(&[i % rt, j % rlt])
    }))
}

/// ST Jacobian projection: per spatial term, a sparse congruence
/// `Phi_s^T K_i Phi_s`; temporal factors pair the step (diagonal) or shift
/// it (subdiagonal).
pub fn project_jacobian_st(
    basis: &STBasis,
    hyper: &AffineDecomposition,
    map: &SparsityMap,
    transient: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let (phi_ks, phi_kt) = st_bases(hyper, "project_jacobian_st")?;
    if phi_ks.dims()[0] != map.n_z() {
        return Err(argument(
            "hyper spatial basis does not match the sparsity pattern",
        ));
    }
    let (rs, rks) = (basis.phi_s.dims()[1], phi_ks.dims()[1]);
    let (rt, rkt) = (basis.phi_t.dims()[1], phi_kt.dims()[1]);
    let n_t = basis.phi_t.dims()[0];
    // Spatial congruences via the nonzero coordinates.
    let mut spatial = vec![Tensor::zeros(vec![rs, rs]); rks];
    for pos in 0..map.n_z() {
        let (r, c) = map.pos_coords(pos)?;
        for (i_s, s) in spatial.iter_mut().enumerate() {
            let v = phi_ks.get(&[pos, i_s]);
            if v == 0.0 {
                continue;
            }
            for a in 0..rs {
                let ba = basis.phi_s.get(&[r, a]);
                if ba == 0.0 {
                    continue;
                }
                for b in 0..rs {
                    s.data_mut()[a * rs + b] += v * ba * basis.phi_s.get(&[c, b]);
                }
            }
        }
    }
    let temporal = |shifted: bool| -> Tensor {
        let mut t = Tensor::zeros(vec![rt, rkt, rt]);
        let start = if shifted { 1 } else { 0 };
        for n in start..n_t {
            let n_op = if shifted { n - 1 } else { n };
            for a in 0..rt {
                let ba = basis.phi_t.get(&[n, a]);
                for it in 0..rkt {
                    let hv = phi_kt.get(&[n_op, it]);
                    if hv == 0.0 {
                        continue;
                    }
                    for b in 0..rt {
                        t.data_mut()[(a * rkt + it) * rt + b] +=
                            ba * hv * basis.phi_t.get(&[n_op, b]);
                    }
                }
            }
        }
        t
    };
    let assemble = |t_fac: &Tensor| -> Tensor {
        let r = rs * rt;
        let rk = rks * rkt;
        Tensor::from_fn(vec![r, rk, r], |idx| {
            let (i, k, j) = (idx[0], idx[1], idx[2]);
            let (a_s, a_t) = (i / rt, i % rt);
            let (i_s, i_t) = (k / rkt, k % rkt);
            let (b_s, b_t) = (j / rt, j % rt);
            spatial[i_s].get(&[a_s, b_s]) * t_fac.get(&[a_t, i_t, b_t])
        })
    };
    let diag = assemble(&temporal(false));
    let shift = if transient {
        Some(assemble(&temporal(true)))
    } else {
        None
    };
    Ok((diag, shift))
}

/// ST mass-shift projection `(Phi_s^T M Phi_s) (x) (shift temporal Gram)`.
pub fn project_mass_shift_st(basis: &STBasis, mass: &SparseMatrix) -> Result<Tensor> {
    let rs = basis.phi_s.dims()[1];
    let rt = basis.phi_t.dims()[1];
    let n_t = basis.phi_t.dims()[0];
    let m_phi = mass.mul_dense(&basis.phi_s)?;
    let s = contract(&permute_axes(&basis.phi_s, &[1, 0])?, 1, &m_phi, 0)?;
    let mut t = Tensor::zeros(vec![rt, rt]);
    for n in 1..n_t {
        for a in 0..rt {
            for b in 0..rt {
                t.data_mut()[a * rt + b] += basis.phi_t.get(&[n, a]) * basis.phi_t.get(&[n - 1, b]);
            }
        }
    }
    let r = rs * rt;
    Ok(Tensor::from_fn(vec![r, r], |ij| {
        let (i, j) = (ij[0], ij[1]);
        s.get(&[i / rt, j / rt]) * t.get(&[i % rt, j % rt])
    }))
}

/// Builds the full reduced model from a basis and the two affine
/// decompositions.
pub fn build_reduced_model(
    spec: &ProblemSpec,
    basis: ReducedBasis,
    k_hyper: AffineDecomposition,
    l_hyper: AffineDecomposition,
    map: &SparsityMap,
) -> Result<ReducedModel> {
    let transient = !spec.steady();
    let mass: Vec<SparseMatrix> = spec
        .space
        .grids()
        .iter()
        .map(mass_1d)
        .collect::<Result<_>>()?;
    let (phi_k_diag, phi_k_shift, phi_m_shift, phi_l) = match &basis {
        ReducedBasis::Tt(b) => {
            let (diag, shift) = project_jacobian_tt(b, &k_hyper, map, transient)?;
            let m_shift = if transient {
                Some(project_mass_shift_tt(b, &mass)?)
            } else {
                None
            };
            (diag, shift, m_shift, project_residual_tt(b, &l_hyper)?)
        }
        ReducedBasis::St(b) => {
            let (diag, shift) = project_jacobian_st(b, &k_hyper, map, transient)?;
            let m_shift = if transient {
                let mut m = mass[0].clone();
                for f in &mass[1..] {
                    m = crate::sparse::kron_sparse(&m, f)?;
                }
                Some(project_mass_shift_st(b, &m)?)
            } else {
                None
            };
            (diag, shift, m_shift, project_residual_st(b, &l_hyper)?)
        }
    };
    Ok(ReducedModel {
        basis,
        phi_k_diag,
        phi_k_shift,
        phi_m_shift,
        phi_l,
        k_hyper,
        l_hyper,
        theta: spec.theta,
        dt: spec.dt(),
        n_steps: spec.n_steps,
    })
}

/// Interpolation points of the Jacobian resolved to global matrix entries
/// and 1-based time indices.
fn jacobian_sample_points(
    hyper: &AffineDecomposition,
    map: &SparsityMap,
    transient: bool,
) -> Result<Vec<(usize, usize, usize)>> {
    let d = map.d();
    match hyper.interpolation.indices() {
        InterpIndices::Tt { axes } => {
            let expected = d + transient as usize;
            if axes.len() != expected {
                return Err(argument("jacobian interpolation axis mismatch"));
            }
            let n = axes[0].len();
            let mut out = Vec::with_capacity(n);
            for q in 0..n {
                let tuple: Vec<usize> = (0..d).map(|j| axes[j][q]).collect();
                let (r, c) = map.tuple_to_coords(&tuple)?;
                let t = if transient { axes[d][q] + 1 } else { 1 };
                out.push((r, c, t));
            }
            Ok(out)
        }
        InterpIndices::St { space, time } => {
            let mut out = Vec::with_capacity(space.len() * time.len());
            for &pos in space {
                let (r, c) = map.pos_coords(pos)?;
                for &t in time {
                    out.push((r, c, if transient { t + 1 } else { 1 }));
                }
            }
            Ok(out)
        }
    }
}

/// Residual interpolation points as (free dof, 1-based time index).
fn residual_sample_points(
    hyper: &AffineDecomposition,
    free_counts: &[usize],
    transient: bool,
) -> Result<Vec<(usize, usize)>> {
    let d = free_counts.len();
    match hyper.interpolation.indices() {
        InterpIndices::Tt { axes } => {
            let expected = d + transient as usize;
            if axes.len() != expected {
                return Err(argument("residual interpolation axis mismatch"));
            }
            let n = axes[0].len();
            let mut out = Vec::with_capacity(n);
            for q in 0..n {
                let mut flat = 0usize;
                for j in 0..d {
                    flat = flat * free_counts[j] + axes[j][q];
                }
                let t = if transient { axes[d][q] + 1 } else { 1 };
                out.push((flat, t));
            }
            Ok(out)
        }
        InterpIndices::St { space, time } => {
            let mut out = Vec::with_capacity(space.len() * time.len());
            for &s in space {
                for &t in time {
                    out.push((s, if transient { t + 1 } else { 1 }));
                }
            }
            Ok(out)
        }
    }
}

/// Online driver: entry evaluators plus resolved interpolation points.
pub struct OnlineSolver<'a> {
    model: &'a ReducedModel,
    spec: &'a ProblemSpec,
    evaluator: EntryEvaluator<'a>,
    k_points: Vec<(usize, usize, usize)>,
    l_points: Vec<(usize, usize)>,
}

/// Result of one online solve.
pub struct OnlineSolution {
    /// Reduced coordinates in the basis.
    pub coords: Vec<f64>,
    /// Reconstructed split-axes solution `(N_1, .., N_d[, N_t])`.
    pub solution: Tensor,
    pub wall: Duration,
    pub condition_estimate: f64,
}

impl<'a> OnlineSolver<'a> {
    pub fn new(model: &'a ReducedModel, spec: &'a ProblemSpec, map: &SparsityMap) -> Result<Self> {
        let transient = !spec.steady();
        let k_points = jacobian_sample_points(&model.k_hyper, map, transient)?;
        let l_points =
            residual_sample_points(&model.l_hyper, &spec.space.free_counts(), transient)?;
        Ok(Self {
            model,
            spec,
            evaluator: EntryEvaluator::new(spec)?,
            k_points,
            l_points,
        })
    }

    /// Assembles and solves the reduced system for one parameter, then
    /// reconstructs the full solution.
    pub fn solve(&self, mu: &[f64]) -> Result<OnlineSolution> {
        let start = Instant::now();
        let model = self.model;
        // MDEIM coefficients from sampled entries.
        let k_samples: Vec<f64> = self
            .k_points
            .iter()
            .map(|&(r, c, t)| self.evaluator.step_matrix_entry(mu, t, r, c))
            .collect();
        let k_coeff = model.k_hyper.interpolation.coefficients(&k_samples)?;
        let l_samples: Vec<f64> = self
            .l_points
            .iter()
            .map(|&(row, t)| self.evaluator.residual_entry(mu, t, row))
            .collect();
        let l_coeff = model.l_hyper.interpolation.coefficients(&l_samples)?;

        let r = model.dimension();
        let rk = model.phi_k_diag.dims()[1];
        let mut k_red = Tensor::zeros(vec![r, r]);
        for b in 0..rk {
            let w = k_coeff[b];
            if w == 0.0 {
                continue;
            }
            for i in 0..r {
                for j in 0..r {
                    k_red.data_mut()[i * r + j] += w * model.phi_k_diag.get(&[i, b, j]);
                }
            }
        }
        if let Some(shift) = &model.phi_k_shift {
            let factor = (1.0 - model.theta) / model.theta;
            if factor != 0.0 {
                for b in 0..rk {
                    let w = factor * k_coeff[b];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..r {
                        for j in 0..r {
                            k_red.data_mut()[i * r + j] += w * shift.get(&[i, b, j]);
                        }
                    }
                }
            }
        }
        if let Some(m_shift) = &model.phi_m_shift {
            let factor = -1.0 / (model.theta * model.dt);
            for i in 0..r {
                for j in 0..r {
                    k_red.data_mut()[i * r + j] += factor * m_shift.get(&[i, j]);
                }
            }
        }
        let rl = model.phi_l.dims()[1];
        let mut l_red = vec![0.0f64; r];
        for (i, l) in l_red.iter_mut().enumerate() {
            for (b, &c) in l_coeff.iter().enumerate().take(rl) {
                *l += model.phi_l.get(&[i, b]) * c;
            }
        }
        let lu = DenseLu::new(&k_red)
            .map_err(|_| Error::Singular(format!("reduced system singular at mu = {mu:?}")))?;
        let coords = lu.solve(&l_red)?;
        let condition_estimate = lu.condition_estimate();
        let solution = reconstruct(&model.basis, &coords, self.spec)?;
        Ok(OnlineSolution {
            coords,
            solution,
            wall: start.elapsed(),
            condition_estimate,
        })
    }
}

/// Reconstructs the split-axes solution from reduced coordinates.
pub fn reconstruct(basis: &ReducedBasis, coords: &[f64], spec: &ProblemSpec) -> Result<Tensor> {
    let mut dims = spec.space.free_counts();
    if !spec.steady() {
        dims.push(spec.n_steps);
    }
    match basis {
        ReducedBasis::Tt(b) => {
            let full = crate::tensors::tt_reconstruct(b.cores(), Some(coords))?;
            full.reshape(dims)
        }
        ReducedBasis::St(b) => {
            let (rs, rt) = (b.r_s(), b.r_t());
            if coords.len() != rs * rt {
                return Err(argument("coordinate length mismatch"));
            }
            let x = Tensor::new(vec![rs, rt], coords.to_vec())?;
            let sx = contract(&b.phi_s, 1, &x, 0)?;
            let full = contract(&sx, 1, &permute_axes(&b.phi_t, &[1, 0])?, 0)?;
            full.reshape(dims)
        }
    }
}

/// Space-time norm in Kronecker-sum form: `dt * sum_n v_n^T X_s v_n` for
/// transient fields, `v^T X_s v` for steady ones. Never assembles the
/// space-time matrix.
pub struct SpaceTimeNorm {
    pub kron: KronSum,
    pub dt: f64,
    pub steady: bool,
}

impl SpaceTimeNorm {
    pub fn norm_sq(&self, v: &Tensor) -> Result<f64> {
        let value = self.kron.dot(v, v)?;
        Ok(if self.steady { value } else { self.dt * value })
    }

    pub fn norm(&self, v: &Tensor) -> Result<f64> {
        Ok(self.norm_sq(v)?.max(0.0).sqrt())
    }
}

/// Mean relative space-time error over matched solution pairs.
pub fn error_metric(fom: &[Tensor], rom: &[Tensor], norm: &SpaceTimeNorm) -> Result<f64> {
    if fom.len() != rom.len() || fom.is_empty() {
        return Err(argument("error_metric needs matching nonempty sets"));
    }
    let mut total = 0.0;
    for (u, v) in fom.iter().zip(rom) {
        let denom = norm.norm(u)?;
        if denom == 0.0 {
            return Err(argument(
                "zero-norm FOM solution leaves the ratio undefined",
            ));
        }
        let diff = v.sub(u)?;
        total += norm.norm(&diff)? / denom;
    }
    Ok(total / fom.len() as f64)
}

/// A posteriori estimate components per the space-time stability analysis,
/// evaluated by dense conversions; refuses sizes beyond the desk-scale
/// threshold.
pub struct AposterioriReport {
    /// Smallest generalized singular value (the stability constant used in
    /// the bound).
    pub c_min: f64,
    /// Spectral norm of the preconditioned operator (the printed constant).
    pub c_spectral: f64,
    pub residual_term: f64,
    pub data_term: f64,
    pub bound: f64,
    pub measured_error: f64,
    pub holds: bool,
}

const APOSTERIORI_MAX_DIM: usize = 2500;

/// Inputs for the a posteriori diagnostic.
pub struct AposterioriContext<'a> {
    pub spec: &'a ProblemSpec,
    pub map: &'a SparsityMap,
    /// Frobenius norms of the training residual / Jacobian snapshot sets.
    pub residual_snapshot_norm: f64,
    pub jacobian_snapshot_norm: f64,
    /// Full-order solution for the measured error.
    pub fom_solution: &'a Tensor,
}

pub fn aposteriori_estimate(
    model: &ReducedModel,
    mu: &[f64],
    ctx: &AposterioriContext,
) -> Result<AposterioriReport> {
    let spec = ctx.spec;
    let n_st = spec.n_st();
    if n_st > APOSTERIORI_MAX_DIM {
        return Err(Error::Diagnostic(format!(
            "a posteriori estimate limited to {APOSTERIORI_MAX_DIM} space-time dofs, got {n_st}"
        )));
    }
    let transient = !spec.steady();
    let n_s = spec.space.n_free();
    let n_t = spec.n_steps.max(1);
    let dt = spec.dt();
    let theta = spec.theta;

    // Online solve for this parameter.
    let solver = OnlineSolver::new(model, spec, ctx.map)?;
    let online = solver.solve(mu)?;

    // MDEIM reconstructions of the full-order quantities.
    let k_samples: Vec<f64> = solver
        .k_points
        .iter()
        .map(|&(r, c, t)| solver.evaluator.step_matrix_entry(mu, t, r, c))
        .collect();
    let k_coeff = model.k_hyper.interpolation.coefficients(&k_samples)?;
    let l_samples: Vec<f64> = solver
        .l_points
        .iter()
        .map(|&(row, t)| solver.evaluator.residual_entry(mu, t, row))
        .collect();
    let l_coeff = model.l_hyper.interpolation.coefficients(&l_samples)?;

    // Step-operator nonzeros per time step from the hyper basis.
    let k_full = model.k_hyper.reconstruct(&k_coeff)?;
    let k_flat = match &model.k_hyper.basis {
        HyperBasis::Tt(_) => {
            let trailing: Vec<usize> = k_full.dims()[ctx.map.d()..].to_vec();
            let mut split_dims = ctx.map.nz_counts();
            split_dims.extend_from_slice(&trailing);
            crate::hyper::split_axes_to_flat(&k_full.reshape(split_dims)?, ctx.map)?
        }
        HyperBasis::St { .. } => k_full,
    };
    let l_full = model.l_hyper.reconstruct(&l_coeff)?;
    let l_flat = l_full.reshape(vec![n_s * n_t])?;

    // Dense space-time operator and norm.
    let mut k_st = Tensor::zeros(vec![n_st, n_st]);
    for step in 0..n_t {
        for pos in 0..ctx.map.n_z() {
            let (r, c) = ctx.map.pos_coords(pos)?;
            let v = if transient {
                k_flat.get(&[pos, step])
            } else {
                k_flat.data()[pos]
            };
            // Diagonal block.
            let (gr, gc) = (r * n_t + step, c * n_t + step);
            k_st.data_mut()[gr * n_st + gc] += v;
            if transient && step > 0 {
                // Subdiagonal: (1-theta)/theta D(t_{n-1}) - M/(theta dt).
                let w = (1.0 - theta) / theta;
                if w != 0.0 {
                    let vs = k_flat.get(&[pos, step - 1]);
                    k_st.data_mut()[gr * n_st + (c * n_t + step - 1)] += w * vs;
                }
            }
        }
    }
    if transient {
        let mass = crate::fom::assemble_mass(&spec.space)?;
        for c in 0..n_s {
            let (rows, vals) = mass.col(c);
            for (&r, &v) in rows.iter().zip(vals) {
                for step in 1..n_t {
                    k_st.data_mut()[(r * n_t + step) * n_st + (c * n_t + step - 1)] -=
                        v / (theta * dt);
                }
            }
        }
    }
    let x_s = crate::fe::assemble_norm_matrix(&spec.space)?.expand()?;
    let mut x_st = Tensor::zeros(vec![n_st, n_st]);
    let weight = if transient { dt } else { 1.0 };
    for c in 0..n_s {
        let (rows, vals) = x_s.col(c);
        for (&r, &v) in rows.iter().zip(vals) {
            for step in 0..n_t {
                x_st.data_mut()[(r * n_t + step) * n_st + (c * n_t + step)] = weight * v;
            }
        }
    }

    // X^(+-1/2) through the symmetric eigendecomposition.
    let (evals, evecs) = symmetric_eigen(&x_st)?;
    if evals[0] <= 0.0 {
        return Err(Error::Diagnostic(
            "space-time norm not positive definite".into(),
        ));
    }
    let apply_power = |v: &Tensor, p: f64| -> Result<Tensor> {
        // evecs diag(evals^p) evecs^T v
        let vt = contract(&permute_axes(&evecs, &[1, 0])?, 1, v, 0)?;
        let mut scaled = vt;
        for (i, lambda) in evals.iter().enumerate() {
            let f = lambda.powf(p);
            let rest: usize = scaled.dims()[1..].iter().product();
            for q in 0..rest {
                scaled.data_mut()[i * rest + q] *= f;
            }
        }
        contract(&evecs, 1, &scaled, 0)
    };
    // B^T = X^{-1/2} K^T X^{-1/2}; singular values are shared with B.
    let half_left = apply_power(&k_st, -0.5)?;
    let half_left_t = permute_axes(&half_left, &[1, 0])?;
    let b_full = apply_power(&half_left_t, -0.5)?;
    let bt = permute_axes(&b_full, &[1, 0])?;
    let btb = contract(&bt, 1, &b_full, 0)?;
    let (svals, _) = symmetric_eigen(&btb)?;
    let c_min = svals[0].max(0.0).sqrt();
    let c_spectral = svals[svals.len() - 1].max(0.0).sqrt();

    // Residual term in the X^-1 norm.
    let u_hat_flat = {
        let u = &online.solution;
        u.clone().reshape(vec![n_st])?
    };
    let ku = contract(&k_st, 1, &u_hat_flat, 0)?;
    let resid = l_flat.sub(&ku)?;
    let x_inv_res = apply_power(&resid, -1.0)?;
    let residual_term: f64 = resid
        .data()
        .iter()
        .zip(x_inv_res.data())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt();

    // Data terms weighted by the interpolation diagnostics.
    let x_inv_norm = 1.0 / evals[0];
    let x_inv_half_norm = x_inv_norm.sqrt();
    let xu = contract(&x_st, 1, &u_hat_flat, 0)?;
    let u_hat_x: f64 = u_hat_flat
        .data()
        .iter()
        .zip(xu.data())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt();
    let eps = model.k_hyper.eps.max(model.l_hyper.eps);
    let sqrt_k = (model.l_hyper.k_axes as f64).sqrt();
    let data_term = (model.l_hyper.chi() * ctx.residual_snapshot_norm * x_inv_half_norm
        + model.k_hyper.chi() * ctx.jacobian_snapshot_norm * x_inv_norm * u_hat_x)
        * sqrt_k
        * eps;

    let bound = (data_term + residual_term) / c_min;
    let diff = online.solution.sub(ctx.fom_solution)?;
    let diff_flat = diff.reshape(vec![n_st])?;
    let xd = contract(&x_st, 1, &diff_flat, 0)?;
    let measured_error: f64 = diff_flat
        .data()
        .iter()
        .zip(xd.data())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt();
    Ok(AposterioriReport {
        c_min,
        c_spectral,
        residual_term: residual_term / c_min,
        data_term: data_term / c_min,
        bound,
        measured_error,
        holds: bound >= measured_error,
    })
}

fn write_indices(f: &mut impl std::io::Write, key: &str, idx: &InterpIndices) -> Result<()> {
    match idx {
        InterpIndices::Tt { axes } => {
            writeln!(f, "{key}_kind = tt")?;
            for (j, axis) in axes.iter().enumerate() {
                let line: Vec<String> = axis.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{key}_axis{j} = {}", line.join(" "))?;
            }
        }
        InterpIndices::St { space, time } => {
            writeln!(f, "{key}_kind = st")?;
            let s: Vec<String> = space.iter().map(|v| v.to_string()).collect();
            let t: Vec<String> = time.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{key}_space = {}", s.join(" "))?;
            writeln!(f, "{key}_time = {}", t.join(" "))?;
        }
    }
    Ok(())
}

impl ReducedModel {
    /// Serializes the model to a directory: basis files, projected tensors,
    /// interpolation manifest, metadata.
    pub fn save(&self, dir: &std::path::Path, spec: &ProblemSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        use std::io::Write as _;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("model.txt"))?);
        writeln!(f, "ttrb-model v1")?;
        writeln!(f, "problem_hash = {:#018x}", spec.fingerprint())?;
        writeln!(f, "theta = {:.17e}", self.theta)?;
        writeln!(f, "dt = {:.17e}", self.dt)?;
        writeln!(f, "n_steps = {}", self.n_steps)?;
        match &self.basis {
            ReducedBasis::Tt(b) => {
                writeln!(f, "basis = tt")?;
                b.save(dir, "basis")?;
            }
            ReducedBasis::St(b) => {
                writeln!(f, "basis = st")?;
                b.phi_s.write_ttrb(dir.join("basis_phi_s.ttrb"))?;
                b.phi_t.write_ttrb(dir.join("basis_phi_t.ttrb"))?;
            }
        }
        for (name, hyper) in [("k", &self.k_hyper), ("l", &self.l_hyper)] {
            writeln!(f, "{name}_eps = {:.17e}", hyper.eps)?;
            writeln!(f, "{name}_k_axes = {}", hyper.k_axes)?;
            writeln!(f, "{name}_chi = {:.17e}", hyper.chi())?;
            writeln!(
                f,
                "{name}_condition = {:.6e}",
                hyper.interpolation.condition_estimate()
            )?;
            match &hyper.basis {
                HyperBasis::Tt(b) => {
                    writeln!(f, "{name}_basis = tt")?;
                    b.save(dir, &format!("{name}_hyper"))?;
                }
                HyperBasis::St { phi_s, phi_t } => {
                    writeln!(f, "{name}_basis = st")?;
                    phi_s.write_ttrb(dir.join(format!("{name}_hyper_phi_s.ttrb")))?;
                    phi_t.write_ttrb(dir.join(format!("{name}_hyper_phi_t.ttrb")))?;
                }
            }
            write_indices(&mut f, name, hyper.interpolation.indices())?;
            match hyper.interpolation.indices() {
                InterpIndices::Tt { .. } => {
                    hyper
                        .interpolation
                        .matrix()
                        .write_ttrb(dir.join(format!("{name}_interp.ttrb")))?;
                }
                InterpIndices::St { space, time } => {
                    // Store the two gathered factors for an exact rebuild.
                    let (phi_s, phi_t) = st_bases(hyper, "save")?;
                    let a_s = Tensor::from_fn(vec![space.len(), phi_s.dims()[1]], |ij| {
                        phi_s.get(&[space[ij[0]], ij[1]])
                    });
                    let a_t = Tensor::from_fn(vec![time.len(), phi_t.dims()[1]], |ij| {
                        phi_t.get(&[time[ij[0]], ij[1]])
                    });
                    a_s.write_ttrb(dir.join(format!("{name}_interp_s.ttrb")))?;
                    a_t.write_ttrb(dir.join(format!("{name}_interp_t.ttrb")))?;
                }
            }
        }
        self.phi_k_diag.write_ttrb(dir.join("phi_k_diag.ttrb"))?;
        if let Some(t) = &self.phi_k_shift {
            t.write_ttrb(dir.join("phi_k_shift.ttrb"))?;
        }
        if let Some(t) = &self.phi_m_shift {
            t.write_ttrb(dir.join("phi_m_shift.ttrb"))?;
        }
        self.phi_l.write_ttrb(dir.join("phi_l.ttrb"))?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path, spec: &ProblemSpec) -> Result<ReducedModel> {
        use std::collections::HashMap;
        let text = std::fs::read_to_string(dir.join("model.txt"))?;
        let mut kv: HashMap<String, String> = HashMap::new();
        for line in text.lines().skip(1) {
            if let Some((k, v)) = line.split_once(" = ") {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let hash = kv
            .get("problem_hash")
            .ok_or_else(|| Error::Format("missing problem hash".into()))?;
        let parsed = u64::from_str_radix(hash.trim_start_matches("0x"), 16)
            .map_err(|_| Error::Format("bad problem hash".into()))?;
        if parsed != spec.fingerprint() {
            return Err(Error::Consistency(
                "model does not match the problem".into(),
            ));
        }
        let parse_f = |key: &str| -> Result<f64> {
            kv.get(key)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("missing {key}")))
        };
        let parse_list = |key: &str| -> Result<Vec<usize>> {
            kv.get(key)
                .map(|v| {
                    v.split_whitespace()
                        .map(|x| x.parse::<usize>().map_err(|_| Error::Format(key.into())))
                        .collect::<Result<Vec<usize>>>()
                })
                .unwrap_or_else(|| Ok(Vec::new()))
        };
        let basis_desc = kv
            .get("basis")
            .ok_or_else(|| Error::Format("missing basis line".into()))?;
        let basis = if basis_desc.trim() == "tt" {
            ReducedBasis::Tt(TTBasis::load(dir, "basis")?)
        } else {
            ReducedBasis::St(STBasis {
                phi_s: Tensor::read_ttrb(dir.join("basis_phi_s.ttrb"))?,
                phi_t: Tensor::read_ttrb(dir.join("basis_phi_t.ttrb"))?,
            })
        };
        let mut hypers = Vec::new();
        for name in ["k", "l"] {
            let eps = parse_f(&format!("{name}_eps"))?;
            let k_axes = parse_f(&format!("{name}_k_axes"))? as usize;
            let hb_desc = kv
                .get(&format!("{name}_basis"))
                .ok_or_else(|| Error::Format("missing hyper basis line".into()))?;
            let hbasis = if hb_desc.trim() == "tt" {
                HyperBasis::Tt(TTBasis::load(dir, &format!("{name}_hyper"))?)
            } else {
                HyperBasis::St {
                    phi_s: Tensor::read_ttrb(dir.join(format!("{name}_hyper_phi_s.ttrb")))?,
                    phi_t: Tensor::read_ttrb(dir.join(format!("{name}_hyper_phi_t.ttrb")))?,
                }
            };
            let kind = kv
                .get(&format!("{name}_kind"))
                .ok_or_else(|| Error::Format("missing interpolation kind".into()))?;
            let interpolation = if kind == "tt" {
                let mut axes = Vec::new();
                let mut j = 0;
                loop {
                    let key = format!("{name}_axis{j}");
                    if !kv.contains_key(&key) {
                        break;
                    }
                    axes.push(parse_list(&key)?);
                    j += 1;
                }
                let matrix = Tensor::read_ttrb(dir.join(format!("{name}_interp.ttrb")))?;
                crate::hyper::Interpolation::from_tt(axes, matrix)?
            } else {
                let space = parse_list(&format!("{name}_space"))?;
                let time = parse_list(&format!("{name}_time"))?;
                let a_s = Tensor::read_ttrb(dir.join(format!("{name}_interp_s.ttrb")))?;
                let a_t = Tensor::read_ttrb(dir.join(format!("{name}_interp_t.ttrb")))?;
                crate::hyper::Interpolation::from_st(space, time, a_s, a_t)?
            };
            hypers.push(AffineDecomposition {
                basis: hbasis,
                interpolation,
                k_axes,
                eps,
            });
        }
        let l_hyper = hypers.pop().expect("two hypers");
        let k_hyper = hypers.pop().expect("two hypers");
        let phi_k_shift = if dir.join("phi_k_shift.ttrb").exists() {
            Some(Tensor::read_ttrb(dir.join("phi_k_shift.ttrb"))?)
        } else {
            None
        };
        let phi_m_shift = if dir.join("phi_m_shift.ttrb").exists() {
            Some(Tensor::read_ttrb(dir.join("phi_m_shift.ttrb"))?)
        } else {
            None
        };
        Ok(ReducedModel {
            basis,
            phi_k_diag: Tensor::read_ttrb(dir.join("phi_k_diag.ttrb"))?,
            phi_k_shift,
            phi_m_shift,
            phi_l: Tensor::read_ttrb(dir.join("phi_l.ttrb"))?,
            k_hyper,
            l_hyper,
            theta: parse_f("theta")?,
            dt: parse_f("dt")?,
            n_steps: parse_f("n_steps")? as usize,
        })
    }
}
