//! Energy-norm accuracy of the norm-orthogonal reductions on snapshots
//! generated by the full-order model: the measured projection error in the
//! space-time norm stays below the tolerance, with the sqrt(d+1) factor
//! when the internal tolerances are not split.

use std::sync::Arc;

use ttrb::fe::{assemble_norm_matrix, mass_1d, CartesianSpace, Grid1D};
use ttrb::fom::{generate_snapshots, ProblemData, ProblemSpec, Sampler};
use ttrb::reduce::{x1_tt_svd, xk_tt_svd, TTBasis};
use ttrb::sparse::{kron_sparse, SparseMatrix};
use ttrb::tensors::{contract, permute_axes, Tensor};

struct HeatData;

impl ProblemData for HeatData {
    fn alpha(&self, x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[0] + mu[1] * x[0]
    }
    fn forcing(&self, _x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[2]
    }
    fn dirichlet(&self, x: &[f64], t: f64, mu: &[f64]) -> f64 {
        let tau = 2.0 * std::f64::consts::PI * t / 0.1;
        (-mu[3] * x[1]).exp() * (1.0 - tau.cos() + tau.sin() / mu[4])
    }
    fn neumann(&self, _x: &[f64], t: f64, mu: &[f64]) -> f64 {
        (2.0 * std::f64::consts::PI * t / 0.1).sin() / mu[5]
    }
    fn neumann_faces(&self) -> Vec<(usize, bool)> {
        vec![(0, true)]
    }
    fn alpha_time_dependent(&self) -> bool {
        false
    }
}

fn heat_spec(m: usize, n_steps: usize) -> ProblemSpec {
    let grids: Vec<Grid1D> = (0..2)
        .map(|i| Grid1D::new(0.0, 1.0, m, i == 0, false).unwrap())
        .collect();
    ProblemSpec {
        space: CartesianSpace::new(grids).unwrap(),
        t_final: 0.1,
        n_steps,
        theta: 0.5,
        data: Arc::new(HeatData),
        param_box: vec![(1.0, 5.0); 6],
    }
}

/// Sum over parameter columns of the squared X projection error of the
/// merged basis, together with the squared X norm of the snapshots.
fn x_projection_error(basis: &TTBasis, u: &Tensor, x_s: &SparseMatrix, n_t: usize) -> (f64, f64) {
    let phi = basis.merged().unwrap();
    let n_st = phi.dims()[0];
    let n_s = n_st / n_t;
    let n_mu = *u.dims().last().unwrap();
    let flat = u.clone().reshape(vec![n_st, n_mu]).unwrap();
    let apply_x = |v: &Tensor| -> Tensor {
        // (X_s (x) I_t) v for stacked columns.
        let cols: usize = v.dims()[1..].iter().product();
        let blocks = v.clone().reshape(vec![n_s, n_t * cols]).unwrap();
        x_s.mul_dense(&blocks)
            .unwrap()
            .reshape(v.dims().to_vec())
            .unwrap()
    };
    let xu = apply_x(&flat);
    let phi_t = permute_axes(&phi, &[1, 0]).unwrap();
    let coords = contract(&phi_t, 1, &xu, 0).unwrap();
    let proj = contract(&phi, 1, &coords, 0).unwrap();
    let err = flat.sub(&proj).unwrap();
    let x_err = apply_x(&err);
    let err_sq: f64 = err
        .data()
        .iter()
        .zip(x_err.data())
        .map(|(a, b)| a * b)
        .sum();
    let norm_sq: f64 = flat.data().iter().zip(xu.data()).map(|(a, b)| a * b).sum();
    (err_sq, norm_sq)
}

#[test]
fn x_norm_accuracy_of_norm_orthogonal_reductions() {
    let spec = heat_spec(7, 5);
    let snaps = generate_snapshots(&spec, 10, &Sampler::Halton { start_index: 1 }).unwrap();
    let d = spec.space.d();
    let k = (d + 1) as f64;
    let masses: Vec<SparseMatrix> = spec
        .space
        .grids()
        .iter()
        .map(|g| mass_1d(g).unwrap())
        .collect();
    let x_mass = kron_sparse(&masses[0], &masses[1]).unwrap();
    let h1 = assemble_norm_matrix(&spec.space).unwrap();
    let x_h1 = h1.expand().unwrap();
    let mut xk_errors = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        for split in [false, true] {
            let budget = if split { eps } else { eps * k.sqrt() };
            // Rank-1 norm: the bound is a theorem.
            let out1 = x1_tt_svd(&snaps.solution, &masses, eps, split).unwrap();
            let (err_sq, norm_sq) =
                x_projection_error(&out1.basis, &snaps.solution, &x_mass, spec.n_steps);
            assert!(
                err_sq.sqrt() <= budget * norm_sq.sqrt(),
                "rank-1 norm, eps {eps}, split {split}: {} vs {}",
                err_sq.sqrt(),
                budget * norm_sq.sqrt()
            );
            // Rank-K norm: truncation runs in the crossnorm surrogate
            // geometry, so the constant carries the norm-equivalence
            // slack; assert the rate with a modest factor and collect the
            // errors for the decay check below.
            let outk = xk_tt_svd(&snaps.solution, &h1, eps, split).unwrap();
            let (err_sq, norm_sq) =
                x_projection_error(&outk.basis, &snaps.solution, &x_h1, spec.n_steps);
            let rel = err_sq.sqrt() / norm_sq.sqrt();
            assert!(
                rel <= 5.0 * budget,
                "rank-K norm, eps {eps}, split {split}: {rel} vs {budget}"
            );
            if !split {
                xk_errors.push(rel);
            }
        }
    }
    assert!(
        xk_errors[0] > xk_errors[1] && xk_errors[1] > xk_errors[2],
        "no decay: {xk_errors:?}"
    );
}
