//! Full-order model validation: analytic decay rates of the heat equation
//! under both integrators, and equivalence of the backward Euler stepping
//! with the explicitly assembled block bi-diagonal space-time system.

use std::sync::Arc;

use ttrb::fe::{CartesianSpace, Grid1D};
use ttrb::fom::{assemble_mass, simulate, ProblemData, ProblemSpec};
use ttrb::sparse::DenseLu;
use ttrb::tensors::Tensor;

struct HeatSine;

impl ProblemData for HeatSine {
    fn alpha(&self, _x: &[f64], _t: f64, _mu: &[f64]) -> f64 {
        1.0
    }
    fn forcing(&self, _x: &[f64], _t: f64, _mu: &[f64]) -> f64 {
        0.0
    }
    fn dirichlet(&self, _x: &[f64], _t: f64, _mu: &[f64]) -> f64 {
        0.0
    }
    fn initial(&self, x: &[f64], _mu: &[f64]) -> f64 {
        (std::f64::consts::PI * x[0]).sin()
    }
    fn alpha_time_dependent(&self) -> bool {
        false
    }
}

fn heat_spec(n_cells: usize, n_steps: usize, theta: f64) -> ProblemSpec {
    ProblemSpec {
        space: CartesianSpace::new(vec![Grid1D::new(0.0, 1.0, n_cells, true, true).unwrap()])
            .unwrap(),
        t_final: 0.1,
        n_steps,
        theta,
        data: Arc::new(HeatSine),
        param_box: vec![(0.0, 1.0)],
    }
}

/// Space-time l2 distance to the analytic solution e^{-pi^2 t} sin(pi x).
fn analytic_error(spec: &ProblemSpec) -> f64 {
    let sim = simulate(spec, &[0.0]).unwrap();
    let n_s = spec.space.n_free();
    let n_t = spec.n_steps;
    let dt = spec.dt();
    let pi = std::f64::consts::PI;
    let mut err = 0.0;
    let mut norm = 0.0;
    for n in 1..=n_t {
        let t = n as f64 * dt;
        for i in 0..n_s {
            let x = spec.space.free_coords(&[i])[0];
            let exact = (-pi * pi * t).exp() * (pi * x).sin();
            let got = sim.solution.data()[i * n_t + (n - 1)];
            err += (got - exact) * (got - exact);
            norm += exact * exact;
        }
    }
    (err / norm).sqrt()
}

#[test]
fn heat_equation_convergence_orders() {
    // Backward Euler: first order in time once the temporal error
    // dominates; Crank-Nicolson: second order with both terms balanced.
    let be: Vec<f64> = [(64usize, 4usize), (128, 8), (256, 16)]
        .iter()
        .map(|&(n, nt)| analytic_error(&heat_spec(n, nt, 1.0)))
        .collect();
    let order_be = (be[0] / be[2]).log2() / 2.0;
    assert!(
        (order_be - 1.0).abs() <= 0.15,
        "backward Euler order {order_be} (errors {be:?})"
    );
    let cn: Vec<f64> = [(32usize, 4usize), (64, 8), (128, 16)]
        .iter()
        .map(|&(n, nt)| analytic_error(&heat_spec(n, nt, 0.5)))
        .collect();
    let order_cn = (cn[0] / cn[2]).log2() / 2.0;
    assert!(
        (order_cn - 2.0).abs() <= 0.30,
        "Crank-Nicolson order {order_cn} (errors {cn:?})"
    );
}

struct DriftingData;

impl ProblemData for DriftingData {
    fn alpha(&self, x: &[f64], t: f64, mu: &[f64]) -> f64 {
        mu[0] + mu[1] * x[0] + 0.3 * t
    }
    fn forcing(&self, x: &[f64], t: f64, _mu: &[f64]) -> f64 {
        1.0 + x[0] + t
    }
    fn dirichlet(&self, x: &[f64], t: f64, _mu: &[f64]) -> f64 {
        t * (-(x[x.len() - 1])).exp()
    }
    fn neumann(&self, _x: &[f64], t: f64, _mu: &[f64]) -> f64 {
        0.5 * t
    }
    fn neumann_faces(&self) -> Vec<(usize, bool)> {
        vec![(0, true)]
    }
    fn initial(&self, x: &[f64], _mu: &[f64]) -> f64 {
        x[0] * 0.25
    }
}

/// Explicitly assembles the theta = 1 space-time system: diagonal blocks
/// `dt^-1 M + A(t_n)`, subdiagonal blocks `-dt^-1 M`, right-hand side equal
/// to the residual snapshots. Its direct solve must match the stepping.
#[test]
fn backward_euler_matches_block_space_time_solve() {
    for dims in [vec![5usize], vec![3, 3]] {
        let grids: Vec<Grid1D> = dims
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if i == 0 {
                    Grid1D::new(0.0, 1.0, n, true, false).unwrap()
                } else {
                    Grid1D::new(0.0, 1.0, n - 1, false, false).unwrap()
                }
            })
            .collect();
        let spec = ProblemSpec {
            space: CartesianSpace::new(grids).unwrap(),
            t_final: 0.3,
            n_steps: 3,
            theta: 1.0,
            data: Arc::new(DriftingData),
            param_box: vec![(1.0, 5.0), (1.0, 5.0)],
        };
        let mu = [2.0, 1.5];
        let sim = simulate(&spec, &mu).unwrap();
        let n_s = spec.space.n_free();
        let n_t = spec.n_steps;
        let n_st = n_s * n_t;
        let dt = spec.dt();
        let mass = assemble_mass(&spec.space).unwrap();
        let mut k_st = Tensor::zeros(vec![n_st, n_st]);
        for n in 1..=n_t {
            let t_n = n as f64 * dt;
            let a = {
                let data = spec.data.clone();
                let mu_v = mu.to_vec();
                let alpha = move |x: &[f64]| data.alpha(x, t_n, &mu_v);
                ttrb::fe::assemble_diffusion(&spec.space, &alpha).unwrap()
            };
            let step_op = mass.scaled(1.0 / dt).add_scaled(&a, 1.0).unwrap();
            for c in 0..n_s {
                let (rows, vals) = step_op.col(c);
                for (&r, &v) in rows.iter().zip(vals) {
                    let (gr, gc) = (r * n_t + (n - 1), c * n_t + (n - 1));
                    k_st.set(&[gr, gc], v);
                }
            }
            if n > 1 {
                for c in 0..n_s {
                    let (rows, vals) = mass.col(c);
                    for (&r, &v) in rows.iter().zip(vals) {
                        let (gr, gc) = (r * n_t + (n - 1), c * n_t + (n - 2));
                        k_st.set(&[gr, gc], -v / dt);
                    }
                }
            }
        }
        // Right-hand side blocks are the residual snapshots.
        let mut rhs = vec![0.0f64; n_st];
        for i in 0..n_s {
            for n in 0..n_t {
                rhs[i * n_t + n] = sim.residual.data()[i * n_t + n];
            }
        }
        let lu = DenseLu::new(&k_st).unwrap();
        let direct = lu.solve(&rhs).unwrap();
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for (k, &v) in direct.iter().enumerate() {
            let stepped = sim.solution.data()[k];
            err += (v - stepped) * (v - stepped);
            norm += stepped * stepped;
        }
        assert!(
            err.sqrt() <= 1e-11 * norm.sqrt(),
            "dims {dims:?}: {} vs {}",
            err.sqrt(),
            norm.sqrt()
        );
    }
}
