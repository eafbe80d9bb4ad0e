//! Parametric full-order model: theta-scheme time stepping (equivalent for
//! theta = 1 to the block bi-diagonal space-time system), parameter
//! sampling, and snapshot generation for solutions, residuals and
//! Jacobians.
//!
//! Residual snapshots are the per-step right-hand sides of the lifted
//! scheme; Jacobian snapshots are the nonzero vectors of the step operator
//! `dt^-1 M + theta A(t_n)` (the full operator, so the mass contribution is
//! one extra affine term). The initial condition enters the first step's
//! residual.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::fe::{
    self, assemble_diffusion, assemble_rhs, mass_1d, mass_dirichlet_action, sparsity_map,
    CartesianSpace, RhsData, SparsityMap,
};
use crate::sparse::{cholesky, kron_sparse, tri_solve, CholeskyFactor, SparseMatrix};

use crate::tensors::{merge_axes, Tensor};
use crate::{argument, Error, Result};

/// Coefficient and data closures of the parameterized problem.
pub trait ProblemData: Send + Sync {
    fn alpha(&self, x: &[f64], t: f64, mu: &[f64]) -> f64;
    fn forcing(&self, x: &[f64], t: f64, mu: &[f64]) -> f64;
    fn dirichlet(&self, x: &[f64], t: f64, mu: &[f64]) -> f64;
    fn neumann(&self, _x: &[f64], _t: f64, _mu: &[f64]) -> f64 {
        0.0
    }
    fn initial(&self, _x: &[f64], _mu: &[f64]) -> f64 {
        0.0
    }
    /// Facets carrying the Neumann datum as `(direction, high_side)`.
    fn neumann_faces(&self) -> Vec<(usize, bool)> {
        Vec::new()
    }
    /// When false, the step operator is factorized once per parameter.
    fn alpha_time_dependent(&self) -> bool {
        true
    }
}

/// Full problem description; `n_steps = 0` marks a steady problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub space: CartesianSpace,
    pub t_final: f64,
    pub n_steps: usize,
    pub theta: f64,
    pub data: Arc<dyn ProblemData>,
    pub param_box: Vec<(f64, f64)>,
}

impl ProblemSpec {
    pub fn steady(&self) -> bool {
        self.n_steps == 0
    }

    pub fn dt(&self) -> f64 {
        if self.steady() {
            0.0
        } else {
            self.t_final / self.n_steps as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steady() != (self.t_final == 0.0) {
            return Err(argument(
                "steady problems must have t_final = 0 and n_steps = 0",
            ));
        }
        if !self.steady() && !(self.theta == 1.0 || self.theta == 0.5) {
            return Err(argument(
                "theta must be 1 (backward Euler) or 1/2 (Crank-Nicolson)",
            ));
        }
        if self.param_box.iter().any(|&(lo, hi)| !(hi >= lo)) {
            return Err(argument("parameter box bounds out of order"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.param_box.len()
    }

    /// Space-time dimension `N_s * max(N_t, 1)`.
    pub fn n_st(&self) -> usize {
        self.space.n_free() * self.n_steps.max(1)
    }

    /// FNV-1a hash of the discrete setup, stored in manifests.
    pub fn fingerprint(&self) -> u64 {
        let mut desc = String::new();
        for g in self.space.grids() {
            desc.push_str(&format!(
                "g({:.12e},{:.12e},{},{},{})",
                g.x_lo, g.x_hi, g.n_cells, g.dirichlet_lo, g.dirichlet_hi
            ));
        }
        desc.push_str(&format!(
            "t({:.12e},{},{:.3})p{}",
            self.t_final,
            self.n_steps,
            self.theta,
            self.param_box.len()
        ));
        let mut h: u64 = 0xcbf29ce484222325;
        for b in desc.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out.iter().all(|&p| !candidate.is_multiple_of(p)) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut inv = 0.0f64;
    let mut denom = 1.0f64;
    while index > 0 {
        denom *= base as f64;
        inv += (index % base) as f64 / denom;
        index /= base;
    }
    inv
}

/// Halton point `index` (1-based) in the first `p` prime bases, affinely
/// mapped into the box.
pub fn halton(index: usize, p: usize, param_box: &[(f64, f64)]) -> Result<Vec<f64>> {
    if index == 0 {
        return Err(argument("halton index is 1-based"));
    }
    if param_box.len() != p {
        return Err(argument("box dimension mismatch"));
    }
    let bases = primes(p);
    Ok((0..p)
        .map(|j| {
            let u = radical_inverse(index as u64, bases[j]);
            let (lo, hi) = param_box[j];
            lo + (hi - lo) * u
        })
        .collect())
}

/// Parameter sampling strategies; offline sets use Halton, online sets a
/// seeded uniform stream (one ChaCha stream, coordinates drawn in order).
#[derive(Debug, Clone)]
pub enum Sampler {
    Halton { start_index: usize },
    Uniform { seed: u64 },
}

impl Sampler {
    pub fn draw(&self, count: usize, param_box: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
        let p = param_box.len();
        match self {
            Sampler::Halton { start_index } => (0..count)
                .map(|k| halton(start_index + k, p, param_box))
                .collect(),
            Sampler::Uniform { seed } => {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..count)
                    .map(|_| {
                        param_box
                            .iter()
                            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

fn with_rhs_data<R>(
    spec: &ProblemSpec,
    mu: &[f64],
    t: f64,
    faces: &[(usize, bool)],
    f: impl FnOnce(&RhsData) -> R,
) -> R {
    let data = spec.data.as_ref();
    let alpha = move |x: &[f64]| data.alpha(x, t, mu);
    let forcing = move |x: &[f64]| data.forcing(x, t, mu);
    let dirichlet = move |x: &[f64]| data.dirichlet(x, t, mu);
    let neumann = move |x: &[f64]| data.neumann(x, t, mu);
    let rd = RhsData {
        alpha: &alpha,
        forcing: &forcing,
        dirichlet: &dirichlet,
        neumann: &neumann,
        neumann_faces: faces,
    };
    f(&rd)
}

/// Assembled d-D mass matrix as the Kronecker chain of 1-D mass matrices.
pub fn assemble_mass(space: &CartesianSpace) -> Result<SparseMatrix> {
    let factors: Vec<SparseMatrix> = space.grids().iter().map(mass_1d).collect::<Result<_>>()?;
    let mut m = factors[0].clone();
    for f in &factors[1..] {
        m = kron_sparse(&m, f)?;
    }
    Ok(m)
}

fn factorize(a: &SparseMatrix, step: usize) -> Result<CholeskyFactor> {
    cholesky(a).map_err(|e| Error::SolveStep {
        step,
        message: e.to_string(),
    })
}

fn spd_solve(factor: &CholeskyFactor, b: &Tensor) -> Result<Tensor> {
    let y = tri_solve(factor, b, true)?;
    tri_solve(factor, &y, false)
}

/// One full-order simulation: the solution together with the residual and
/// Jacobian snapshots collected along the way.
pub struct Simulation {
    /// Split-axes solution `(N_1, .., N_d[, N_t])`.
    pub solution: Tensor,
    /// Residual snapshots with the same axes.
    pub residual: Tensor,
    /// Step-operator nonzeros `(N_z[, N_t])` in CSC order.
    pub jacobian: Tensor,
}

/// Runs the full-order model for one parameter.
pub fn simulate(spec: &ProblemSpec, mu: &[f64]) -> Result<Simulation> {
    spec.validate()?;
    let faces = spec.data.neumann_faces();
    let space = &spec.space;
    let n_s = space.n_free();
    if spec.steady() {
        let a = with_alpha(spec, mu, 0.0, |alpha| assemble_diffusion(space, alpha))?;
        let rhs = with_rhs_data(spec, mu, 0.0, &faces, |rd| assemble_rhs(space, rd))?;
        let factor = factorize(&a, 0)?;
        let flat = merge_axes(&rhs, &[rhs.order()])?;
        let u = spd_solve(&factor, &flat)?;
        return Ok(Simulation {
            solution: u.reshape(space.free_counts())?,
            residual: rhs,
            jacobian: Tensor::new(vec![a.nnz()], a.nz_values().to_vec())?,
        });
    }

    let n_t = spec.n_steps;
    let dt = spec.dt();
    let theta = spec.theta;
    let mass = assemble_mass(space)?;
    let alpha_static = !spec.data.alpha_time_dependent();

    let assemble_a = |t: f64| with_alpha(spec, mu, t, |alpha| assemble_diffusion(space, alpha));
    let mut a_prev = assemble_a(0.0)?;
    let mut a_static_matrix: Option<SparseMatrix> = None;
    let mut factor_static: Option<CholeskyFactor> = None;

    let mut rhs_prev = with_rhs_data(spec, mu, 0.0, &faces, |rd| assemble_rhs(space, rd))?;
    let mut mg_prev = with_dirichlet(spec, mu, 0.0, |g| mass_dirichlet_action(space, g))?;

    let u0 = fe::nodal_on_free(space, &|x| spec.data.initial(x, mu));
    let mut u_prev = merge_axes(&u0, &[u0.order()])?;

    let mut sol = vec![0.0f64; n_s * n_t];
    let mut res = vec![0.0f64; n_s * n_t];
    let mut jac: Vec<f64> = Vec::new();
    let mut n_z = 0usize;

    for n in 1..=n_t {
        let t_n = n as f64 * dt;
        let a_n = if alpha_static {
            match &a_static_matrix {
                Some(a) => a.clone(),
                None => {
                    a_static_matrix = Some(a_prev.clone());
                    a_prev.clone()
                }
            }
        } else {
            assemble_a(t_n)?
        };
        let step_op = mass.scaled(1.0 / dt).add_scaled(&a_n, theta)?;
        if n == 1 {
            n_z = step_op.nnz();
            jac.resize(n_z * n_t, 0.0);
        } else if step_op.nnz() != n_z {
            return Err(Error::Consistency(
                "jacobian sparsity drift across steps".into(),
            ));
        }
        for (z, &v) in step_op.nz_values().iter().enumerate() {
            jac[z * n_t + (n - 1)] = v;
        }

        let rhs_n = with_rhs_data(spec, mu, t_n, &faces, |rd| assemble_rhs(space, rd))?;
        let mg_n = with_dirichlet(spec, mu, t_n, |g| mass_dirichlet_action(space, g))?;
        // Residual snapshot: theta-weighted data terms plus the lifting
        // velocity; the initial state enters at the first step only.
        let mut l_n = vec![0.0f64; n_s];
        for i in 0..n_s {
            l_n[i] = theta * rhs_n.data()[i] + (1.0 - theta) * rhs_prev.data()[i]
                - (mg_n.data()[i] - mg_prev.data()[i]) / dt;
        }
        if n == 1 && u_prev.frobenius_norm() > 0.0 {
            let m_u0 = mass.mul_dense(&u_prev)?;
            let a_u0 = a_prev.mul_dense(&u_prev)?;
            for i in 0..n_s {
                l_n[i] += m_u0.data()[i] / dt - (1.0 - theta) * a_u0.data()[i];
            }
        }
        for (i, &v) in l_n.iter().enumerate() {
            res[i * n_t + (n - 1)] = v;
        }

        // Step right-hand side: residual plus history operator action.
        let mut rhs_step = Tensor::new(vec![n_s], l_n)?;
        if n > 1 {
            let m_u = mass.mul_dense(&u_prev)?;
            let a_u = a_prev.mul_dense(&u_prev)?;
            for i in 0..n_s {
                rhs_step.data_mut()[i] += m_u.data()[i] / dt - (1.0 - theta) * a_u.data()[i];
            }
        }
        let factor = if alpha_static {
            if factor_static.is_none() {
                factor_static = Some(factorize(&step_op, n)?);
            }
            factor_static.as_ref().unwrap()
        } else {
            factor_static = Some(factorize(&step_op, n)?);
            factor_static.as_ref().unwrap()
        };
        let u_n = spd_solve(factor, &rhs_step).map_err(|e| Error::SolveStep {
            step: n,
            message: e.to_string(),
        })?;
        for i in 0..n_s {
            sol[i * n_t + (n - 1)] = u_n.data()[i];
        }
        u_prev = u_n;
        a_prev = a_n;
        rhs_prev = rhs_n;
        mg_prev = mg_n;
    }

    let mut dims = space.free_counts();
    dims.push(n_t);
    Ok(Simulation {
        solution: Tensor::new(dims.clone(), sol)?,
        residual: Tensor::new(dims, res)?,
        jacobian: Tensor::new(vec![n_z, n_t], jac)?,
    })
}

fn with_alpha<R>(
    spec: &ProblemSpec,
    mu: &[f64],
    t: f64,
    f: impl FnOnce(&dyn Fn(&[f64]) -> f64) -> R,
) -> R {
    let data = spec.data.as_ref();
    let alpha = move |x: &[f64]| data.alpha(x, t, mu);
    f(&alpha)
}

fn with_dirichlet<R>(
    spec: &ProblemSpec,
    mu: &[f64],
    t: f64,
    f: impl FnOnce(&dyn Fn(&[f64]) -> f64) -> R,
) -> R {
    let data = spec.data.as_ref();
    let g = move |x: &[f64]| data.dirichlet(x, t, mu);
    f(&g)
}

/// Convenience: the split-axes solution only.
pub fn solve_transient(spec: &ProblemSpec, mu: &[f64]) -> Result<Tensor> {
    Ok(simulate(spec, mu)?.solution)
}

pub fn solve_steady(spec: &ProblemSpec, mu: &[f64]) -> Result<Tensor> {
    if !spec.steady() {
        return Err(argument("solve_steady called on a transient spec"));
    }
    Ok(simulate(spec, mu)?.solution)
}

/// Offline snapshot collection over a parameter set.
#[derive(Debug)]
pub struct SnapshotSet {
    /// Solution tensor `(N_1, .., N_d[, t], mu)`.
    pub solution: Tensor,
    /// Residual tensor with the same axes.
    pub residual: Tensor,
    /// Jacobian tensor `(z_1, .., z_d[, t], mu)` in split-axes format.
    pub jacobian: Tensor,
    pub params: Vec<Vec<f64>>,
    pub map: SparsityMap,
}

impl SnapshotSet {
    pub fn n_mu(&self) -> usize {
        self.params.len()
    }

    /// Solution reshaped to `(N_s, N_t, mu)` for the ST pipeline.
    pub fn solution_st(&self, spec: &ProblemSpec) -> Result<Tensor> {
        reshape_st(&self.solution, spec)
    }

    pub fn residual_st(&self, spec: &ProblemSpec) -> Result<Tensor> {
        reshape_st(&self.residual, spec)
    }

    /// Jacobian back in flat-nonzero layout `(N_z, N_t, mu)`.
    pub fn jacobian_flat(&self, spec: &ProblemSpec) -> Result<Tensor> {
        let flat = crate::hyper::split_axes_to_flat(&self.jacobian, &self.map)?;
        reshape_st_nz(&flat, spec)
    }

    /// Keeps only the first `count` parameter columns (hyper-reduction
    /// training subsets).
    pub fn truncate_params(&self, count: usize) -> Result<SnapshotSet> {
        Ok(SnapshotSet {
            solution: self.solution.slice_last_axis(0, count)?,
            residual: self.residual.slice_last_axis(0, count)?,
            jacobian: self.jacobian.slice_last_axis(0, count)?,
            params: self.params[..count].to_vec(),
            map: self.map.clone(),
        })
    }

    pub fn save(&self, dir: &Path, spec: &ProblemSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.solution.write_ttrb(dir.join("solution.ttrb"))?;
        self.residual.write_ttrb(dir.join("residual.ttrb"))?;
        self.jacobian.write_ttrb(dir.join("jacobian.ttrb"))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.txt"))?);
        writeln!(f, "ttrb-snapshots v1")?;
        writeln!(f, "problem_hash = {:#018x}", spec.fingerprint())?;
        let d = spec.space.d();
        let mut axes: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        if !spec.steady() {
            axes.push("t".into());
        }
        axes.push("mu".into());
        writeln!(f, "axes_solution = {}", axes.join(" "))?;
        let mut zaxes: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
        if !spec.steady() {
            zaxes.push("t".into());
        }
        zaxes.push("mu".into());
        writeln!(f, "axes_jacobian = {}", zaxes.join(" "))?;
        writeln!(f, "n_mu = {}", self.n_mu())?;
        for p in &self.params {
            let line: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "param {}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, spec: &ProblemSpec) -> Result<SnapshotSet> {
        let manifest = std::fs::File::open(dir.join("manifest.txt"))?;
        let mut params = Vec::new();
        let mut hash_ok = false;
        for line in std::io::BufReader::new(manifest).lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("problem_hash = ") {
                let parsed = u64::from_str_radix(rest.trim_start_matches("0x"), 16)
                    .map_err(|_| Error::Format("bad problem hash".into()))?;
                if parsed != spec.fingerprint() {
                    return Err(Error::Consistency(
                        "snapshot manifest does not match the problem".into(),
                    ));
                }
                hash_ok = true;
            } else if let Some(rest) = line.strip_prefix("param ") {
                let p: std::result::Result<Vec<f64>, _> =
                    rest.split_whitespace().map(|v| v.parse::<f64>()).collect();
                params.push(p.map_err(|_| Error::Format("bad parameter line".into()))?);
            }
        }
        if !hash_ok {
            return Err(Error::Format("manifest missing problem hash".into()));
        }
        Ok(SnapshotSet {
            solution: Tensor::read_ttrb(dir.join("solution.ttrb"))?,
            residual: Tensor::read_ttrb(dir.join("residual.ttrb"))?,
            jacobian: Tensor::read_ttrb(dir.join("jacobian.ttrb"))?,
            params,
            map: sparsity_map(&spec.space)?,
        })
    }
}

fn reshape_st(t: &Tensor, spec: &ProblemSpec) -> Result<Tensor> {
    let n_s = spec.space.n_free();
    let n_mu = *t.dims().last().unwrap();
    let n_t = spec.n_steps.max(1);
    t.clone().reshape(vec![n_s, n_t, n_mu])
}

fn reshape_st_nz(t: &Tensor, spec: &ProblemSpec) -> Result<Tensor> {
    let n_z = t.dims()[0];
    let n_mu = *t.dims().last().unwrap();
    let n_t = spec.n_steps.max(1);
    t.clone().reshape(vec![n_z, n_t, n_mu])
}

/// Solves the FOM for each sampled parameter (in parallel) and stacks the
/// snapshots with the parametric axis last.
pub fn generate_snapshots(
    spec: &ProblemSpec,
    n_offline: usize,
    sampler: &Sampler,
) -> Result<SnapshotSet> {
    if n_offline == 0 {
        return Err(argument("need at least one offline parameter"));
    }
    spec.validate()?;
    let params = sampler.draw(n_offline, &spec.param_box)?;
    let sims: Vec<Result<Simulation>> = params.par_iter().map(|mu| simulate(spec, mu)).collect();
    let mut collected = Vec::with_capacity(n_offline);
    for (j, s) in sims.into_iter().enumerate() {
        collected.push(s.map_err(|e| Error::SolveStep {
            step: j,
            message: format!("offline parameter {j}: {e}"),
        })?);
    }
    let map = sparsity_map(&spec.space)?;
    let stack = |get: &dyn Fn(&Simulation) -> &Tensor| -> Result<Tensor> {
        let proto = get(&collected[0]);
        let lead = proto.len();
        let mut dims = proto.dims().to_vec();
        dims.push(n_offline);
        let mut data = vec![0.0f64; lead * n_offline];
        for (j, sim) in collected.iter().enumerate() {
            let src = get(sim);
            if src.dims() != proto.dims() {
                return Err(Error::Consistency(
                    "snapshot shape drift across parameters".into(),
                ));
            }
            for (pos, &v) in src.data().iter().enumerate() {
                data[pos * n_offline + j] = v;
            }
        }
        Tensor::new(dims, data)
    };
    let solution = stack(&|s| &s.solution)?;
    let residual = stack(&|s| &s.residual)?;
    let jac_flat = stack(&|s| &s.jacobian)?;
    if jac_flat.dims()[0] != map.n_z() {
        return Err(Error::Consistency(
            "assembled operator does not carry the tensor-product pattern".into(),
        ));
    }
    let jacobian = crate::hyper::jacobian_snapshots_to_split_axes(&jac_flat, &map)?;
    Ok(SnapshotSet {
        solution,
        residual,
        jacobian,
        params,
        map,
    })
}

/// Point evaluators for the online phase: single entries of the step
/// operator and residual, assembled from the owning elements only.
pub struct EntryEvaluator<'a> {
    spec: &'a ProblemSpec,
    mass_1d: Vec<SparseMatrix>,
    faces: Vec<(usize, bool)>,
}

impl<'a> EntryEvaluator<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        let mass_1d = spec
            .space
            .grids()
            .iter()
            .map(mass_1d)
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            mass_1d,
            faces: spec.data.neumann_faces(),
        })
    }

    /// Entry `(row, col)` of the step operator at time index `n` (1-based;
    /// ignored for steady problems, where the operator is the diffusion
    /// matrix alone).
    pub fn step_matrix_entry(&self, mu: &[f64], n: usize, row: usize, col: usize) -> f64 {
        let spec = self.spec;
        if spec.steady() {
            return with_alpha(spec, mu, 0.0, |alpha| {
                fe::diffusion_entry(&spec.space, alpha, row, col)
            });
        }
        let t_n = n as f64 * spec.dt();
        let a = with_alpha(spec, mu, t_n, |alpha| {
            fe::diffusion_entry(&spec.space, alpha, row, col)
        });
        fe::mass_entry(&self.mass_1d, &spec.space, row, col) / spec.dt() + spec.theta * a
    }

    /// Entry `row` of the residual at time index `n` (1-based; steady
    /// problems use the single right-hand side).
    pub fn residual_entry(&self, mu: &[f64], n: usize, row: usize) -> f64 {
        let spec = self.spec;
        if spec.steady() {
            return with_rhs_data(spec, mu, 0.0, &self.faces, |rd| {
                fe::rhs_entry(&spec.space, rd, row)
            });
        }
        let dt = spec.dt();
        let theta = spec.theta;
        let t_n = n as f64 * dt;
        let t_p = (n - 1) as f64 * dt;
        let f_n = with_rhs_data(spec, mu, t_n, &self.faces, |rd| {
            fe::rhs_entry(&spec.space, rd, row)
        });
        let f_p = with_rhs_data(spec, mu, t_p, &self.faces, |rd| {
            fe::rhs_entry(&spec.space, rd, row)
        });
        let mg_n = with_dirichlet(spec, mu, t_n, |g| {
            fe::mass_dirichlet_entry(&spec.space, g, row)
        });
        let mg_p = with_dirichlet(spec, mu, t_p, |g| {
            fe::mass_dirichlet_entry(&spec.space, g, row)
        });
        let mut value = theta * f_n + (1.0 - theta) * f_p - (mg_n - mg_p) / dt;
        if n == 1 {
            value += self.initial_history_entry(mu, row);
        }
        value
    }

    /// First-step history term `(dt^-1 M - (1-theta) A(0)) u0` at one row,
    /// using only the stencil neighbors of the dof.
    fn initial_history_entry(&self, mu: &[f64], row: usize) -> f64 {
        let spec = self.spec;
        let space = &spec.space;
        let rm = space.free_multi(row);
        let counts = space.free_counts();
        let ranges: Vec<Vec<usize>> = counts
            .iter()
            .enumerate()
            .map(|(j, &n)| (rm[j].saturating_sub(1)..=(rm[j] + 1).min(n - 1)).collect())
            .collect();
        let dims: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        let total_neighbors: usize = dims.iter().product();
        let mut total = 0.0;
        let mut sel = vec![0usize; dims.len()];
        for _ in 0..total_neighbors {
            let neighbor: Vec<usize> = sel.iter().zip(&ranges).map(|(&s, r)| r[s]).collect();
            let x = space.free_coords(&neighbor);
            let u0 = spec.data.initial(&x, mu);
            if u0 != 0.0 {
                let col = space.free_flat(&neighbor);
                let m = fe::mass_entry(&self.mass_1d, space, row, col);
                let a = with_alpha(spec, mu, 0.0, |alpha| {
                    fe::diffusion_entry(space, alpha, row, col)
                });
                total += (m / spec.dt() - (1.0 - spec.theta) * a) * u0;
            }
            for k in (0..sel.len()).rev() {
                sel[k] += 1;
                if sel[k] < dims[k] {
                    break;
                }
                sel[k] = 0;
            }
        }
        total
    }
}
