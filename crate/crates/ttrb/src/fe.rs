//! Q1 finite elements on Cartesian tensor-product grids.
//!
//! Dofs are ordered lexicographically with direction 1 slowest, matching the
//! first-axis-major merge convention of [`crate::tensors`], so a flat dof
//! vector of length `N_s` and its split-axes form `(N_1, .., N_d)` are the
//! same data. Dirichlet conditions are imposed strongly on whole facets by
//! row/column elimination; lifting values come from nodal interpolation.

use std::collections::HashMap;

use crate::sparse::{kron_sparse, SparseMatrix};
use crate::tensors::{mode_contract, Tensor};
use crate::{argument, Error, Result};

const GAUSS_REF: [f64; 2] = [0.2113248654051871, 0.7886751345948129];

/// Uniform 1-D grid with optional Dirichlet elimination at either endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
    pub dirichlet_lo: bool,
    pub dirichlet_hi: bool,
}

impl Grid1D {
    pub fn new(
        x_lo: f64,
        x_hi: f64,
        n_cells: usize,
        dirichlet_lo: bool,
        dirichlet_hi: bool,
    ) -> Result<Self> {
        if !(x_hi > x_lo) || n_cells == 0 {
            return Err(argument("grid requires x_hi > x_lo and at least one cell"));
        }
        Ok(Self {
            x_lo,
            x_hi,
            n_cells,
            dirichlet_lo,
            dirichlet_hi,
        })
    }

    pub fn h(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn n_free(&self) -> usize {
        self.n_nodes() - self.dirichlet_lo as usize - self.dirichlet_hi as usize
    }

    pub fn node_x(&self, node: usize) -> f64 {
        self.x_lo + node as f64 * self.h()
    }

    /// Free index of a node, or `None` when the node is constrained.
    pub fn free_index(&self, node: usize) -> Option<usize> {
        if self.dirichlet_lo && node == 0 {
            return None;
        }
        if self.dirichlet_hi && node == self.n_cells {
            return None;
        }
        Some(node - self.dirichlet_lo as usize)
    }

    pub fn free_to_node(&self, free: usize) -> usize {
        free + self.dirichlet_lo as usize
    }
}

/// Tensor product of `d` one-dimensional grids.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianSpace {
    grids: Vec<Grid1D>,
}

impl CartesianSpace {
    pub fn new(grids: Vec<Grid1D>) -> Result<Self> {
        if grids.is_empty() {
            return Err(argument("space needs at least one direction"));
        }
        Ok(Self { grids })
    }

    pub fn d(&self) -> usize {
        self.grids.len()
    }

    pub fn grids(&self) -> &[Grid1D] {
        &self.grids
    }

    pub fn free_counts(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.n_free()).collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_counts().iter().product()
    }

    /// Flat free index from per-direction free indices (direction 1 slowest).
    pub fn free_flat(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        for (g, &i) in self.grids.iter().zip(multi) {
            flat = flat * g.n_free() + i;
        }
        flat
    }

    pub fn free_multi(&self, mut flat: usize) -> Vec<usize> {
        let mut multi = vec![0usize; self.d()];
        for k in (0..self.d()).rev() {
            let n = self.grids[k].n_free();
            multi[k] = flat % n;
            flat /= n;
        }
        multi
    }

    /// Physical coordinates of a free dof.
    pub fn free_coords(&self, multi: &[usize]) -> Vec<f64> {
        self.grids
            .iter()
            .zip(multi)
            .map(|(g, &f)| g.node_x(g.free_to_node(f)))
            .collect()
    }
}

/// 1-D P1 mass matrix on free dofs; interior stencil `(h/6)[1, 4, 1]`.
pub fn mass_1d(grid: &Grid1D) -> Result<SparseMatrix> {
    one_d_operator(grid, false)
}

/// 1-D P1 stiffness matrix on free dofs; interior stencil `(1/h)[-1, 2, -1]`.
pub fn stiffness_1d(grid: &Grid1D) -> Result<SparseMatrix> {
    one_d_operator(grid, true)
}

fn one_d_operator(grid: &Grid1D, stiffness: bool) -> Result<SparseMatrix> {
    if grid.n_cells < 2 {
        return Err(argument("1-d operators need at least two cells"));
    }
    let h = grid.h();
    let local = if stiffness {
        [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
    } else {
        [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
    };
    let n = grid.n_free();
    let mut triplets = Vec::with_capacity(4 * grid.n_cells);
    for e in 0..grid.n_cells {
        for (a, row) in local.iter().enumerate() {
            let Some(fr) = grid.free_index(e + a) else {
                continue;
            };
            for (b, &v) in row.iter().enumerate() {
                if let Some(fc) = grid.free_index(e + b) {
                    triplets.push((fr, fc, v));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets, true)
}

/// Rank-`K` Kronecker-sum description of a norm matrix; for the H1 norm,
/// term `k` has the 1-D stiffness in slot `k` and 1-D mass elsewhere.
#[derive(Debug, Clone)]
pub struct KronSum {
    terms: Vec<Vec<SparseMatrix>>,
}

impl KronSum {
    pub fn new(terms: Vec<Vec<SparseMatrix>>) -> Result<Self> {
        if terms.is_empty() || terms.iter().any(|t| t.is_empty()) {
            return Err(argument("empty Kronecker sum"));
        }
        let d = terms[0].len();
        for t in &terms {
            if t.len() != d {
                return Err(argument("Kronecker sum terms must share the factor count"));
            }
        }
        Ok(Self { terms })
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn d(&self) -> usize {
        self.terms[0].len()
    }

    pub fn term(&self, k: usize) -> &[SparseMatrix] {
        &self.terms[k]
    }

    pub fn terms(&self) -> &[Vec<SparseMatrix>] {
        &self.terms
    }

    pub fn factor_sizes(&self) -> Vec<usize> {
        self.terms[0].iter().map(|m| m.n_rows()).collect()
    }

    /// Expands to the assembled matrix; intended for tiny oracles and the
    /// TPOD baseline, not for TT pipelines.
    pub fn expand(&self) -> Result<SparseMatrix> {
        let mut sum: Option<SparseMatrix> = None;
        for term in &self.terms {
            let mut prod = term[0].clone();
            for f in &term[1..] {
                prod = kron_sparse(&prod, f)?;
            }
            sum = Some(match sum {
                None => prod,
                Some(s) => s.add_scaled(&prod, 1.0)?,
            });
        }
        let m = sum.expect("nonempty sum");
        let triplets: Vec<(usize, usize, f64)> = (0..m.n_cols())
            .flat_map(|c| {
                let (rows, vals) = m.col(c);
                rows.iter()
                    .zip(vals)
                    .map(move |(&r, &v)| (r, c, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        SparseMatrix::from_triplets(m.n_rows(), m.n_cols(), &triplets, true)
    }

    /// Applies the operator to a split-axes tensor whose leading `d` axes
    /// are the spatial ones (trailing axes pass through).
    pub fn apply_split(&self, v: &Tensor) -> Result<Tensor> {
        let mut out: Option<Tensor> = None;
        for term in &self.terms {
            let mut w = v.clone();
            for (i, f) in term.iter().enumerate() {
                w = mode_contract(&f.to_dense(), &w, i)?;
            }
            out = Some(match out {
                None => w,
                Some(mut acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(w.data()) {
                        *a += b;
                    }
                    acc
                }
            });
        }
        Ok(out.expect("nonempty sum"))
    }

    /// Inner product `<v, X w>` on split-axes tensors.
    pub fn dot(&self, v: &Tensor, w: &Tensor) -> Result<f64> {
        let xw = self.apply_split(w)?;
        Ok(v.data().iter().zip(xw.data()).map(|(a, b)| a * b).sum())
    }
}

/// The `K = d` terms of the H1 norm matrix on free dofs.
pub fn assemble_norm_matrix(space: &CartesianSpace) -> Result<KronSum> {
    let d = space.d();
    let mass: Vec<SparseMatrix> = space.grids().iter().map(mass_1d).collect::<Result<_>>()?;
    let stiff: Vec<SparseMatrix> = space
        .grids()
        .iter()
        .map(stiffness_1d)
        .collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(d);
    for k in 0..d {
        let mut term = Vec::with_capacity(d);
        for i in 0..d {
            term.push(if i == k {
                stiff[i].clone()
            } else {
                mass[i].clone()
            });
        }
        terms.push(term);
    }
    KronSum::new(terms)
}

/// Per-direction 1-D shape values and derivatives at the two Gauss points.
struct ShapeTable {
    /// `val[p][a]`: hat function `a` at reference point `p`.
    val: [[f64; 2]; 2],
    /// `der[a]`: physical derivative of hat function `a` on the cell.
    der: [f64; 2],
    h: f64,
}

impl ShapeTable {
    fn new(h: f64) -> Self {
        let mut val = [[0.0; 2]; 2];
        for (p, &xi) in GAUSS_REF.iter().enumerate() {
            val[p][0] = 1.0 - xi;
            val[p][1] = xi;
        }
        Self {
            val,
            der: [-1.0 / h, 1.0 / h],
            h,
        }
    }
}

fn for_each_multi(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..total {
        f(&idx);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn gauss_coords(space: &CartesianSpace, e: &[usize], p: &[usize]) -> Vec<f64> {
    space
        .grids()
        .iter()
        .zip(e.iter().zip(p))
        .map(|(g, (&ei, &pi))| g.x_lo + (ei as f64 + GAUSS_REF[pi]) * g.h())
        .collect()
}

/// Flat free index of corner `c` of element `e`, or `None` if constrained.
fn corner_free(space: &CartesianSpace, e: &[usize], c: usize) -> Option<usize> {
    let d = space.d();
    let mut multi = Vec::with_capacity(d);
    for j in 0..d {
        let bit = (c >> (d - 1 - j)) & 1;
        multi.push(space.grids()[j].free_index(e[j] + bit)?);
    }
    Some(space.free_flat(&multi))
}

fn corner_node_coords(space: &CartesianSpace, e: &[usize], c: usize) -> Vec<f64> {
    let d = space.d();
    (0..d)
        .map(|j| {
            let bit = (c >> (d - 1 - j)) & 1;
            space.grids()[j].node_x(e[j] + bit)
        })
        .collect()
}

/// Assembles `A[i,j] = int alpha grad(phi_j) . grad(phi_i)` on free dofs.
/// All element contributions are inserted, so the full Q1 structural
/// pattern is retained even where values cancel.
pub fn assemble_diffusion(
    space: &CartesianSpace,
    alpha: &dyn Fn(&[f64]) -> f64,
) -> Result<SparseMatrix> {
    let d = space.d();
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let cells: Vec<usize> = space.grids().iter().map(|g| g.n_cells).collect();
    let corners = 1usize << d;
    let n = space.n_free();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut local = vec![0.0f64; corners * corners];
    let mut degenerate = false;
    for_each_multi(&cells, |e| {
        local.iter_mut().for_each(|v| *v = 0.0);
        for_each_multi(&vec![2usize; d], |p| {
            let x = gauss_coords(space, e, p);
            let a_val = alpha(&x);
            if !(a_val > 0.0) || !a_val.is_finite() {
                degenerate = true;
                return;
            }
            let mut grads = vec![0.0f64; corners * d];
            for c in 0..corners {
                for k in 0..d {
                    let mut g = 1.0;
                    for j in 0..d {
                        let bit = (c >> (d - 1 - j)) & 1;
                        g *= if j == k {
                            tables[j].der[bit]
                        } else {
                            tables[j].val[p[j]][bit]
                        };
                    }
                    grads[c * d + k] = g;
                }
            }
            for r in 0..corners {
                for c in 0..corners {
                    let mut dot = 0.0;
                    for k in 0..d {
                        dot += grads[r * d + k] * grads[c * d + k];
                    }
                    local[r * corners + c] += weight * a_val * dot;
                }
            }
        });
        for r in 0..corners {
            let Some(fr) = corner_free(space, e, r) else {
                continue;
            };
            for c in 0..corners {
                if let Some(fc) = corner_free(space, e, c) {
                    triplets.push((fr, fc, local[r * corners + c]));
                }
            }
        }
    });
    if degenerate {
        return Err(Error::Consistency(
            "diffusion coefficient not positive at a quadrature point".into(),
        ));
    }
    SparseMatrix::from_triplets(n, n, &triplets, false)
}

/// Problem data hooks consumed by the assembly routines at a fixed time
/// and parameter.
pub struct RhsData<'a> {
    pub alpha: &'a dyn Fn(&[f64]) -> f64,
    pub forcing: &'a dyn Fn(&[f64]) -> f64,
    pub dirichlet: &'a dyn Fn(&[f64]) -> f64,
    pub neumann: &'a dyn Fn(&[f64]) -> f64,
    /// Facets carrying the Neumann datum: `(direction, high_side)`.
    pub neumann_faces: &'a [(usize, bool)],
}

/// Assembles the right-hand side on free dofs: forcing, Neumann facet
/// integrals and subtraction of the Dirichlet lifting column action.
/// Returns the split-axes tensor of dims `free_counts()`.
pub fn assemble_rhs(space: &CartesianSpace, data: &RhsData) -> Result<Tensor> {
    let d = space.d();
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let cells: Vec<usize> = space.grids().iter().map(|g| g.n_cells).collect();
    let corners = 1usize << d;
    let mut rhs = vec![0.0f64; space.n_free()];

    for_each_multi(&cells, |e| {
        let mut g_vals = vec![0.0f64; corners];
        let mut has_dirichlet = false;
        for c in 0..corners {
            if corner_free(space, e, c).is_none() {
                g_vals[c] = (data.dirichlet)(&corner_node_coords(space, e, c));
                has_dirichlet = true;
            }
        }
        for_each_multi(&vec![2usize; d], |p| {
            let x = gauss_coords(space, e, p);
            let f_val = (data.forcing)(&x);
            let a_val = (data.alpha)(&x);
            let mut vals = vec![0.0f64; corners];
            let mut grads = vec![0.0f64; corners * d];
            for c in 0..corners {
                let mut v = 1.0;
                for j in 0..d {
                    let bit = (c >> (d - 1 - j)) & 1;
                    v *= tables[j].val[p[j]][bit];
                }
                vals[c] = v;
                for k in 0..d {
                    let mut g = 1.0;
                    for j in 0..d {
                        let bit = (c >> (d - 1 - j)) & 1;
                        g *= if j == k {
                            tables[j].der[bit]
                        } else {
                            tables[j].val[p[j]][bit]
                        };
                    }
                    grads[c * d + k] = g;
                }
            }
            for r in 0..corners {
                let Some(fr) = corner_free(space, e, r) else {
                    continue;
                };
                let mut v = weight * f_val * vals[r];
                if has_dirichlet {
                    for c in 0..corners {
                        if g_vals[c] != 0.0 {
                            let mut dot = 0.0;
                            for k in 0..d {
                                dot += grads[r * d + k] * grads[c * d + k];
                            }
                            v -= weight * a_val * dot * g_vals[c];
                        }
                    }
                }
                rhs[fr] += v;
            }
        });
    });

    for &(dir, hi) in data.neumann_faces {
        add_neumann_face(space, data.neumann, dir, hi, &mut rhs)?;
    }
    Tensor::new(space.free_counts(), rhs)
}

fn add_neumann_face(
    space: &CartesianSpace,
    neumann: &dyn Fn(&[f64]) -> f64,
    dir: usize,
    hi: bool,
    rhs: &mut [f64],
) -> Result<()> {
    let d = space.d();
    if dir >= d {
        return Err(argument("neumann face direction out of range"));
    }
    let g_dir = &space.grids()[dir];
    let face_node = if hi { g_dir.n_cells } else { 0 };
    let face_x = g_dir.node_x(face_node);
    let tan: Vec<usize> = (0..d).filter(|&j| j != dir).collect();
    if tan.is_empty() {
        if let Some(f) = g_dir.free_index(face_node) {
            rhs[f] += neumann(&[face_x]);
        }
        return Ok(());
    }
    let tables: Vec<ShapeTable> = tan
        .iter()
        .map(|&j| ShapeTable::new(space.grids()[j].h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let cells: Vec<usize> = tan.iter().map(|&j| space.grids()[j].n_cells).collect();
    let corners = 1usize << tan.len();
    for_each_multi(&cells, |e| {
        for_each_multi(&vec![2usize; tan.len()], |p| {
            let mut x = vec![0.0f64; d];
            x[dir] = face_x;
            for (q, &j) in tan.iter().enumerate() {
                let g = &space.grids()[j];
                x[j] = g.x_lo + (e[q] as f64 + GAUSS_REF[p[q]]) * g.h();
            }
            let h_val = neumann(&x);
            for c in 0..corners {
                let mut v = 1.0;
                let mut multi = vec![0usize; d];
                multi[dir] = face_node;
                for (q, &j) in tan.iter().enumerate() {
                    let bit = (c >> (tan.len() - 1 - q)) & 1;
                    v *= tables[q].val[p[q]][bit];
                    multi[j] = e[q] + bit;
                }
                let mut free = vec![0usize; d];
                let mut ok = true;
                for j in 0..d {
                    match space.grids()[j].free_index(multi[j]) {
                        Some(f) => free[j] = f,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    rhs[space.free_flat(&free)] += weight * h_val * v;
                }
            }
        });
    });
    Ok(())
}

/// Action of the free-by-constrained mass block on the Dirichlet values,
/// `M_fc g`, as a split-axes tensor. Needed by the theta-scheme lifting.
pub fn mass_dirichlet_action(
    space: &CartesianSpace,
    dirichlet: &dyn Fn(&[f64]) -> f64,
) -> Result<Tensor> {
    let d = space.d();
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let cells: Vec<usize> = space.grids().iter().map(|g| g.n_cells).collect();
    let corners = 1usize << d;
    let mut rhs = vec![0.0f64; space.n_free()];
    for_each_multi(&cells, |e| {
        let mut g_vals = vec![0.0f64; corners];
        let mut any = false;
        for c in 0..corners {
            if corner_free(space, e, c).is_none() {
                g_vals[c] = dirichlet(&corner_node_coords(space, e, c));
                if g_vals[c] != 0.0 {
                    any = true;
                }
            }
        }
        if !any {
            return;
        }
        for_each_multi(&vec![2usize; d], |p| {
            let mut vals = vec![0.0f64; corners];
            for c in 0..corners {
                let mut v = 1.0;
                for j in 0..d {
                    let bit = (c >> (d - 1 - j)) & 1;
                    v *= tables[j].val[p[j]][bit];
                }
                vals[c] = v;
            }
            for r in 0..corners {
                let Some(fr) = corner_free(space, e, r) else {
                    continue;
                };
                let mut v = 0.0;
                for c in 0..corners {
                    if g_vals[c] != 0.0 {
                        v += vals[r] * vals[c] * g_vals[c];
                    }
                }
                rhs[fr] += weight * v;
            }
        });
    });
    Tensor::new(space.free_counts(), rhs)
}

/// Nodal interpolation of a field on the free dofs.
pub fn nodal_on_free(space: &CartesianSpace, f: &dyn Fn(&[f64]) -> f64) -> Tensor {
    Tensor::from_fn(space.free_counts(), |multi| f(&space.free_coords(multi)))
}

/// Owning cells of a node per direction (one or two).
fn node_cells(grid: &Grid1D, node: usize) -> Vec<usize> {
    let mut cells = Vec::with_capacity(2);
    if node > 0 {
        cells.push(node - 1);
    }
    if node < grid.n_cells {
        cells.push(node);
    }
    cells
}

/// Single diffusion entry `A[row, col]` via element-local quadrature over
/// the shared elements only; matches [`assemble_diffusion`] up to rounding.
pub fn diffusion_entry(
    space: &CartesianSpace,
    alpha: &dyn Fn(&[f64]) -> f64,
    row: usize,
    col: usize,
) -> f64 {
    let d = space.d();
    let rm = space.free_multi(row);
    let cm = space.free_multi(col);
    let mut cell_ranges = Vec::with_capacity(d);
    for (j, g) in space.grids().iter().enumerate() {
        let nr = g.free_to_node(rm[j]);
        let nc = g.free_to_node(cm[j]);
        if nr.abs_diff(nc) > 1 {
            return 0.0;
        }
        let cells: Vec<usize> = node_cells(g, nr)
            .into_iter()
            .filter(|&e| e + 1 >= nc.max(nr) && e <= nc.min(nr))
            .collect();
        if cells.is_empty() {
            return 0.0;
        }
        cell_ranges.push(cells);
    }
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let dims: Vec<usize> = cell_ranges.iter().map(|c| c.len()).collect();
    let mut total = 0.0;
    for_each_multi(&dims, |sel| {
        let e: Vec<usize> = sel.iter().zip(&cell_ranges).map(|(&s, r)| r[s]).collect();
        let mut rbit = vec![0usize; d];
        let mut cbit = vec![0usize; d];
        for j in 0..d {
            rbit[j] = space.grids()[j].free_to_node(rm[j]) - e[j];
            cbit[j] = space.grids()[j].free_to_node(cm[j]) - e[j];
        }
        for_each_multi(&vec![2usize; d], |p| {
            let x = gauss_coords(space, &e, p);
            let a_val = alpha(&x);
            let mut dot = 0.0;
            for k in 0..d {
                let mut gr = 1.0;
                let mut gc = 1.0;
                for j in 0..d {
                    gr *= if j == k {
                        tables[j].der[rbit[j]]
                    } else {
                        tables[j].val[p[j]][rbit[j]]
                    };
                    gc *= if j == k {
                        tables[j].der[cbit[j]]
                    } else {
                        tables[j].val[p[j]][cbit[j]]
                    };
                }
                dot += gr * gc;
            }
            total += weight * a_val * dot;
        });
    });
    total
}

/// Exact mass entry via the tensor-product structure of the Q1 mass matrix.
pub fn mass_entry(
    one_d_mass: &[SparseMatrix],
    space: &CartesianSpace,
    row: usize,
    col: usize,
) -> f64 {
    let rm = space.free_multi(row);
    let cm = space.free_multi(col);
    one_d_mass
        .iter()
        .enumerate()
        .map(|(j, m)| m.get(rm[j], cm[j]))
        .product()
}

/// Single right-hand-side entry via quadrature restricted to the owning
/// elements of the dof; matches [`assemble_rhs`] up to rounding.
pub fn rhs_entry(space: &CartesianSpace, data: &RhsData, row: usize) -> f64 {
    let d = space.d();
    let rm = space.free_multi(row);
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let corners = 1usize << d;
    let cell_ranges: Vec<Vec<usize>> = space
        .grids()
        .iter()
        .enumerate()
        .map(|(j, g)| node_cells(g, g.free_to_node(rm[j])))
        .collect();
    let dims: Vec<usize> = cell_ranges.iter().map(|c| c.len()).collect();
    let mut total = 0.0;
    for_each_multi(&dims, |sel| {
        let e: Vec<usize> = sel.iter().zip(&cell_ranges).map(|(&s, r)| r[s]).collect();
        let mut rbit = vec![0usize; d];
        for j in 0..d {
            rbit[j] = space.grids()[j].free_to_node(rm[j]) - e[j];
        }
        let mut g_vals = vec![0.0f64; corners];
        let mut has_dirichlet = false;
        for c in 0..corners {
            if corner_free(space, &e, c).is_none() {
                g_vals[c] = (data.dirichlet)(&corner_node_coords(space, &e, c));
                has_dirichlet = true;
            }
        }
        for_each_multi(&vec![2usize; d], |p| {
            let x = gauss_coords(space, &e, p);
            let f_val = (data.forcing)(&x);
            let a_val = (data.alpha)(&x);
            let mut v_r = 1.0;
            for j in 0..d {
                v_r *= tables[j].val[p[j]][rbit[j]];
            }
            total += weight * f_val * v_r;
            if has_dirichlet {
                for c in 0..corners {
                    if g_vals[c] == 0.0 {
                        continue;
                    }
                    let mut dot = 0.0;
                    for k in 0..d {
                        let mut gr = 1.0;
                        let mut gc = 1.0;
                        for j in 0..d {
                            let cbit = (c >> (d - 1 - j)) & 1;
                            gr *= if j == k {
                                tables[j].der[rbit[j]]
                            } else {
                                tables[j].val[p[j]][rbit[j]]
                            };
                            gc *= if j == k {
                                tables[j].der[cbit]
                            } else {
                                tables[j].val[p[j]][cbit]
                            };
                        }
                        dot += gr * gc;
                    }
                    total -= weight * a_val * dot * g_vals[c];
                }
            }
        });
    });
    for &(dir, hi) in data.neumann_faces {
        let g = &space.grids()[dir];
        let face_node = if hi { g.n_cells } else { 0 };
        if g.free_to_node(rm[dir]) != face_node {
            continue;
        }
        total += neumann_entry(space, data.neumann, dir, hi, &rm);
    }
    total
}

fn neumann_entry(
    space: &CartesianSpace,
    neumann: &dyn Fn(&[f64]) -> f64,
    dir: usize,
    hi: bool,
    rm: &[usize],
) -> f64 {
    let d = space.d();
    let g_dir = &space.grids()[dir];
    let face_x = g_dir.node_x(if hi { g_dir.n_cells } else { 0 });
    let tan: Vec<usize> = (0..d).filter(|&j| j != dir).collect();
    if tan.is_empty() {
        return neumann(&[face_x]);
    }
    let tables: Vec<ShapeTable> = tan
        .iter()
        .map(|&j| ShapeTable::new(space.grids()[j].h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let cell_ranges: Vec<Vec<usize>> = tan
        .iter()
        .map(|&j| {
            let g = &space.grids()[j];
            node_cells(g, g.free_to_node(rm[j]))
        })
        .collect();
    let dims: Vec<usize> = cell_ranges.iter().map(|c| c.len()).collect();
    let mut total = 0.0;
    for_each_multi(&dims, |sel| {
        let e: Vec<usize> = sel.iter().zip(&cell_ranges).map(|(&s, r)| r[s]).collect();
        for_each_multi(&vec![2usize; tan.len()], |p| {
            let mut x = vec![0.0f64; d];
            x[dir] = face_x;
            let mut v = 1.0;
            for (q, &j) in tan.iter().enumerate() {
                let g = &space.grids()[j];
                x[j] = g.x_lo + (e[q] as f64 + GAUSS_REF[p[q]]) * g.h();
                let bit = g.free_to_node(rm[j]) - e[q];
                v *= tables[q].val[p[q]][bit];
            }
            total += weight * neumann(&x) * v;
        });
    });
    total
}

/// Single entry of `M_fc g`, restricted to the owning elements of the dof.
pub fn mass_dirichlet_entry(
    space: &CartesianSpace,
    dirichlet: &dyn Fn(&[f64]) -> f64,
    row: usize,
) -> f64 {
    let d = space.d();
    let rm = space.free_multi(row);
    let tables: Vec<ShapeTable> = space
        .grids()
        .iter()
        .map(|g| ShapeTable::new(g.h()))
        .collect();
    let weight: f64 = tables.iter().map(|t| t.h / 2.0).product();
    let corners = 1usize << d;
    let cell_ranges: Vec<Vec<usize>> = space
        .grids()
        .iter()
        .enumerate()
        .map(|(j, g)| node_cells(g, g.free_to_node(rm[j])))
        .collect();
    let dims: Vec<usize> = cell_ranges.iter().map(|c| c.len()).collect();
    let mut total = 0.0;
    for_each_multi(&dims, |sel| {
        let e: Vec<usize> = sel.iter().zip(&cell_ranges).map(|(&s, r)| r[s]).collect();
        let mut rbit = vec![0usize; d];
        for j in 0..d {
            rbit[j] = space.grids()[j].free_to_node(rm[j]) - e[j];
        }
        let mut g_vals = vec![0.0f64; corners];
        let mut any = false;
        for c in 0..corners {
            if corner_free(space, &e, c).is_none() {
                g_vals[c] = dirichlet(&corner_node_coords(space, &e, c));
                if g_vals[c] != 0.0 {
                    any = true;
                }
            }
        }
        if !any {
            return;
        }
        for_each_multi(&vec![2usize; d], |p| {
            let mut v_r = 1.0;
            for j in 0..d {
                v_r *= tables[j].val[p[j]][rbit[j]];
            }
            let mut v = 0.0;
            for c in 0..corners {
                if g_vals[c] != 0.0 {
                    let mut v_c = 1.0;
                    for j in 0..d {
                        let bit = (c >> (d - 1 - j)) & 1;
                        v_c *= tables[j].val[p[j]][bit];
                    }
                    v += v_r * v_c * g_vals[c];
                }
            }
            total += weight * v;
        });
    });
    total
}

/// Tensor-product sparsity map: per-direction tridiagonal patterns and the
/// bijection between tuples of 1-D pattern indices and stored entries of
/// the assembled d-D operator.
#[derive(Debug, Clone)]
pub struct SparsityMap {
    /// Per direction: `(row, col)` pairs in CSC order.
    patterns: Vec<Vec<(usize, usize)>>,
    pattern_pos: Vec<HashMap<(usize, usize), usize>>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    pos_of: HashMap<(usize, usize), usize>,
    free_counts: Vec<usize>,
}

impl SparsityMap {
    pub fn nz_counts(&self) -> Vec<usize> {
        self.patterns.iter().map(|p| p.len()).collect()
    }

    pub fn n_z(&self) -> usize {
        self.row_idx.len()
    }

    pub fn d(&self) -> usize {
        self.patterns.len()
    }

    pub fn pattern(&self, dir: usize) -> &[(usize, usize)] {
        &self.patterns[dir]
    }

    pub fn free_counts(&self) -> &[usize] {
        &self.free_counts
    }

    /// Global CSC position of a tuple of per-direction pattern indices.
    pub fn tuple_to_pos(&self, tuple: &[usize]) -> Result<usize> {
        let (r, c) = self.tuple_to_coords(tuple)?;
        self.pos_of
            .get(&(r, c))
            .copied()
            .ok_or_else(|| Error::Consistency("tuple outside the assembled pattern".into()))
    }

    /// Global `(row, col)` of a tuple of per-direction pattern indices.
    pub fn tuple_to_coords(&self, tuple: &[usize]) -> Result<(usize, usize)> {
        if tuple.len() != self.d() {
            return Err(argument("tuple length mismatch"));
        }
        let mut r = 0usize;
        let mut c = 0usize;
        for (j, &z) in tuple.iter().enumerate() {
            let (rj, cj) = *self.patterns[j]
                .get(z)
                .ok_or_else(|| argument("pattern index out of range"))?;
            r = r * self.free_counts[j] + rj;
            c = c * self.free_counts[j] + cj;
        }
        Ok((r, c))
    }

    /// Inverse map: CSC position of the assembled operator to the tuple.
    pub fn pos_to_tuple(&self, pos: usize) -> Result<Vec<usize>> {
        if pos >= self.n_z() {
            return Err(argument("position out of range"));
        }
        let c = match self.col_ptr.binary_search(&pos) {
            Ok(mut k) => {
                while k + 1 < self.col_ptr.len() && self.col_ptr[k + 1] == pos {
                    k += 1;
                }
                k
            }
            Err(k) => k - 1,
        };
        let r = self.row_idx[pos];
        let mut tuple = vec![0usize; self.d()];
        let mut rr = r;
        let mut cc = c;
        for j in (0..self.d()).rev() {
            let n = self.free_counts[j];
            let pair = (rr % n, cc % n);
            rr /= n;
            cc /= n;
            tuple[j] = *self.pattern_pos[j]
                .get(&pair)
                .ok_or_else(|| Error::Consistency("entry outside the product pattern".into()))?;
        }
        Ok(tuple)
    }

    /// Global `(row, col)` of the stored entry at a CSC position.
    pub fn pos_coords(&self, pos: usize) -> Result<(usize, usize)> {
        let tuple = self.pos_to_tuple(pos)?;
        self.tuple_to_coords(&tuple)
    }

    /// Checks that an assembled operator has exactly the product pattern;
    /// guards the split-axes identification against non-tensor stencils.
    pub fn verify_operator(&self, a: &SparseMatrix) -> Result<()> {
        if a.nnz() != self.n_z() {
            return Err(Error::Consistency(format!(
                "operator has {} stored entries, product pattern has {}",
                a.nnz(),
                self.n_z()
            )));
        }
        for c in 0..a.n_cols() {
            let (rows, _) = a.col(c);
            let (lo, hi) = (self.col_ptr[c], self.col_ptr[c + 1]);
            if rows != &self.row_idx[lo..hi] {
                return Err(Error::Consistency(format!(
                    "pattern mismatch in column {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the tensor-product sparsity map of the Q1 operator on `space`.
pub fn sparsity_map(space: &CartesianSpace) -> Result<SparsityMap> {
    let free_counts = space.free_counts();
    let mut patterns = Vec::with_capacity(space.d());
    let mut pattern_pos = Vec::with_capacity(space.d());
    for &n in &free_counts {
        let mut pat = Vec::with_capacity(3 * n);
        for c in 0..n {
            for r in c.saturating_sub(1)..=(c + 1).min(n - 1) {
                pat.push((r, c));
            }
        }
        let mut pos = HashMap::with_capacity(pat.len());
        for (k, &rc) in pat.iter().enumerate() {
            pos.insert(rc, k);
        }
        patterns.push(pat);
        pattern_pos.push(pos);
    }
    // Product pattern in global CSC order: columns in flat order, neighbor
    // rows generated lexicographically, which is ascending flat order.
    let n_s = space.n_free();
    let mut col_ptr = Vec::with_capacity(n_s + 1);
    let mut row_idx = Vec::new();
    col_ptr.push(0usize);
    for c in 0..n_s {
        let cm = space.free_multi(c);
        let neighbor_lists: Vec<Vec<usize>> = free_counts
            .iter()
            .enumerate()
            .map(|(j, &n)| (cm[j].saturating_sub(1)..=(cm[j] + 1).min(n - 1)).collect())
            .collect();
        let dims: Vec<usize> = neighbor_lists.iter().map(|l| l.len()).collect();
        for_each_multi(&dims, |sel| {
            let rm: Vec<usize> = sel
                .iter()
                .zip(&neighbor_lists)
                .map(|(&s, l)| l[s])
                .collect();
            row_idx.push(space.free_flat(&rm));
        });
        col_ptr.push(row_idx.len());
    }
    let expected: usize = patterns.iter().map(|p| p.len()).product();
    if expected != row_idx.len() {
        return Err(Error::Consistency(
            "product pattern size does not factor over directions".into(),
        ));
    }
    let mut pos_of = HashMap::with_capacity(row_idx.len());
    for c in 0..n_s {
        for k in col_ptr[c]..col_ptr[c + 1] {
            pos_of.insert((row_idx[k], c), k);
        }
    }
    Ok(SparsityMap {
        patterns,
        pattern_pos,
        col_ptr,
        row_idx,
        pos_of,
        free_counts,
    })
}
