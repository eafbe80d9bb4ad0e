//! The benchmark problems: Poisson on 2-d / 3-d unit cubes and the heat
//! equation on a 3-d cube, with affine diffusion `mu1 + mu2 x1`, constant
//! forcing, exponential Dirichlet data on the `x1 = 0` face and a Neumann
//! datum on the `x1 = 1` face. Parameters live in `[1, 5]^p`.

use std::sync::Arc;

use ttrb::fe::{CartesianSpace, Grid1D};
use ttrb::fom::{ProblemData, ProblemSpec};

use crate::config::{BenchConfig, Case};

struct PoissonProblem;

impl ProblemData for PoissonProblem {
    fn alpha(&self, x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[0] + mu[1] * x[0]
    }
    fn forcing(&self, _x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[2]
    }
    fn dirichlet(&self, x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        (-mu[3] * x[1]).exp()
    }
    fn neumann(&self, _x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[4]
    }
    fn neumann_faces(&self) -> Vec<(usize, bool)> {
        vec![(0, true)]
    }
    fn alpha_time_dependent(&self) -> bool {
        false
    }
}

struct HeatProblem {
    t_final: f64,
}

impl ProblemData for HeatProblem {
    fn alpha(&self, x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[0] + mu[1] * x[0]
    }
    fn forcing(&self, _x: &[f64], _t: f64, mu: &[f64]) -> f64 {
        mu[2]
    }
    fn dirichlet(&self, x: &[f64], t: f64, mu: &[f64]) -> f64 {
        let tau = 2.0 * std::f64::consts::PI * t / self.t_final;
        (-mu[3] * x[1]).exp() * (1.0 - tau.cos() + tau.sin() / mu[4])
    }
    fn neumann(&self, _x: &[f64], t: f64, mu: &[f64]) -> f64 {
        (2.0 * std::f64::consts::PI * t / self.t_final).sin() / mu[5]
    }
    fn neumann_faces(&self) -> Vec<(usize, bool)> {
        vec![(0, true)]
    }
    fn initial(&self, _x: &[f64], _mu: &[f64]) -> f64 {
        0.0
    }
    fn alpha_time_dependent(&self) -> bool {
        false
    }
}

/// Builds the full-order problem for a configuration: unit cube, `m` cells
/// per direction, Dirichlet on the `x1 = 0` facet.
pub fn problem_spec(cfg: &BenchConfig) -> Result<ProblemSpec, String> {
    let d = cfg.case.d();
    let grids: Vec<Grid1D> = (0..d)
        .map(|i| Grid1D::new(0.0, 1.0, cfg.m, i == 0, false).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let space = CartesianSpace::new(grids).map_err(|e| e.to_string())?;
    let data: Arc<dyn ProblemData> = match cfg.case {
        Case::Poisson2d | Case::Poisson3d => Arc::new(PoissonProblem),
        Case::Heat3d => Arc::new(HeatProblem {
            t_final: cfg.t_final,
        }),
    };
    let transient = cfg.case.transient();
    let spec = ProblemSpec {
        space,
        t_final: if transient { cfg.t_final } else { 0.0 },
        n_steps: if transient { cfg.nt } else { 0 },
        theta: cfg.theta,
        data,
        param_box: vec![(1.0, 5.0); cfg.case.n_params()],
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}
