//! Master-local and per-machine subproblem solvers.
//!
//! Everything here runs on one machine's shard and costs no communication,
//! except [`init_point`] which averages the local solutions in one round.
//! Solvers are deterministic Newton/CG so runs are bit-reproducible.

use crate::commsim::{ops, Cluster};
use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::linalg::{self, cg_cap, check_dim, conjugate_gradient, dot, norm};
use crate::losses::{self, LocalCurvature, RegularizedLoss};

/// Gradient-norm tolerance for the initialization solves.
pub const INIT_TOL: f64 = 1e-9;
/// Relative residual for applying `(f_0'' + mu I)^{-1}`.
pub const PRECOND_TOL: f64 = 1e-10;

const MAX_NEWTON: usize = 100;

/// `min_w f_i(w) + <c, w> + (rho/2) ||w - center||^2` on one shard.
#[derive(Debug, Clone, Copy)]
pub struct LocalProblem<'a> {
    pub shard: &'a DatasetShard,
    pub loss: &'a RegularizedLoss,
    pub rho: f64,
    pub linear: Option<&'a [f64]>,
    pub center: Option<&'a [f64]>,
}

impl<'a> LocalProblem<'a> {
    pub fn new(shard: &'a DatasetShard, loss: &'a RegularizedLoss, rho: f64) -> Self {
        LocalProblem { shard, loss, rho, linear: None, center: None }
    }

    pub fn with_linear(mut self, c: &'a [f64]) -> Self {
        self.linear = Some(c);
        self
    }

    pub fn with_center(mut self, center: &'a [f64]) -> Self {
        self.center = Some(center);
        self
    }

    pub fn value_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (mut f, mut g) = losses::local_value_grad(self.loss, self.shard, w)?;
        if let Some(c) = self.linear {
            f += dot(c, w);
            linalg::axpy(1.0, c, &mut g);
        }
        if self.rho > 0.0 {
            let diff = match self.center {
                Some(z) => linalg::sub(w, z),
                None => w.to_vec(),
            };
            f += 0.5 * self.rho * dot(&diff, &diff);
            linalg::axpy(self.rho, &diff, &mut g);
        }
        Ok((f, g))
    }
}

/// Result of a local Newton solve.
#[derive(Debug, Clone)]
pub struct LocalSolveReport {
    pub w: Vec<f64>,
    pub grad_norm: f64,
    pub newton_iters: usize,
    /// Objective at every accepted iterate, starting point included.
    pub objective_history: Vec<f64>,
}

/// Newton's method with CG inner solves and Armijo backtracking, started
/// at `center` (or zero). Stops when the gradient norm is at most `tol`.
pub fn solve_local(problem: &LocalProblem<'_>, tol: f64) -> Result<LocalSolveReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let d = problem.shard.dim;
    for v in problem.linear.iter().chain(problem.center.iter()) {
        check_dim(d, v.len())?;
    }
    let mut w = problem.center.map(|c| c.to_vec()).unwrap_or_else(|| vec![0.0; d]);
    let (mut f, mut g) = problem.value_grad(&w)?;
    let mut history = vec![f];
    for iter in 0..MAX_NEWTON {
        let gn = norm(&g);
        if gn <= tol {
            return Ok(LocalSolveReport { w, grad_norm: gn, newton_iters: iter, objective_history: history });
        }
        let curv = LocalCurvature::new(problem.loss, problem.shard, &w)?;
        let forcing = (0.1f64).min(gn.sqrt()).max(1e-12);
        let step = conjugate_gradient(|v| curv.apply_shifted(problem.shard, problem.rho, v), &g, forcing, cg_cap(d))?.x;
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = None;
        // Below round-off of f the Armijo test is noise; go straight to the
        // full step, judged by the gradient.
        let probes = if slope <= 1e-12 * (1.0 + f.abs()) { 0 } else { 60 };
        for _ in 0..probes {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a - t * b).collect();
            let (ft, gt) = problem.value_grad(&trial)?;
            if ft <= f - 1e-4 * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ft, gt)) => {
                w = trial;
                f = ft;
                g = gt;
                history.push(f);
            }
            None => {
                // Round-off floor: the objective no longer resolves the step, so
                // progress is judged by the gradient.
                let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a - b).collect();
                let (ft, gt) = problem.value_grad(&trial)?;
                if norm(&gt) < gn {
                    w = trial;
                    f = ft;
                    g = gt;
                    history.push(f);
                } else {
                    return Err(Error::LocalSolve { best: w, grad_norm: gn });
                }
            }
        }
    }
    let gn = norm(&g);
    if gn <= tol {
        Ok(LocalSolveReport { w, grad_norm: gn, newton_iters: MAX_NEWTON, objective_history: history })
    } else {
        Err(Error::LocalSolve { best: w, grad_norm: gn })
    }
}

/// `argmin_w f_i(w) + (rho/2) ||w||^2`.
pub fn solve_local_regularized(shard: &DatasetShard, loss: &RegularizedLoss, rho: f64, tol: f64) -> Result<Vec<f64>> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be nonnegative, got {rho}")));
    }
    Ok(solve_local(&LocalProblem::new(shard, loss, rho), tol)?.w)
}

/// Every machine solves its regularized local problem; one round averages
/// the solutions into `w_0`.
pub fn init_point(cluster: &mut Cluster, rho: f64) -> Result<Vec<f64>> {
    init_point_with_tol(cluster, rho, INIT_TOL)
}

pub fn init_point_with_tol(cluster: &mut Cluster, rho: f64, tol: f64) -> Result<Vec<f64>> {
    let loss = *cluster.loss();
    let locals = cluster.map_machines(|s| solve_local_regularized(s, &loss, rho, tol)).into_iter().collect::<Result<Vec<_>>>()?;
    cluster.allreduce_tagged(ops::INIT, &locals)
}

/// `rho = sqrt(6) G / (sqrt(n) D)`.
pub fn rho_default(g: f64, d: f64, n: f64) -> Result<f64> {
    if !(g > 0.0 && d > 0.0 && n > 0.0) {
        return Err(Error::InvalidArgument("G, D and n must be positive".into()));
    }
    Ok(6f64.sqrt() * g / (n.sqrt() * d))
}

/// Solves `(f_0''(w) + mu I) s = r` to relative residual `tol` by CG on
/// master-local Hessian products.
pub fn apply_preconditioner_inverse(
    master: &DatasetShard,
    loss: &RegularizedLoss,
    w: &[f64],
    mu: f64,
    r: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let curv = LocalCurvature::new(loss, master, w)?;
    apply_preconditioner_inverse_at(master, &curv, mu, r, tol)
}

/// Same as [`apply_preconditioner_inverse`] with the master curvature
/// already evaluated.
pub fn apply_preconditioner_inverse_at(master: &DatasetShard, curv: &LocalCurvature, mu: f64, r: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {mu}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    check_dim(curv.dim(), r.len())?;
    Ok(conjugate_gradient(|v| curv.apply_shifted(master, mu, v), r, tol, cg_cap(r.len()))?.x)
}
