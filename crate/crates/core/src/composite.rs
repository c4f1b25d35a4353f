//! Inexact proximal Newton for `F(w) = f(w) + Psi(w)`.
//!
//! The Newton subproblem is
//! `min_v 1/2 v^T f''(w_k) v - v^T f'(w_k) + Psi(w_k - v)`
//! and the step is the damped update of the smooth method. Inner solves use
//! a preconditioned accelerated proximal gradient loop (one round per
//! iteration); its master-side subproblems are solved locally.

use crate::commsim::{ops, Cluster, ClusterCurvature};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, sub};
use crate::localsolve::INIT_TOL;
use crate::losses::{self, LocalCurvature};
use crate::data::DatasetShard;
use crate::solver::{damped_newton_update, SolverConfig};
use crate::trace::{NewtonTrace, TraceRecord, TraceStatus};

/// Tolerance of the master-side subproblem solves.
pub const MASTER_TOL: f64 = 1e-10;

const LOCAL_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `sigma ||w||_1`
    L1(f64),
    /// Indicator of `||w|| <= radius`.
    L2Ball(f64),
}

impl Penalty {
    pub fn validate(self) -> Result<Self> {
        match self {
            Penalty::L1(s) if s >= 0.0 => Ok(self),
            Penalty::L2Ball(r) if r > 0.0 => Ok(self),
            _ => Err(Error::InvalidArgument(format!("invalid penalty {self:?}"))),
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match *self {
            Penalty::L1(s) => s * l1_norm(w),
            Penalty::L2Ball(r) => {
                if norm(w) <= r * (1.0 + 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `prox_{t Psi}(x)`.
    pub fn prox(&self, x: &[f64], t: f64) -> Vec<f64> {
        match *self {
            Penalty::L1(s) => prox_l1(x, s * t),
            Penalty::L2Ball(r) => {
                let n = norm(x);
                if n <= r {
                    x.to_vec()
                } else {
                    x.iter().map(|v| v * r / n).collect()
                }
            }
        }
    }
}

pub fn l1_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

/// Componentwise soft-thresholding.
pub fn prox_l1(x: &[f64], threshold: f64) -> Vec<f64> {
    x.iter().map(|&v| v.signum() * (v.abs() - threshold).max(0.0)).collect()
}

/// Gradient mapping of the Newton subproblem at `v`, from a known `H v`:
/// `(w - v) - prox_{Psi/L}(w - v + (H v - f') / L)`.
///
/// It vanishes exactly at the subproblem minimizer, and for `Psi = 0` equals
/// `-(H v - f') / L`.
pub fn gradient_mapping_from(w: &[f64], v: &[f64], hv: &[f64], grad: &[f64], penalty: &Penalty, l: f64) -> Vec<f64> {
    let base = sub(w, v);
    let mut arg = base.clone();
    for ((a, h), g) in arg.iter_mut().zip(hv).zip(grad) {
        *a += (h - g) / l;
    }
    sub(&base, &penalty.prox(&arg, 1.0 / l))
}

/// Gradient mapping at `v`; one round for `f''(w) v`.
pub fn gradient_mapping(cluster: &mut Cluster, w: &[f64], grad: &[f64], v: &[f64], penalty: &Penalty, l: f64) -> Result<Vec<f64>> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("L must be positive, got {l}")));
    }
    let hv = cluster.distributed_hessvec(w, v)?;
    Ok(gradient_mapping_from(w, v, &hv, grad, penalty, l))
}

/// Smooth strongly convex piece of a local composite problem.
pub(crate) trait SmoothPart {
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F: Fn(&[f64]) -> Result<Vec<f64>>> SmoothPart for F {
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self(x)
    }
}

/// Accelerated proximal gradient on `q + Psi` with `q` being `m`-strongly
/// convex and `l`-smooth, with gradient-based restarts. Stops when the
/// scaled gradient mapping `l ||x - prox(x - q'(x)/l)||` is at most `tol`.
pub(crate) fn accel_prox_grad<Q: SmoothPart>(q: &Q, penalty: &Penalty, x0: Vec<f64>, l: f64, m: f64, tol: f64) -> Result<(Vec<f64>, usize)> {
    let kappa_root = (m / l).clamp(0.0, 1.0).sqrt();
    let momentum = (1.0 - kappa_root) / (1.0 + kappa_root);
    let mut x = x0;
    let mut y = x.clone();
    for it in 0..LOCAL_MAX_ITERS {
        let gy = q.grad(&y)?;
        let mut step = y.clone();
        axpy(-1.0 / l, &gy, &mut step);
        let x_next = penalty.prox(&step, 1.0 / l);
        let map = sub(&y, &x_next);
        if l * norm(&map) <= tol {
            return Ok((x_next, it + 1));
        }
        let diff = sub(&x_next, &x);
        // restart when momentum points against the descent direction
        y = if dot(&map, &diff) > 0.0 {
            x_next.clone()
        } else {
            let mut yy = x_next.clone();
            axpy(momentum, &diff, &mut yy);
            yy
        };
        x = x_next;
    }
    Err(Error::Domain(format!("accelerated proximal gradient did not reach {tol:e} in {LOCAL_MAX_ITERS} iterations")))
}

/// Largest eigenvalue bound of a local Hessian from its row norms.
fn local_smoothness(cluster: &Cluster, shard: &DatasetShard) -> f64 {
    let loss = cluster.loss();
    let r = shard.max_row_norm();
    loss.lambda() + loss.eta * r * r * loss.kind.max_curvature()
}

/// `argmin_w f_i(w) + (rho/2) ||w||^2 + Psi(w)` on one machine.
pub fn solve_local_composite(cluster: &Cluster, machine: usize, rho: f64, penalty: &Penalty, tol: f64) -> Result<Vec<f64>> {
    let shard = &cluster.shards()[machine];
    let loss = *cluster.loss();
    let q = |x: &[f64]| -> Result<Vec<f64>> {
        let mut g = losses::local_grad(&loss, shard, x)?;
        axpy(rho, x, &mut g);
        Ok(g)
    };
    let l = local_smoothness(cluster, shard) + rho;
    Ok(accel_prox_grad(&q, penalty, vec![0.0; cluster.dim()], l, loss.lambda() + rho, tol)?.0)
}

/// Average of the local composite minimizers (one round).
pub fn composite_init(cluster: &mut Cluster, rho: f64, penalty: &Penalty) -> Result<Vec<f64>> {
    let locals = (0..cluster.m())
        .map(|i| solve_local_composite(cluster, i, rho, penalty, INIT_TOL))
        .collect::<Result<Vec<_>>>()?;
    cluster.allreduce_tagged(ops::INIT, &locals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PapgResult {
    pub v: Vec<f64>,
    /// `sqrt(v^T f''(w) v)`.
    pub delta: f64,
    pub mapping_norm: f64,
    pub iters: usize,
    pub rounds_used: usize,
    pub converged: bool,
}

/// Momentum `(sqrt(1 + 2 mu / lambda) - 1) / (sqrt(1 + 2 mu / lambda) + 1)`.
pub fn papg_momentum(mu: f64, lambda: f64) -> f64 {
    let s = (1.0 + 2.0 * mu / lambda).sqrt();
    (s - 1.0) / (s + 1.0)
}

/// Inputs of one inner solve at `w_k`.
pub struct InnerProblem<'a> {
    pub w: &'a [f64],
    pub grad: &'a [f64],
    pub curv: &'a ClusterCurvature,
    pub penalty: &'a Penalty,
    /// Constant of the gradient mapping.
    pub l: f64,
    pub lambda: f64,
}

/// Preconditioned accelerated proximal gradient on the Newton subproblem.
///
/// Each round returns `(f'' s, f'' v)` for the current pair; the mapping at
/// `v` is checked first and the master then solves
/// `min_v 1/2 (v - s)^T P (v - s) + <f'' s - f', v - s> + Psi(w - v)` with
/// `P = f_0'' + mu I`. Returns the partial result after `iter_cap` rounds.
///
/// Unlike PCG, the accelerated scheme needs `P` to dominate `f''`, i.e.
/// `mu >= ||f_0'' - f''||`; with a smaller shift it can diverge.
pub fn inner_papg(cluster: &mut Cluster, prob: &InnerProblem<'_>, mu: f64, eps: f64, iter_cap: usize) -> Result<PapgResult> {
    if !(prob.lambda > 0.0 && mu >= 0.0 && eps > 0.0 && iter_cap > 0) {
        return Err(Error::InvalidArgument("inner solve needs lambda > 0, mu >= 0, eps > 0 and a positive cap".into()));
    }
    let start = cluster.rounds();
    let d = prob.w.len();
    let shards = cluster.shared_shards();
    let master = &shards[0];
    let p_curv: &LocalCurvature = prob.curv.master();
    let lp = local_smoothness(cluster, master) + mu;
    let momentum = papg_momentum(mu, prob.lambda);

    let mut v = vec![0.0; d];
    let mut s = vec![0.0; d];
    let mut hs = vec![0.0; d];
    let mut hv = vec![0.0; d];
    let mut mapping_norm = f64::INFINITY;
    let mut iters = 0;
    for t in 0..=iter_cap {
        if t > 0 {
            (hs, hv) = cluster.hessvec_pair_at(prob.curv, &s, &v)?;
            mapping_norm = norm(&gradient_mapping_from(prob.w, &v, &hv, prob.grad, prob.penalty, prob.l));
            if mapping_norm <= eps {
                break;
            }
            if t == iter_cap {
                break;
            }
        }
        iters = t + 1;
        // Master step, in the variable u = w - v.
        let c = sub(&hs, prob.grad);
        let w = prob.w;
        let s_now = s.clone();
        let q = |u: &[f64]| -> Result<Vec<f64>> {
            let z: Vec<f64> = w.iter().zip(u).zip(&s_now).map(|((wi, ui), si)| wi - ui - si).collect();
            let pz = p_curv.apply_shifted(master, mu, &z);
            Ok(pz.iter().zip(&c).map(|(a, b)| -a - b).collect())
        };
        let u0 = sub(prob.w, &v);
        let (u, _) = accel_prox_grad(&q, prob.penalty, u0, lp, prob.lambda + mu, MASTER_TOL)?;
        let v_next = sub(prob.w, &u);
        let diff = sub(&v_next, &v);
        s = v_next.clone();
        axpy(momentum, &diff, &mut s);
        v = v_next;
    }
    let result = PapgResult {
        delta: dot(&v, &hv).max(0.0).sqrt(),
        converged: mapping_norm <= eps,
        v,
        mapping_norm,
        iters,
        rounds_used: cluster.rounds() - start,
    };
    Ok(result)
}

/// Default inner round cap.
pub const PAPG_CAP: usize = 1000;

fn record(cluster: &Cluster, trace: &mut NewtonTrace, penalty: &Penalty, w: &[f64], k: usize, delta: f64, iters: usize, mu: f64) -> Result<()> {
    let f = cluster.objective(w)?;
    let grad_norm = norm(&cluster.gradient(w)?);
    trace.push(TraceRecord {
        k,
        rounds: cluster.rounds(),
        f,
        grad_norm,
        delta,
        pcg_iters: iters,
        mu,
        penalty: Some(penalty.value(w)),
        l1: Some(l1_norm(w)),
    });
    Ok(())
}

/// DiSCO for `f + Psi`. Stops when the gradient mapping at `v = 0` has norm
/// at most `(1 - beta) sqrt(epsilon lambda)`.
pub fn run_disco_composite(cluster: &mut Cluster, config: &SolverConfig, penalty: Penalty) -> Result<NewtonTrace> {
    config.validate()?;
    let penalty = penalty.validate()?;
    let (lambda, l) = cluster.curvature_bounds();
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("composite Newton needs gamma > 0".into()));
    }
    let tol = config.tolerance(lambda, l);
    let cap = config.pcg_cap.unwrap_or(PAPG_CAP);
    let mut trace = NewtonTrace::new("disco_composite", cluster.loss().eta, config.f_star);
    let mut w = composite_init(cluster, config.rho, &penalty)?;
    record(cluster, &mut trace, &penalty, &w, 0, f64::NAN, 0, f64::NAN)?;
    let threshold = (1.0 - config.beta) * (config.epsilon * lambda).sqrt();
    for k in 0..config.max_outer {
        if experiment_stop(config, &mut trace) {
            break;
        }
        let grad = cluster.distributed_grad(&w)?;
        let zero = vec![0.0; w.len()];
        let g0 = gradient_mapping_from(&w, &zero, &zero, &grad, &penalty, l);
        if norm(&g0) <= threshold {
            trace.status = TraceStatus::Converged;
            break;
        }
        let curv = cluster.curvature(&w)?;
        let eps = tol.eps(norm(&grad));
        let prob = InnerProblem { w: &w, grad: &grad, curv: &curv, penalty: &penalty, l, lambda };
        let res = inner_papg(cluster, &prob, config.mu, eps, cap)?;
        if !res.converged {
            trace.warnings.push(format!(
                "outer {k}: inner solve stopped at {} rounds with mapping norm {:.3e} > {eps:.3e}",
                res.rounds_used, res.mapping_norm
            ));
        }
        w = damped_newton_update(&w, &res.v, res.delta);
        if let Penalty::L2Ball(_) = penalty {
            // the damped point is a convex combination of feasible points
            w = penalty.prox(&w, 1.0);
        }
        record(cluster, &mut trace, &penalty, &w, k + 1, res.delta, res.rounds_used, config.mu)?;
    }
    if trace.status == TraceStatus::Running {
        trace.status = TraceStatus::MaxOuter;
    }
    trace.final_w = w;
    Ok(trace)
}

fn experiment_stop(config: &SolverConfig, trace: &mut NewtonTrace) -> bool {
    let last = trace.last().expect("initial record");
    if let (Some(target), Some(gap)) = (config.target_gap, trace.ell_gap(last)) {
        if gap <= target {
            trace.status = TraceStatus::TargetReached;
            return true;
        }
    }
    if config.max_rounds.is_some_and(|cap| last.rounds >= cap) {
        trace.status = TraceStatus::RoundCap;
        return true;
    }
    false
}

/// High-precision centralized minimizer of `f + Psi` by accelerated proximal
/// gradient on the pooled objective. Returns `(w, F(w))`.
pub fn composite_reference(cluster: &Cluster, penalty: &Penalty, tol: f64) -> Result<(Vec<f64>, f64)> {
    let (lambda, l) = cluster.curvature_bounds();
    let q = |x: &[f64]| cluster.gradient(x);
    let (w, _) = accel_prox_grad(&q, penalty, vec![0.0; cluster.dim()], l, lambda, tol)?;
    let f = cluster.objective(&w)? + penalty.value(&w);
    Ok((w, f))
}
