//! Round-counted first-order and quasi-Newton baselines.
//!
//! Every remote evaluation is a cluster collective and so costs a round,
//! line-search probes included. All methods start from `w = 0` with no
//! rounds spent and stop once `||f'|| <= sqrt(2 lambda epsilon)`.

use std::collections::VecDeque;

use crate::commsim::{ops, Cluster};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, sub};
use crate::localsolve::{solve_local, LocalProblem};
use crate::losses;
use crate::trace::{NewtonTrace, TraceRecord, TraceStatus};

/// Gradient tolerance used for DANE subproblems.
pub const DANE_LOCAL_TOL: f64 = 1e-9;

/// Backtracking never pushes the curvature estimate past this many doublings.
const MAX_PROBES: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    /// Suboptimality target of the scaled objective.
    pub epsilon: f64,
    pub max_rounds: usize,
    pub f_star: Option<f64>,
    /// Stop once the unscaled gap is at most this.
    pub target_gap: Option<f64>,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions { epsilon: 1e-8, max_rounds: 10_000, f_star: None, target_gap: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Step `1 / L` with `L` from the cluster's curvature bound.
    FixedInverseL,
    /// Sufficient-decrease backtracking on a local Lipschitz estimate.
    Backtracking,
}

struct Run<'a> {
    cluster: &'a mut Cluster,
    opts: &'a BaselineOptions,
    trace: NewtonTrace,
    k: usize,
    grad_tol: f64,
}

impl<'a> Run<'a> {
    fn start(cluster: &'a mut Cluster, opts: &'a BaselineOptions, name: &str, w0: &[f64]) -> Result<Self> {
        if !(opts.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", opts.epsilon)));
        }
        let lambda = cluster.loss().lambda();
        let trace = NewtonTrace::new(name, cluster.loss().eta, opts.f_star);
        let grad_tol = (2.0 * lambda * opts.epsilon).sqrt();
        let mut run = Run { cluster, opts, trace, k: 0, grad_tol };
        run.record(w0)?;
        Ok(run)
    }

    fn record(&mut self, w: &[f64]) -> Result<()> {
        let f = self.cluster.objective(w)?;
        let grad_norm = norm(&self.cluster.gradient(w)?);
        let rounds = self.cluster.rounds();
        self.trace.push(TraceRecord { k: self.k, rounds, f, grad_norm, delta: f64::NAN, pcg_iters: 0, mu: f64::NAN, penalty: None, l1: None });
        self.trace.final_w = w.to_vec();
        self.k += 1;
        Ok(())
    }

    /// True when the gradient just computed at the current iterate is small.
    fn converged(&mut self, grad_norm: f64) -> bool {
        if grad_norm <= self.grad_tol {
            self.trace.status = TraceStatus::Converged;
            return true;
        }
        false
    }

    /// Target gap or round budget reached.
    fn exhausted(&mut self) -> bool {
        let last = self.trace.last().expect("initial record");
        if let (Some(target), Some(gap)) = (self.opts.target_gap, self.trace.ell_gap(last)) {
            if gap <= target {
                self.trace.status = TraceStatus::TargetReached;
                return true;
            }
        }
        if self.cluster.rounds() >= self.opts.max_rounds {
            self.trace.status = TraceStatus::RoundCap;
            return true;
        }
        false
    }

    fn finish(mut self) -> NewtonTrace {
        if self.trace.status == TraceStatus::Running {
            self.trace.status = TraceStatus::RoundCap;
        }
        self.trace
    }
}

fn step_from(w: &[f64], t: f64, dir: &[f64]) -> Vec<f64> {
    let mut out = w.to_vec();
    axpy(t, dir, &mut out);
    out
}

/// Distributed gradient descent.
pub fn run_gd(cluster: &mut Cluster, policy: StepPolicy, opts: &BaselineOptions) -> Result<NewtonTrace> {
    let d = cluster.dim();
    let (_, l) = cluster.curvature_bounds();
    let mut w = vec![0.0; d];
    let mut run = Run::start(cluster, opts, "gd", &w)?;
    let mut l_hat = l;
    while !run.exhausted() {
        match policy {
            StepPolicy::FixedInverseL => {
                let g = run.cluster.distributed_grad(&w)?;
                if run.converged(norm(&g)) {
                    break;
                }
                axpy(-1.0 / l, &g, &mut w);
            }
            StepPolicy::Backtracking => {
                let (f, g) = run.cluster.distributed_value_grad(&w)?;
                let gn2 = dot(&g, &g);
                if run.converged(gn2.sqrt()) {
                    break;
                }
                l_hat /= 2.0;
                let mut next = None;
                for _ in 0..MAX_PROBES {
                    let cand = step_from(&w, -1.0 / l_hat, &g);
                    let fc = run.cluster.distributed_value(&cand)?;
                    if fc <= f - gn2 / (2.0 * l_hat) {
                        next = Some(cand);
                        break;
                    }
                    l_hat *= 2.0;
                }
                w = next.ok_or_else(|| Error::Domain("gradient descent line search failed".into()))?;
            }
        }
        run.record(&w)?;
    }
    Ok(run.finish())
}

/// Nesterov's accelerated gradient for strongly convex objectives with a
/// backtracked Lipschitz estimate.
///
/// Each iteration spends one round on `(f, f')` at the extrapolated point
/// and one round per probe of `f`. The estimate is halved at the start of
/// every iteration and doubled only when `f(x) <= f(y) - ||f'(y)||^2 / (2 L)`
/// fails. Momentum is reset whenever the objective increases.
pub fn run_afg(cluster: &mut Cluster, opts: &BaselineOptions) -> Result<NewtonTrace> {
    let d = cluster.dim();
    let (lambda, l) = cluster.curvature_bounds();
    let mut x = vec![0.0; d];
    let mut y = x.clone();
    let mut run = Run::start(cluster, opts, "afg", &x)?;
    let mut l_hat = l;
    let mut f_x = f64::INFINITY;
    while !run.exhausted() {
        let (f_y, g) = run.cluster.distributed_value_grad(&y)?;
        let gn2 = dot(&g, &g);
        if gn2.sqrt() <= run.grad_tol && f_y <= f_x {
            // y itself is accurate enough; keep it as the answer.
            x = y.clone();
            run.record(&x)?;
            run.trace.status = TraceStatus::Converged;
            break;
        }
        l_hat /= 2.0;
        let mut accepted = None;
        for _ in 0..MAX_PROBES {
            let cand = step_from(&y, -1.0 / l_hat, &g);
            let fc = run.cluster.distributed_value(&cand)?;
            if fc <= f_y - gn2 / (2.0 * l_hat) {
                accepted = Some((cand, fc));
                break;
            }
            l_hat *= 2.0;
        }
        let (x_next, f_next) = accepted.ok_or_else(|| Error::Domain("accelerated gradient line search failed".into()))?;
        let q = (lambda / l_hat).min(1.0).sqrt();
        let momentum = (1.0 - q) / (1.0 + q);
        y = if f_next > f_x {
            x_next.clone()
        } else {
            let diff = sub(&x_next, &x);
            step_from(&x_next, momentum, &diff)
        };
        x = x_next;
        f_x = f_next;
        run.record(&x)?;
        if gn2.sqrt() <= run.grad_tol {
            run.trace.status = TraceStatus::Converged;
            break;
        }
    }
    Ok(run.finish())
}

/// Limited-memory BFGS with backtracking Armijo line search. Every trial
/// point costs one `(f, f')` round; the accepted trial's gradient is reused.
pub fn run_lbfgs(cluster: &mut Cluster, memory: usize, opts: &BaselineOptions) -> Result<NewtonTrace> {
    if memory == 0 {
        return Err(Error::InvalidArgument("L-BFGS memory must be at least 1".into()));
    }
    let d = cluster.dim();
    let mut w = vec![0.0; d];
    let mut run = Run::start(cluster, opts, "lbfgs", &w)?;
    if run.exhausted() {
        return Ok(run.finish());
    }
    let (mut f, mut g) = run.cluster.distributed_value_grad(&w)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    loop {
        if run.converged(norm(&g)) {
            break;
        }
        let mut dir = two_loop(&pairs, &g);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            run.trace.warnings.push(format!("iteration {}: non-descent direction, memory cleared", run.k));
            pairs.clear();
            dir = g.iter().map(|x| -x).collect();
            slope = -dot(&g, &g);
        }
        let mut t = if pairs.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_PROBES {
            let cand = step_from(&w, t, &dir);
            let (fc, gc) = run.cluster.distributed_value_grad(&cand)?;
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            if run.cluster.rounds() >= run.opts.max_rounds {
                break;
            }
            t *= 0.5;
        }
        let Some((w_next, f_next, g_next)) = accepted else {
            if run.cluster.rounds() >= run.opts.max_rounds {
                run.trace.status = TraceStatus::RoundCap;
                break;
            }
            return Err(Error::Domain("L-BFGS line search failed".into()));
        };
        let s = sub(&w_next, &w);
        let yv = sub(&g_next, &g);
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        w = w_next;
        f = f_next;
        g = g_next;
        run.record(&w)?;
        if run.exhausted() {
            break;
        }
    }
    Ok(run.finish())
}

/// `-H g` by the two-loop recursion, `H_0 = (s^T y / y^T y) I`.
fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|x| *x *= scale);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

/// DANE: one round for `f'(w_k)`, local solves of
/// `f_i(v) - <f_i'(w_k) - f'(w_k), v> + (mu/2) ||v - w_k||^2`, one round to
/// average the solutions.
pub fn run_dane(cluster: &mut Cluster, mu_dane: f64, opts: &BaselineOptions) -> Result<NewtonTrace> {
    if !(mu_dane >= 0.0) {
        return Err(Error::InvalidArgument(format!("DANE mu must be nonnegative, got {mu_dane}")));
    }
    let d = cluster.dim();
    let mut w = vec![0.0; d];
    let mut run = Run::start(cluster, opts, "dane", &w)?;
    while !run.exhausted() {
        let g = run.cluster.distributed_grad(&w)?;
        if run.converged(norm(&g)) {
            break;
        }
        let loss = *run.cluster.loss();
        let locals = run
            .cluster
            .map_machines(|shard| {
                let gi = losses::local_grad(&loss, shard, &w)?;
                let c = sub(&g, &gi);
                let problem = LocalProblem::new(shard, &loss, mu_dane).with_linear(&c).with_center(&w);
                Ok(solve_local(&problem, DANE_LOCAL_TOL)?.w)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        w = run.cluster.allreduce_tagged(ops::LOCAL_SOLVE, &locals)?;
        run.record(&w)?;
    }
    Ok(run.finish())
}
