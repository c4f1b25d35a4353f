//! Outer Newton loops and the scalar formulas they rely on.
//!
//! All objectives here are the scaled `f = eta * ell`; `epsilon` targets the
//! suboptimality of `f`. Traces additionally report the unscaled gap.

use crate::commsim::Cluster;
use crate::error::{Error, Result};
use crate::linalg::{axpy, conjugate_gradient, dot, norm};
use crate::localsolve::{apply_preconditioner_inverse_at, init_point, PRECOND_TOL};
use crate::pcg::{distributed_pcg_observed, IterCap, PcgResult, Tolerance};
use crate::trace::{NewtonTrace, TraceRecord, TraceStatus};

/// Largest `epsilon` for which the self-concordant stopping rule is valid.
pub const SELF_CONCORDANT_STOP_LIMIT: f64 = 0.68 * 0.68;

/// Consecutive objective increases treated as divergence.
pub const DIVERGENCE_STREAK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Disco,
    AdaptiveDisco,
    SimpleDisco,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Disco => "disco",
            Algorithm::AdaptiveDisco => "adaptive_disco",
            Algorithm::SimpleDisco => "simple_disco",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToleranceMode {
    Linear,
    Superlinear,
    /// `eps_k = c ||f'(w_k)||`.
    Practical(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub mu: f64,
    /// Starting shift for the adaptive variant.
    pub mu0: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub tolerance_mode: ToleranceMode,
    pub max_outer: usize,
    /// Overrides the PCG iteration cap of the non-adaptive variant.
    pub pcg_cap: Option<usize>,
    /// Reference optimum of the scaled objective, for gap reporting.
    pub f_star: Option<f64>,
    /// Stop once the unscaled gap is at most this.
    pub target_gap: Option<f64>,
    /// Stop once this many rounds have been spent.
    pub max_rounds: Option<usize>,
    /// Evaluate `w_k - v^(t) / (1 + delta^(t))` after every PCG round.
    pub record_intermediate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Disco,
            beta: 1.0 / 20.0,
            mu: 0.0,
            mu0: 1e-3,
            rho: 0.0,
            epsilon: 1e-8,
            tolerance_mode: ToleranceMode::Linear,
            max_outer: 100,
            pcg_cap: None,
            f_star: None,
            target_gap: None,
            max_rounds: None,
            record_intermediate: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.mu >= 0.0 && self.rho >= 0.0) {
            return Err(Error::InvalidArgument("mu and rho must be nonnegative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.algorithm == Algorithm::AdaptiveDisco && !(self.mu0 > 0.0) {
            return Err(Error::InvalidArgument("mu0 must be positive".into()));
        }
        if let ToleranceMode::Practical(c) = self.tolerance_mode {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidArgument(format!("practical tolerance factor must lie in (0, 1), got {c}")));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, lambda: f64, l: f64) -> Tolerance {
        match self.tolerance_mode {
            ToleranceMode::Linear => Tolerance::Linear { beta: self.beta, lambda, l },
            ToleranceMode::Superlinear => Tolerance::Superlinear { lambda, l },
            ToleranceMode::Practical(c) => Tolerance::Practical(c),
        }
    }
}

/// `t - ln(1 + t)` for `t >= 0`.
pub fn omega(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("omega needs t >= 0, got {t}")));
    }
    if t.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if t < 1e-3 {
        // alternating series; the direct form cancels catastrophically
        return Ok(series(t, -1.0));
    }
    Ok(t - t.ln_1p())
}

/// `-t - ln(1 - t)` for `t` in `[0, 1)`.
pub fn omega_star(t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Domain(format!("omega_star needs t in [0, 1), got {t}")));
    }
    if t < 1e-3 {
        return Ok(series(t, 1.0));
    }
    Ok(-t - (-t).ln_1p())
}

// sum_{j>=2} sign^j t^j / j
fn series(t: f64, sign: f64) -> f64 {
    let mut term = sign * t;
    let mut s = 0.0;
    for j in 2..12 {
        term *= sign * t;
        s += term / j as f64;
    }
    s
}

/// `beta sqrt(lambda / L) ||f'||`.
pub fn epsilon_k(grad_norm: f64, lambda: f64, l: f64, beta: f64) -> f64 {
    beta * (lambda / l).sqrt() * grad_norm
}

/// `sqrt(lambda)/2 * min(omega(r)/2, omega(r)^1.5 / 10)` with `r = ||f'|| / sqrt(L)`.
pub fn epsilon_k_superlinear(grad_norm: f64, lambda: f64, l: f64) -> f64 {
    let w = omega(grad_norm / l.sqrt()).unwrap_or(f64::NAN);
    0.5 * lambda.sqrt() * (0.5 * w).min(w.powf(1.5) / 10.0)
}

/// `w - v / (1 + delta)`.
pub fn damped_newton_update(w: &[f64], v: &[f64], delta: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    axpy(-1.0 / (1.0 + delta), v, &mut out);
    out
}

/// `delta <= (1 - beta) sqrt(epsilon)`.
pub fn stop_check(delta: f64, beta: f64, epsilon: f64) -> bool {
    delta <= (1.0 - beta) * epsilon.sqrt()
}

/// Stopping rule with the strong-convexity fallback for large `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// `delta_k <= (1 - beta) sqrt(epsilon)`.
    SelfConcordant { beta: f64, epsilon: f64 },
    /// `||f'(w_k)|| <= sqrt(2 lambda epsilon)`.
    StrongConvexity { lambda: f64, epsilon: f64 },
}

impl StopRule {
    /// Picks the rule; the second value is a warning when falling back.
    pub fn choose(beta: f64, epsilon: f64, lambda: f64) -> (StopRule, Option<String>) {
        if epsilon > SELF_CONCORDANT_STOP_LIMIT {
            let msg = format!("epsilon = {epsilon} exceeds 0.68^2; stopping on ||f'|| <= sqrt(2 lambda epsilon) instead");
            (StopRule::StrongConvexity { lambda, epsilon }, Some(msg))
        } else {
            (StopRule::SelfConcordant { beta, epsilon }, None)
        }
    }

    pub fn fires(&self, delta: f64, grad_norm: f64) -> bool {
        match *self {
            StopRule::SelfConcordant { beta, epsilon } => stop_check(delta, beta, epsilon),
            StopRule::StrongConvexity { lambda, epsilon } => grad_norm <= (2.0 * lambda * epsilon).sqrt(),
        }
    }
}

/// Smallest nonnegative `K` with
/// `K >= ceil(gap / (omega(1/6)/2)) + ceil(log2(2 omega(1/6) / epsilon))`.
pub fn iteration_bound_k(f0_gap: f64, epsilon: f64) -> Result<usize> {
    if !(f0_gap >= 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidArgument("iteration bound needs gap >= 0 and epsilon > 0".into()));
    }
    let w = omega(1.0 / 6.0)?;
    let a = (f0_gap / (0.5 * w)).ceil().max(0.0);
    let b = (2.0 * w / epsilon).log2().ceil().max(0.0);
    Ok((a + b) as usize)
}

/// Shift guaranteeing `||f_1'' - f''|| <= mu` with probability `1 - delta`:
/// `min(L, sqrt(32 L^2 d / n) sqrt(ln(1 + r M sqrt(2n) / L) + ln(m d / delta) / d))`.
pub fn mu_theoretical(l: f64, d: f64, n: f64, m: f64, r: f64, big_m: f64, delta: f64) -> Result<f64> {
    if !(l > 0.0 && d > 0.0 && n > 0.0 && m > 0.0 && r >= 0.0 && big_m >= 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("mu_theoretical needs positive inputs and delta in (0, 1)".into()));
    }
    let inner = (r * big_m * (2.0 * n).sqrt() / l).ln_1p() + (m * d / delta).ln() / d;
    Ok(l.min((32.0 * l * l * d / n).sqrt() * inner.sqrt()))
}

struct Outer<'a> {
    cluster: &'a mut Cluster,
    config: &'a SolverConfig,
    trace: NewtonTrace,
    w: Vec<f64>,
    lambda: f64,
    l: f64,
    stop: StopRule,
    increases: usize,
}

impl<'a> Outer<'a> {
    fn start(cluster: &'a mut Cluster, config: &'a SolverConfig) -> Result<Self> {
        config.validate()?;
        let (lambda, l) = cluster.curvature_bounds();
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("Newton loops need a strongly convex objective (gamma > 0)".into()));
        }
        let mut trace = NewtonTrace::new(config.algorithm.name(), cluster.loss().eta, config.f_star);
        let (stop, warning) = StopRule::choose(config.beta, config.epsilon, lambda);
        trace.warnings.extend(warning);
        let w = init_point(cluster, config.rho)?;
        let mut outer = Outer { cluster, config, trace, w, lambda, l, stop, increases: 0 };
        outer.record(0, f64::NAN, 0, f64::NAN)?;
        Ok(outer)
    }

    fn record(&mut self, k: usize, delta: f64, pcg_iters: usize, mu: f64) -> Result<()> {
        let f = self.cluster.objective(&self.w)?;
        let grad_norm = norm(&self.cluster.gradient(&self.w)?);
        if let Some(prev) = self.trace.last() {
            if f > prev.f {
                self.increases += 1;
            } else {
                self.increases = 0;
            }
        }
        let rounds = self.cluster.rounds();
        self.trace.push(TraceRecord { k, rounds, f, grad_norm, delta, pcg_iters, mu, penalty: None, l1: None });
        Ok(())
    }

    /// One PCG solve at the current iterate, recording intermediate points
    /// when configured.
    fn pcg(&mut self, k: usize, mu: f64, tol: Tolerance, cap: IterCap) -> Result<PcgResult> {
        let mut probes: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
        let keep = self.config.record_intermediate;
        let w = &self.w;
        let res = distributed_pcg_observed(self.cluster, w, mu, tol, cap, |step| {
            if keep {
                probes.push((step.t, step.rounds, step.delta, damped_newton_update(w, step.v, step.delta)));
            }
        });
        for (t, rounds, delta, point) in probes {
            let f = self.cluster.objective(&point)?;
            let grad_norm = norm(&self.cluster.gradient(&point)?);
            self.trace.intermediate.push(TraceRecord { k, rounds, f, grad_norm, delta, pcg_iters: t + 1, mu, penalty: None, l1: None });
        }
        res
    }

    /// Applies the step, records it and reports whether to stop.
    fn step(&mut self, k: usize, v: &[f64], delta: f64, grad_norm: f64, pcg_iters: usize, mu: f64) -> Result<bool> {
        self.w = damped_newton_update(&self.w, v, delta);
        self.record(k + 1, delta, pcg_iters, mu)?;
        if self.stop.fires(delta, grad_norm) {
            self.trace.status = TraceStatus::Converged;
            return Ok(true);
        }
        Ok(self.experiment_stop())
    }

    fn experiment_stop(&mut self) -> bool {
        let last = self.trace.last().expect("initial record");
        if let (Some(target), Some(gap)) = (self.config.target_gap, self.trace.ell_gap(last)) {
            if gap <= target {
                self.trace.status = TraceStatus::TargetReached;
                return true;
            }
        }
        if self.config.max_rounds.is_some_and(|cap| last.rounds >= cap) {
            self.trace.status = TraceStatus::RoundCap;
            return true;
        }
        false
    }

    fn finish(mut self) -> NewtonTrace {
        if self.trace.status == TraceStatus::Running {
            self.trace.status = TraceStatus::MaxOuter;
        }
        self.trace.final_w = self.w;
        self.trace
    }
}

/// Distributed inexact damped Newton with PCG inner solves and a fixed
/// preconditioner shift `config.mu`.
pub fn run_disco(cluster: &mut Cluster, config: &SolverConfig) -> Result<NewtonTrace> {
    let mut run = Outer::start(cluster, config)?;
    if run.experiment_stop() {
        return Ok(run.finish());
    }
    let tol = config.tolerance(run.lambda, run.l);
    let cap = match config.pcg_cap {
        Some(n) => IterCap::Fixed(n),
        None => IterCap::Misspecified { lambda: run.lambda, l: run.l },
    };
    for k in 0..config.max_outer {
        let res = match run.pcg(k, config.mu, tol, cap) {
            Ok(r) => r,
            Err(Error::PcgIterCap(partial)) => {
                run.trace.warnings.push(format!(
                    "outer {k}: PCG stopped at its cap of {} iterations with residual {:.3e} > {:.3e}",
                    partial.iters, partial.residual_norm, partial.eps
                ));
                *partial
            }
            Err(e) => return Err(e),
        };
        if run.step(k, &res.v, res.delta, res.grad_norm, res.iters, config.mu)? {
            break;
        }
    }
    Ok(run.finish())
}

/// Shift above which a failing PCG is accepted as is: round-off, not the
/// preconditioner, is then what stalls it.
fn adaptive_mu_ceiling(l: f64) -> f64 {
    1e6 * l
}

/// DiSCO with the shift tuned on the fly: double `mu` and retry whenever PCG
/// needs more than `T_mu` iterations, halve it after each success.
pub fn run_adaptive_disco(cluster: &mut Cluster, config: &SolverConfig) -> Result<NewtonTrace> {
    let mut run = Outer::start(cluster, config)?;
    if run.experiment_stop() {
        return Ok(run.finish());
    }
    let tol = config.tolerance(run.lambda, run.l);
    let cap = IterCap::TMu { lambda: run.lambda, l: run.l };
    let mut mu = config.mu0;
    for k in 0..config.max_outer {
        let res: PcgResult = loop {
            match run.pcg(k, mu, tol, cap) {
                Ok(r) => break r,
                Err(Error::PcgIterCap(partial)) => {
                    if mu > adaptive_mu_ceiling(run.l) {
                        run.trace.warnings.push(format!(
                            "outer {k}: PCG failed at mu = {mu:.3e}; accepting residual {:.3e}",
                            partial.residual_norm
                        ));
                        break *partial;
                    }
                    mu *= 2.0;
                }
                Err(e) => return Err(e),
            }
        };
        if run.step(k, &res.v, res.delta, res.grad_norm, res.iters, mu)? {
            break;
        }
        mu /= 2.0;
    }
    Ok(run.finish())
}

/// Damped Newton with `v_k = (f_1''(w_k) + mu I)^{-1} f'(w_k)` and no PCG:
/// one round for the gradient, one for the step size.
pub fn run_disco_simple(cluster: &mut Cluster, config: &SolverConfig) -> Result<NewtonTrace> {
    let mut run = Outer::start(cluster, config)?;
    if run.experiment_stop() {
        return Ok(run.finish());
    }
    let shards = run.cluster.shared_shards();
    for k in 0..config.max_outer {
        let grad = run.cluster.distributed_grad(&run.w)?;
        let curv = run.cluster.curvature(&run.w)?;
        let v = apply_preconditioner_inverse_at(&shards[0], curv.master(), config.mu, &grad, PRECOND_TOL)?;
        let hv = run.cluster.hessvec_at(&curv, &v)?;
        let delta = dot(&v, &hv).max(0.0).sqrt();
        if run.step(k, &v, delta, norm(&grad), 0, config.mu)? {
            break;
        }
        if run.increases >= DIVERGENCE_STREAK {
            run.trace.status = TraceStatus::Diverged;
            break;
        }
    }
    Ok(run.finish())
}

/// Dispatches on `config.algorithm`.
pub fn run(cluster: &mut Cluster, config: &SolverConfig) -> Result<NewtonTrace> {
    match config.algorithm {
        Algorithm::Disco => run_disco(cluster, config),
        Algorithm::AdaptiveDisco => run_adaptive_disco(cluster, config),
        Algorithm::SimpleDisco => run_disco_simple(cluster, config),
    }
}

/// High-precision minimizer of the pooled objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub w: Vec<f64>,
    /// Scaled objective at `w`.
    pub f: f64,
    pub grad_norm: f64,
}

/// Centralized Newton-CG on the pooled objective until `||f'|| <= tol` or
/// round-off stalls progress. Uses diagnostic evaluations only.
pub fn reference_minimizer(cluster: &Cluster, tol: f64) -> Result<Reference> {
    let d = cluster.dim();
    let mut w = vec![0.0; d];
    let mut f = cluster.objective(&w)?;
    let mut g = cluster.gradient(&w)?;
    let mut best_norm = norm(&g);
    let mut stalled = 0;
    for _ in 0..200 {
        if best_norm <= tol || stalled >= 3 {
            break;
        }
        let curv = cluster.curvature(&w)?;
        let cg = conjugate_gradient(|v| cluster.hessvec_diagnostic(&curv, v), &g, 1e-14, 10 * d + 200);
        let v = match cg {
            Ok(out) => out.x,
            Err(Error::InnerCg { .. }) => g.clone(),
            Err(e) => return Err(e),
        };
        let slope = dot(&g, &v);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = {
                let mut c = w.clone();
                axpy(-t, &v, &mut c);
                c
            };
            let fc = cluster.objective(&cand)?;
            if fc <= f - 1e-4 * t * slope || (fc <= f && t < 1e-3) {
                let gc = cluster.gradient(&cand)?;
                let gn = norm(&gc);
                if gn < best_norm {
                    stalled = 0;
                    best_norm = gn;
                } else {
                    stalled += 1;
                }
                w = cand;
                f = fc;
                g = gc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // A unit step that does not lower f in floating point: check the
            // full Newton point by gradient instead.
            let cand: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - b).collect();
            let gc = cluster.gradient(&cand)?;
            if norm(&gc) < best_norm {
                best_norm = norm(&gc);
                f = cluster.objective(&cand)?;
                w = cand;
                g = gc;
            }
            stalled += 1;
        }
    }
    let grad_norm = norm(&g);
    Ok(Reference { w, f, grad_norm })
}

/// Dense diagnostic `||[f''(w)]^{-1/2} f'(w)||` (`d <= 50`).
pub fn newton_decrement(cluster: &Cluster, w: &[f64]) -> Result<f64> {
    let d = cluster.dim();
    if d > 50 {
        return Err(Error::TooLarge(d));
    }
    let h = cluster.dense_hessian(w)?;
    let g = nalgebra::DVector::from_vec(cluster.gradient(w)?);
    let chol = h.cholesky().ok_or_else(|| Error::Domain("Hessian is not positive definite".into()))?;
    let x = chol.solve(&g);
    Ok(g.dot(&x).max(0.0).sqrt())
}

/// Unscaled form of the damped Newton update, `w - v / (1 + sqrt(eta) sqrt(v^T ell'' v))`.
pub fn damped_newton_update_unscaled(w: &[f64], v: &[f64], eta: f64, v_ell_v: f64) -> Vec<f64> {
    damped_newton_update(w, v, eta.sqrt() * v_ell_v.max(0.0).sqrt())
}
