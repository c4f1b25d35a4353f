//! Distributed preconditioned conjugate gradient for the Newton system
//! `f''(w_k) v = f'(w_k)`, preconditioned by `P = f_0''(w_k) + mu I`.
//!
//! One round forms `f'(w_k)`; each iteration then spends exactly one round
//! on the pair `(H u, H v)`. `P^{-1}` is applied on the master with local
//! products only. The returned `delta` is `sqrt(v^T H v)` rebuilt from the
//! two products of the last round, so it needs no extra communication.

use nalgebra::DMatrix;

use crate::commsim::Cluster;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::localsolve::{apply_preconditioner_inverse_at, PRECOND_TOL};
use crate::solver::{epsilon_k, epsilon_k_superlinear};

/// Rule mapping `||f'(w_k)||` to the PCG exit tolerance `eps_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// Fixed `eps_k`.
    Absolute(f64),
    /// `beta sqrt(lambda / L) ||f'||`.
    Linear { beta: f64, lambda: f64, l: f64 },
    /// Tolerance giving a superlinear local rate.
    Superlinear { lambda: f64, l: f64 },
    /// `c ||f'||`.
    Practical(f64),
}

impl Tolerance {
    pub fn eps(&self, grad_norm: f64) -> f64 {
        match *self {
            Tolerance::Absolute(e) => e,
            Tolerance::Linear { beta, lambda, l } => epsilon_k(grad_norm, lambda, l, beta),
            Tolerance::Superlinear { lambda, l } => epsilon_k_superlinear(grad_norm, lambda, l),
            Tolerance::Practical(c) => c * grad_norm,
        }
    }
}

/// PCG iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterCap {
    Fixed(usize),
    /// `T_mu` for the current `mu`, gradient and tolerance.
    TMu { lambda: f64, l: f64 },
    /// Cap valid even when `mu` underestimates `||f_0'' - f''||`:
    /// `sqrt(2 + 2L/lambda) log(2 sqrt(L/lambda) ||f'|| / eps_k) + 5`.
    Misspecified { lambda: f64, l: f64 },
}

impl IterCap {
    fn resolve(&self, mu: f64, grad_norm: f64, eps: f64) -> usize {
        match *self {
            IterCap::Fixed(n) => n,
            IterCap::TMu { lambda, l } => t_mu_general(lambda, l, mu, grad_norm, eps).max(1),
            IterCap::Misspecified { lambda, l } => {
                let log = log_term(lambda, l, grad_norm, eps);
                ((2.0 + 2.0 * l / lambda).sqrt() * log).ceil().max(0.0) as usize + 5
            }
        }
    }
}

fn log_term(lambda: f64, l: f64, grad_norm: f64, eps: f64) -> f64 {
    if grad_norm == 0.0 || eps <= 0.0 {
        return 0.0;
    }
    (2.0 * (l / lambda).sqrt() * grad_norm / eps).ln().max(0.0)
}

/// `ceil(sqrt(1 + 2 mu / lambda) * ln(2 L / (beta lambda)))`.
pub fn t_mu(lambda: f64, l: f64, mu: f64, beta: f64) -> Result<usize> {
    if !(lambda > 0.0 && l > 0.0 && mu >= 0.0 && beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument("t_mu needs lambda, L > 0, mu >= 0 and beta in (0, 1)".into()));
    }
    Ok(((1.0 + 2.0 * mu / lambda).sqrt() * (2.0 * l / (beta * lambda)).ln()).ceil().max(0.0) as usize)
}

/// `T_mu` for an arbitrary tolerance:
/// `ceil(sqrt(1 + 2 mu / lambda) * ln(2 sqrt(L / lambda) ||f'|| / eps_k))`.
pub fn t_mu_general(lambda: f64, l: f64, mu: f64, grad_norm: f64, eps: f64) -> usize {
    ((1.0 + 2.0 * mu / lambda).sqrt() * log_term(lambda, l, grad_norm, eps)).ceil() as usize
}

/// One finished PCG iteration, passed to observers.
#[derive(Debug)]
pub struct PcgStep<'a> {
    /// 0-based iteration index `t`.
    pub t: usize,
    /// `v^(t+1)`
    pub v: &'a [f64],
    /// `r^(t+1)`
    pub r: &'a [f64],
    pub alpha: f64,
    /// `sqrt(v^(t+1)^T H v^(t+1))` from the communicated products.
    pub delta: f64,
    /// Cluster rounds consumed so far.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    /// Inexact Newton step `v_k`.
    pub v: Vec<f64>,
    pub delta: f64,
    pub residual_norm: f64,
    pub iters: usize,
    pub rounds_used: usize,
    pub eps: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Runs distributed PCG at `w` with preconditioner shift `mu`.
///
/// Returns [`Error::PcgIterCap`] with the partial result when the cap is hit
/// before `||r|| <= eps_k`.
pub fn distributed_pcg(cluster: &mut Cluster, w: &[f64], mu: f64, tol: Tolerance, cap: IterCap) -> Result<PcgResult> {
    distributed_pcg_observed(cluster, w, mu, tol, cap, |_| {})
}

pub fn distributed_pcg_observed<F>(cluster: &mut Cluster, w: &[f64], mu: f64, tol: Tolerance, cap: IterCap, mut observe: F) -> Result<PcgResult>
where
    F: FnMut(&PcgStep<'_>),
{
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {mu}")));
    }
    let start_rounds = cluster.rounds();
    let grad = cluster.distributed_grad(w)?;
    let grad_norm = norm(&grad);
    let eps = tol.eps(grad_norm);
    let iter_cap = cap.resolve(mu, grad_norm, eps);
    if iter_cap == 0 {
        return Err(Error::InvalidArgument("PCG iteration cap must be at least 1".into()));
    }

    let curv = cluster.curvature(w)?;
    let shards = cluster.shared_shards();
    let precond = |r: &[f64]| apply_preconditioner_inverse_at(&shards[0], curv.master(), mu, r, PRECOND_TOL);

    let d = w.len();
    let mut v = vec![0.0; d];
    let mut r = grad.clone();
    let mut s = precond(&r)?;
    let mut u = s.clone();
    let mut rs = dot(&r, &s);
    let mut delta = 0.0;
    let mut iters = 0;
    let mut converged = false;

    for t in 0..iter_cap {
        let (hu, hv) = cluster.hessvec_pair_at(&curv, &u, &v)?;
        iters = t + 1;
        let uhu = dot(&u, &hu);
        if uhu <= 1e-300 {
            // Only reachable once the residual has vanished numerically.
            delta = dot(&v, &hv).max(0.0).sqrt();
            converged = norm(&r) <= eps;
            break;
        }
        let alpha = rs / uhu;
        axpy(alpha, &u, &mut v);
        axpy(-alpha, &hu, &mut r);
        delta = (dot(&v, &hv) + alpha * dot(&v, &hu)).max(0.0).sqrt();
        let rn = norm(&r);
        observe(&PcgStep { t, v: &v, r: &r, alpha, delta, rounds: cluster.rounds() });
        if rn <= eps {
            converged = true;
            break;
        }
        s = precond(&r)?;
        let rs_next = dot(&r, &s);
        let beta = rs_next / rs;
        rs = rs_next;
        for (ui, si) in u.iter_mut().zip(&s) {
            *ui = si + beta * *ui;
        }
    }

    let result = PcgResult {
        residual_norm: norm(&r),
        v,
        delta,
        iters,
        rounds_used: cluster.rounds() - start_rounds,
        eps,
        grad,
        grad_norm,
        converged,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::PcgIterCap(Box::new(result)))
    }
}

/// Extreme eigenvalues of `P^{-1/2} H P^{-1/2}` with `P = f_0''(w) + mu I`,
/// by dense eigendecomposition (`d <= 50`).
pub fn precond_spectrum_check(cluster: &Cluster, w: &[f64], mu: f64) -> Result<(f64, f64)> {
    let d = cluster.dim();
    if d > 50 {
        return Err(Error::TooLarge(d));
    }
    let h = cluster.dense_hessian(w)?;
    let p = cluster.dense_local_hessian(0, w)? + DMatrix::<f64>::identity(d, d) * mu;
    let eig = p.symmetric_eigen();
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
    let p_inv_sqrt = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let m = &p_inv_sqrt * h * &p_inv_sqrt;
    let m = (&m + m.transpose()) * 0.5;
    let vals = m.symmetric_eigenvalues();
    Ok((vals.min(), vals.max()))
}

/// Dense `||f_0''(w) - f''(w)||_2` (`d <= 50`).
pub fn dense_similarity(cluster: &Cluster, w: &[f64]) -> Result<f64> {
    let d = cluster.dim();
    if d > 50 {
        return Err(Error::TooLarge(d));
    }
    let diff = cluster.dense_local_hessian(0, w)? - cluster.dense_hessian(w)?;
    let diff = (&diff + diff.transpose()) * 0.5;
    Ok(diff.symmetric_eigenvalues().iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}
