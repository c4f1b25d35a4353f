//! Dense vector helpers and a master-local conjugate gradient routine.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    pub rel_residual: f64,
}

/// Plain CG for `A x = b` with `A` symmetric positive definite, given as a
/// matvec closure. Stops when `||A x - b|| <= rel_tol * ||b||`.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], rel_tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = b.len();
    let mut x = vec![0.0; d];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome { x, iters: 0, rel_residual: 0.0 });
    }
    let target = rel_tol * b_norm;
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iters {
        if rr.sqrt() <= target {
            return Ok(CgOutcome { x, iters: it, rel_residual: rr.sqrt() / b_norm });
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 1e-300 {
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    let rel = rr.sqrt() / b_norm;
    if rel <= rel_tol {
        Ok(CgOutcome { x, iters: max_iters, rel_residual: rel })
    } else {
        Err(Error::InnerCg { iters: max_iters, rel_residual: rel })
    }
}

/// Iteration cap for CG on a `d`-dimensional system. Finite precision needs
/// more than `d` steps on ill-conditioned systems.
pub fn cg_cap(d: usize) -> usize {
    10 * d + 200
}
