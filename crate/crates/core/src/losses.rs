//! Scalar losses, the per-shard regularized empirical loss and its
//! derivatives, and self-concordance constants.
//!
//! A shard's local objective is
//!
//! ```text
//! f_i(w) = eta * [ (1/n) sum_j phi(w, x_j, y_j) + (gamma/2) ||w||^2 ]
//! ```
//!
//! where `phi = varphi(y w^T x)` for the classification losses and
//! `phi = (y - w^T x)^2` for the quadratic loss. `eta` is a literal
//! multiplier kept next to the data, never folded into it, so the unscaled
//! loss is always `f / eta`.

use crate::data::{DatasetShard, Example};
use crate::error::{Error, Result};
use crate::linalg::check_dim;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Squared residual `(y - w^T x)^2`.
    Quadratic,
    /// `log(1 + exp(-t))` with `t = y w^T x`.
    Logistic,
    /// Five-piece C^2 smoothing of the hinge loss, `p >= 3`.
    SmoothedHinge(f64),
}

impl LossKind {
    pub fn validate(self) -> Result<Self> {
        if let LossKind::SmoothedHinge(p) = self {
            if !(p >= 3.0) {
                return Err(Error::InvalidArgument(format!("smoothed hinge needs p >= 3, got {p}")));
            }
        }
        Ok(self)
    }

    /// Supremum of the scalar second derivative.
    pub fn max_curvature(self) -> f64 {
        match self {
            LossKind::Quadratic => 2.0,
            LossKind::Logistic => 0.25,
            LossKind::SmoothedHinge(_) => 1.0,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, LossKind::Quadratic)
    }
}

/// Value and first three derivatives of a scalar function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logistic_value(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

fn smoothed_hinge(p: f64, t: f64) -> ScalarDerivs {
    let a = (p - 3.0) / (p - 1.0);
    let pp = p * (p - 1.0);
    if t < -a {
        ScalarDerivs { value: 1.5 - (p - 2.0) / (p - 1.0) - t, d1: -1.0, d2: 0.0, d3: 0.0 }
    } else if t < 1.0 - a {
        let z = t + a;
        ScalarDerivs {
            value: 1.5 - (p - 2.0) / (p - 1.0) - t + z.powf(p) / pp,
            d1: -1.0 + z.powf(p - 1.0) / (p - 1.0),
            d2: z.powf(p - 2.0),
            d3: (p - 2.0) * z.powf(p - 3.0),
        }
    } else if t < 1.0 {
        let s = 1.0 - t;
        ScalarDerivs { value: (p + 1.0) / pp - t / (p - 1.0) + 0.5 * s * s, d1: -1.0 / (p - 1.0) - s, d2: 1.0, d3: 0.0 }
    } else if t < 2.0 {
        let s = 2.0 - t;
        ScalarDerivs {
            value: s.powf(p) / pp,
            d1: -s.powf(p - 1.0) / (p - 1.0),
            d2: s.powf(p - 2.0),
            d3: -(p - 2.0) * s.powf(p - 3.0),
        }
    } else {
        ScalarDerivs { value: 0.0, d1: 0.0, d2: 0.0, d3: 0.0 }
    }
}

/// Exact derivatives of the scalar loss at `t`. For `Quadratic` the scalar
/// function is `t^2` evaluated at the residual.
pub fn scalar_derivs(kind: LossKind, t: f64) -> ScalarDerivs {
    match kind {
        LossKind::Quadratic => ScalarDerivs { value: t * t, d1: 2.0 * t, d2: 2.0, d3: 0.0 },
        LossKind::Logistic => {
            let s = sigmoid(t);
            let sn = sigmoid(-t);
            let d2 = s * sn;
            ScalarDerivs { value: logistic_value(t), d1: -sn, d2, d3: d2 * (sn - s) }
        }
        LossKind::SmoothedHinge(p) => smoothed_hinge(p, t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedLoss {
    pub kind: LossKind,
    /// Regularization of the unscaled loss.
    pub gamma: f64,
    /// Bound on feature-row norms.
    pub feature_bound: f64,
    /// Objective scaling, `f = eta * ell`.
    pub eta: f64,
}

impl RegularizedLoss {
    /// `eta = 1` and unit feature bound (normalized rows).
    pub fn new(kind: LossKind, gamma: f64) -> Result<Self> {
        let kind = kind.validate()?;
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be finite and nonnegative, got {gamma}")));
        }
        Ok(RegularizedLoss { kind, gamma, feature_bound: 1.0, eta: 1.0 })
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn with_feature_bound(mut self, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::InvalidArgument(format!("feature bound must be positive, got {b}")));
        }
        self.feature_bound = b;
        Ok(self)
    }

    /// Rescales so that `f = eta * ell` is standard self-concordant.
    pub fn standardized(self) -> Result<Self> {
        let m = self_concordance_parameter(self.kind, self.feature_bound, self.gamma)?;
        self.with_eta(standard_scaling(m))
    }

    /// Strong-convexity modulus of `f`.
    pub fn lambda(&self) -> f64 {
        self.eta * self.gamma
    }

    /// Unscaled per-example loss and its first two derivatives with respect
    /// to the margin `z = w^T x`.
    #[inline]
    pub fn example_derivs(&self, z: f64, y: f64) -> (f64, f64, f64) {
        match self.kind {
            LossKind::Quadratic => {
                let r = y - z;
                (r * r, -2.0 * r, 2.0)
            }
            kind => {
                let s = scalar_derivs(kind, y * z);
                (s.value, y * s.d1, y * y * s.d2)
            }
        }
    }

    fn example_value(&self, e: &Example, w: &[f64]) -> f64 {
        self.example_derivs(e.dot(w), e.label).0
    }
}

fn inv_n(shard: &DatasetShard) -> f64 {
    1.0 / shard.len().max(1) as f64
}

/// `f_i(w)`.
pub fn local_value(loss: &RegularizedLoss, shard: &DatasetShard, w: &[f64]) -> Result<f64> {
    check_dim(shard.dim, w.len())?;
    let data: f64 = shard.examples.iter().map(|e| loss.example_value(e, w)).sum::<f64>() * inv_n(shard);
    let reg = 0.5 * loss.gamma * w.iter().map(|v| v * v).sum::<f64>();
    Ok(loss.eta * (data + reg))
}

/// `f_i'(w)`.
pub fn local_grad(loss: &RegularizedLoss, shard: &DatasetShard, w: &[f64]) -> Result<Vec<f64>> {
    Ok(local_value_grad(loss, shard, w)?.1)
}

/// `f_i(w)` and `f_i'(w)` from one pass over the shard.
pub fn local_value_grad(loss: &RegularizedLoss, shard: &DatasetShard, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(shard.dim, w.len())?;
    let scale = loss.eta * inv_n(shard);
    let mut g = vec![0.0; shard.dim];
    let mut value = 0.0;
    for e in &shard.examples {
        let (v, d1, _) = loss.example_derivs(e.dot(w), e.label);
        value += v;
        if d1 != 0.0 {
            e.add_scaled_to(scale * d1, &mut g);
        }
    }
    let ridge = loss.eta * loss.gamma;
    for (gi, wi) in g.iter_mut().zip(w) {
        *gi += ridge * wi;
    }
    let reg = 0.5 * loss.gamma * w.iter().map(|v| v * v).sum::<f64>();
    Ok((loss.eta * (value * inv_n(shard) + reg), g))
}

/// `f_i''(w) v` without forming the Hessian.
pub fn local_hessvec(loss: &RegularizedLoss, shard: &DatasetShard, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dim(shard.dim, w.len())?;
    check_dim(shard.dim, v.len())?;
    Ok(LocalCurvature::new(loss, shard, w)?.apply(shard, v))
}

/// Local Hessian at a fixed point: per-example curvature weights are
/// evaluated once, each product is then two sparse passes over the shard the
/// weights were computed on.
#[derive(Debug, Clone)]
pub struct LocalCurvature {
    weights: Vec<f64>,
    ridge: f64,
    dim: usize,
}

impl LocalCurvature {
    pub fn new(loss: &RegularizedLoss, shard: &DatasetShard, w: &[f64]) -> Result<Self> {
        check_dim(shard.dim, w.len())?;
        let scale = loss.eta * inv_n(shard);
        let weights = shard.examples.iter().map(|e| scale * loss.example_derivs(e.dot(w), e.label).2).collect();
        Ok(LocalCurvature { weights, ridge: loss.eta * loss.gamma, dim: shard.dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, shard: &DatasetShard, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(shard.len(), self.weights.len());
        let mut out: Vec<f64> = v.iter().map(|x| self.ridge * x).collect();
        for (e, &c) in shard.examples.iter().zip(&self.weights) {
            if c != 0.0 {
                let xv = e.dot(v);
                if xv != 0.0 {
                    e.add_scaled_to(c * xv, &mut out);
                }
            }
        }
        out
    }

    /// `(H + shift I) v`
    pub fn apply_shifted(&self, shard: &DatasetShard, shift: f64, v: &[f64]) -> Vec<f64> {
        let mut out = self.apply(shard, v);
        for (o, x) in out.iter_mut().zip(v) {
            *o += shift * x;
        }
        out
    }

    /// Dense copy of the local Hessian (diagnostics only).
    pub fn to_dense(&self, shard: &DatasetShard) -> nalgebra::DMatrix<f64> {
        let d = self.dim;
        let mut h = nalgebra::DMatrix::<f64>::identity(d, d) * self.ridge;
        for (e, &c) in shard.examples.iter().zip(&self.weights) {
            for (&i, &xi) in e.indices.iter().zip(&e.values) {
                for (&j, &xj) in e.indices.iter().zip(&e.values) {
                    h[(i, j)] += c * xi * xj;
                }
            }
        }
        h
    }
}

/// Self-concordance parameter of the regularized loss `ell`.
pub fn self_concordance_parameter(kind: LossKind, b: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("self-concordance needs gamma > 0, got {gamma}")));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("feature bound must be positive, got {b}")));
    }
    Ok(match kind.validate()? {
        LossKind::Quadratic => 0.0,
        LossKind::Logistic => b / gamma.sqrt(),
        LossKind::SmoothedHinge(p) => {
            let alpha = 1.0 / (p - 2.0);
            (p - 2.0) * b.powf(1.0 + 2.0 * alpha) / gamma.powf(0.5 + alpha)
        }
    })
}

/// Factor `eta` making `eta * ell` standard self-concordant (parameter 2).
pub fn standard_scaling(m: f64) -> f64 {
    (m * m / 4.0).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    pub lambda: f64,
    pub l: f64,
    pub v0: f64,
    pub g: f64,
    pub m: f64,
}

/// Per-kind smoothness constants of the scaled objective. `label_bound` is
/// only used by the quadratic loss.
pub fn smoothness_constants(kind: LossKind, b: f64, label_bound: f64, gamma: f64, eta: f64) -> SmoothnessConstants {
    let lambda = eta * gamma;
    match kind {
        LossKind::Quadratic => SmoothnessConstants {
            lambda,
            l: eta * (gamma + 2.0 * b * b),
            v0: eta * label_bound * label_bound,
            g: eta * 2.0 * b * (label_bound + b * label_bound * (2.0 / gamma).sqrt()),
            m: 0.0,
        },
        LossKind::Logistic => SmoothnessConstants {
            lambda,
            l: eta * (b * b / 4.0 + gamma),
            v0: eta * std::f64::consts::LN_2,
            g: eta * b,
            // Taken as published, without a derivation.
            m: eta * b.powi(3) / 10.0,
        },
        LossKind::SmoothedHinge(p) => SmoothnessConstants {
            lambda,
            l: eta * (b * b + gamma),
            v0: eta,
            g: eta * b,
            m: eta * (p - 2.0) * b.powi(3),
        },
    }
}
