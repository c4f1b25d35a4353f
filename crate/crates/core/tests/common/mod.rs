#![allow(dead_code)]

use disco_core::data::{self, Dataset};
use disco_core::{Cluster, DatasetShard, LossKind, RegularizedLoss};
use nalgebra::{DMatrix, DVector};

pub fn ridge_cluster(m: usize, n_per: usize, d: usize, gamma: f64, seed: u64) -> Cluster {
    let ds = data::synth_regression(m * n_per, d, seed, 0.1).unwrap();
    let loss = RegularizedLoss::new(LossKind::Quadratic, gamma).unwrap();
    Cluster::new(data::shard(&ds, m, seed).unwrap(), loss).unwrap()
}

pub fn logistic_cluster(m: usize, n_per: usize, d: usize, gamma: f64, seed: u64) -> Cluster {
    let ds = data::synth_classification(m * n_per, d, seed, 0.05).unwrap();
    let loss = RegularizedLoss::new(LossKind::Logistic, gamma).unwrap();
    Cluster::new(data::shard(&ds, m, seed).unwrap(), loss).unwrap()
}

pub fn dense_rows(shard: &DatasetShard) -> (DMatrix<f64>, DVector<f64>) {
    let mut x = DMatrix::zeros(shard.len(), shard.dim);
    for (r, e) in shard.examples.iter().enumerate() {
        for (&j, &v) in e.indices.iter().zip(&e.values) {
            x[(r, j)] = v;
        }
    }
    let y = DVector::from_iterator(shard.len(), shard.examples.iter().map(|e| e.label));
    (x, y)
}

pub fn dense_dataset(ds: &Dataset) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(ds.len(), ds.dim);
    for (r, e) in ds.examples.iter().enumerate() {
        for (&j, &v) in e.indices.iter().zip(&e.values) {
            x[(r, j)] = v;
        }
    }
    x
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        (-t).exp()
    } else {
        t.exp().ln_1p()
    }
}

/// Value, gradient and Hessian of `eta * (mean_i f_i + gamma/2 |w|^2)` built
/// from dense matrices with textbook formulas. Logistic and quadratic only.
pub struct DenseOracle {
    pub parts: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub kind: LossKind,
    pub gamma: f64,
    pub eta: f64,
}

impl DenseOracle {
    pub fn of(cluster: &Cluster) -> Self {
        let loss = cluster.loss();
        assert!(matches!(loss.kind, LossKind::Logistic | LossKind::Quadratic));
        DenseOracle { parts: cluster.shards().iter().map(dense_rows).collect(), kind: loss.kind, gamma: loss.gamma, eta: loss.eta }
    }

    pub fn dim(&self) -> usize {
        self.parts[0].0.ncols()
    }

    fn machine(&self, i: usize, w: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (x, y) = &self.parts[i];
        let n = x.nrows() as f64;
        let z = x * w;
        let (mut val, mut coef, mut curv) = (0.0, DVector::zeros(x.nrows()), DVector::zeros(x.nrows()));
        for r in 0..x.nrows() {
            match self.kind {
                LossKind::Quadratic => {
                    let res = y[r] - z[r];
                    val += res * res;
                    coef[r] = -2.0 * res;
                    curv[r] = 2.0;
                }
                _ => {
                    let t = y[r] * z[r];
                    val += softplus(-t);
                    let s = 1.0 / (1.0 + t.exp());
                    coef[r] = -y[r] * s;
                    curv[r] = s * (1.0 - s);
                }
            }
        }
        let d = self.dim();
        let g = x.transpose() * coef / n + w * self.gamma;
        let h = x.transpose() * DMatrix::from_diagonal(&curv) * x / n + DMatrix::identity(d, d) * self.gamma;
        (self.eta * (val / n + 0.5 * self.gamma * w.norm_squared()), g * self.eta, h * self.eta)
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.eval(w).0
    }

    pub fn grad(&self, w: &[f64]) -> DVector<f64> {
        self.eval(w).1
    }

    pub fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        self.eval(w).2
    }

    pub fn local_hessian(&self, i: usize, w: &[f64]) -> DMatrix<f64> {
        self.machine(i, &DVector::from_column_slice(w)).2
    }

    pub fn eval(&self, w: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let wv = DVector::from_column_slice(w);
        let m = self.parts.len() as f64;
        let d = self.dim();
        let mut acc = (0.0, DVector::zeros(d), DMatrix::zeros(d, d));
        for i in 0..self.parts.len() {
            let (v, g, h) = self.machine(i, &wv);
            acc.0 += v / m;
            acc.1 += g / m;
            acc.2 += h / m;
        }
        acc
    }

    /// `sqrt(f'^T H^-1 f')`.
    pub fn newton_decrement(&self, w: &[f64]) -> f64 {
        let (_, g, h) = self.eval(w);
        let sol = h.cholesky().expect("positive definite").solve(&g);
        g.dot(&sol).max(0.0).sqrt()
    }

    /// Minimizer by full Newton steps with backtracking.
    pub fn minimize(&self) -> (Vec<f64>, f64) {
        let mut w = vec![0.0; self.dim()];
        for _ in 0..200 {
            let (f, g, h) = self.eval(&w);
            if g.norm() < 1e-13 {
                break;
            }
            let step = h.cholesky().unwrap().solve(&g);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                if self.value(&trial) <= f || t < 1e-12 {
                    w = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let f = self.value(&w);
        (w, f)
    }
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
