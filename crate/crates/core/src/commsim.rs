//! Simulated `m`-machine cluster with exact communication accounting.
//!
//! Machine 0 is the master. Every collective costs exactly one round: the
//! master broadcasts `O(d)` scalars, each machine computes on its shard, and
//! the replies are averaged on the master in ascending machine-id order.
//! Diagnostics (objective values for traces, dense Hessians, similarity
//! estimates) run out of band and never touch the round counter.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, norm};
use crate::losses::{self, LocalCurvature, RegularizedLoss};

/// How per-machine work inside a collective is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Runs on the rayon pool when the `parallel` feature is enabled and
    /// falls back to [`Execution::Sequential`] otherwise.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    /// 1-based round index.
    pub round: usize,
    pub op: &'static str,
    /// Scalars moved in this round, both directions, all machines.
    pub scalars: usize,
}

/// One entry per communication round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundLedger {
    pub entries: Vec<LedgerEntry>,
}

impl RoundLedger {
    pub fn rounds(&self) -> usize {
        self.entries.len()
    }

    pub fn scalars(&self) -> usize {
        self.entries.iter().map(|e| e.scalars).sum()
    }

    pub fn count(&self, op: &str) -> usize {
        self.entries.iter().filter(|e| e.op == op).count()
    }

    /// `round,op,scalars`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,op,scalars\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.round, e.op, e.scalars);
        }
        s
    }
}

pub mod ops {
    pub const ALLREDUCE: &str = "allreduce";
    pub const GRAD: &str = "grad";
    pub const VALUE: &str = "value";
    pub const VALUE_GRAD: &str = "value_grad";
    pub const HESSVEC: &str = "hessvec";
    pub const HESSVEC_PAIR: &str = "hessvec_pair";
    pub const INIT: &str = "init_average";
    pub const LOCAL_SOLVE: &str = "local_solve_average";
}

/// Every machine's local Hessian at one point, computed after the point was
/// broadcast. Holding it lets repeated products skip recomputing curvature.
#[derive(Debug, Clone)]
pub struct ClusterCurvature {
    point: Vec<f64>,
    locals: Vec<LocalCurvature>,
}

impl ClusterCurvature {
    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn master(&self) -> &LocalCurvature {
        &self.locals[0]
    }

    pub fn local(&self, i: usize) -> &LocalCurvature {
        &self.locals[i]
    }
}

#[derive(Debug)]
pub struct Cluster {
    shards: Arc<Vec<DatasetShard>>,
    loss: RegularizedLoss,
    ledger: RoundLedger,
    execution: Execution,
    diagnostics: AtomicUsize,
}

impl Clone for Cluster {
    fn clone(&self) -> Self {
        Cluster {
            shards: Arc::clone(&self.shards),
            loss: self.loss,
            ledger: self.ledger.clone(),
            execution: self.execution,
            diagnostics: AtomicUsize::new(self.diagnostics.load(Ordering::Relaxed)),
        }
    }
}

fn map_shards<T, F>(execution: Execution, shards: &[DatasetShard], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&DatasetShard) -> T + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            shards.par_iter().map(f).collect()
        }
        _ => shards.iter().map(f).collect(),
    }
}

/// Elementwise mean, summed in slice order.
fn ordered_mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let m = vectors.len() as f64;
    let mut acc = vectors[0].clone();
    for v in &vectors[1..] {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    acc.iter().map(|x| x / m).collect()
}

fn ordered_scalar_mean(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |a, v| a + v) / values.len() as f64
}

impl Cluster {
    pub fn new(shards: Vec<DatasetShard>, loss: RegularizedLoss) -> Result<Self> {
        let first = shards.first().ok_or_else(|| Error::InvalidArgument("cluster needs at least one shard".into()))?;
        let dim = first.dim;
        for (i, s) in shards.iter().enumerate() {
            check_dim(dim, s.dim)?;
            if s.machine_id != i {
                return Err(Error::InvalidArgument(format!("shard {i} carries machine id {}", s.machine_id)));
            }
        }
        Ok(Cluster { shards: Arc::new(shards), loss, ledger: RoundLedger::default(), execution: Execution::default(), diagnostics: AtomicUsize::new(0) })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn m(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.shards[0].dim
    }

    pub fn loss(&self) -> &RegularizedLoss {
        &self.loss
    }

    pub fn shards(&self) -> &[DatasetShard] {
        &self.shards
    }

    pub fn master(&self) -> &DatasetShard {
        &self.shards[0]
    }

    /// Shared handle to the shards, for holding data across collectives.
    pub fn shared_shards(&self) -> Arc<Vec<DatasetShard>> {
        Arc::clone(&self.shards)
    }

    /// Same data and loss, fresh ledger.
    pub fn fresh(&self) -> Cluster {
        Cluster {
            shards: Arc::clone(&self.shards),
            loss: self.loss,
            ledger: RoundLedger::default(),
            execution: self.execution,
            diagnostics: AtomicUsize::new(0),
        }
    }

    /// Same data, different loss, fresh ledger.
    pub fn with_loss(&self, loss: RegularizedLoss) -> Cluster {
        Cluster { loss, ..self.fresh() }
    }

    pub fn rounds(&self) -> usize {
        self.ledger.rounds()
    }

    pub fn scalars_moved(&self) -> usize {
        self.ledger.scalars()
    }

    pub fn ledger(&self) -> &RoundLedger {
        &self.ledger
    }

    /// Number of out-of-band evaluations performed so far.
    pub fn diagnostic_evaluations(&self) -> usize {
        self.diagnostics.load(Ordering::Relaxed)
    }

    /// Clears the ledger, e.g. between independent runs on the same data.
    pub fn reset_ledger(&mut self) {
        self.ledger = RoundLedger::default();
        self.diagnostics.store(0, Ordering::Relaxed);
    }

    /// Largest feature-row norm over all shards.
    pub fn max_row_norm(&self) -> f64 {
        self.shards.iter().map(|s| s.max_row_norm()).fold(0.0, f64::max)
    }

    /// `(lambda, L)` with `lambda I <= f'' <= L I`, using the measured row
    /// norm bound and the loss's maximal curvature.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let r = self.max_row_norm();
        let lambda = self.loss.lambda();
        (lambda, lambda + self.loss.eta * r * r * self.loss.kind.max_curvature())
    }

    /// Runs `f` once per machine under the cluster's execution mode.
    pub fn map_machines<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&DatasetShard) -> T + Sync + Send,
    {
        map_shards(self.execution, &self.shards, f)
    }

    fn record(&mut self, op: &'static str, broadcast: usize, reply: usize) {
        let round = self.ledger.entries.len() + 1;
        let scalars = self.m() * (broadcast + reply);
        self.ledger.entries.push(LedgerEntry { round, op, scalars });
    }

    fn note_diagnostic(&self) {
        self.diagnostics.fetch_add(1, Ordering::Relaxed);
    }

    /// Averages one vector per machine (one round).
    pub fn allreduce_average(&mut self, per_machine: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.allreduce_tagged(ops::ALLREDUCE, per_machine)
    }

    pub(crate) fn allreduce_tagged(&mut self, op: &'static str, per_machine: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_dim(self.m(), per_machine.len())?;
        let d = per_machine[0].len();
        for v in per_machine {
            check_dim(d, v.len())?;
        }
        self.record(op, 0, d);
        Ok(ordered_mean(per_machine))
    }

    /// `f'(w)`, one round.
    pub fn distributed_grad(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), w.len())?;
        let loss = self.loss;
        let grads = self.map_machines(|s| losses::local_grad(&loss, s, w)).into_iter().collect::<Result<Vec<_>>>()?;
        self.record(ops::GRAD, w.len(), w.len());
        Ok(ordered_mean(&grads))
    }

    /// `f(w)`, one round.
    pub fn distributed_value(&mut self, w: &[f64]) -> Result<f64> {
        let v = self.value_impl(w)?;
        self.record(ops::VALUE, w.len(), 1);
        Ok(v)
    }

    /// `f(w)` and `f'(w)` in one round.
    pub fn distributed_value_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), w.len())?;
        let loss = self.loss;
        let parts = self.map_machines(|s| losses::local_value_grad(&loss, s, w)).into_iter().collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let grads: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
        self.record(ops::VALUE_GRAD, w.len(), w.len() + 1);
        Ok((ordered_scalar_mean(&values), ordered_mean(&grads)))
    }

    /// Every machine's local curvature at `w`. No round is charged: the point
    /// reaches the workers with the gradient collective that precedes any
    /// Hessian products at it.
    pub fn curvature(&self, w: &[f64]) -> Result<ClusterCurvature> {
        check_dim(self.dim(), w.len())?;
        let loss = self.loss;
        let locals = self.map_machines(|s| LocalCurvature::new(&loss, s, w)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ClusterCurvature { point: w.to_vec(), locals })
    }

    fn products(&self, curv: &ClusterCurvature, vs: &[&[f64]]) -> Vec<Vec<f64>> {
        let per_machine: Vec<Vec<Vec<f64>>> = match self.execution {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                self.shards.par_iter().zip(curv.locals.par_iter()).map(|(s, c)| vs.iter().map(|v| c.apply(s, v)).collect()).collect()
            }
            _ => self.shards.iter().zip(&curv.locals).map(|(s, c)| vs.iter().map(|v| c.apply(s, v)).collect()).collect(),
        };
        (0..vs.len())
            .map(|k| {
                let column: Vec<Vec<f64>> = per_machine.iter().map(|p| p[k].clone()).collect();
                ordered_mean(&column)
            })
            .collect()
    }

    /// `f''(w) v` at a precomputed curvature, one round.
    pub fn hessvec_at(&mut self, curv: &ClusterCurvature, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut out = self.products(curv, &[v]);
        self.record(ops::HESSVEC, v.len(), v.len());
        Ok(out.pop().unwrap())
    }

    /// `(f''(w) u, f''(w) v)` sharing one round.
    pub fn hessvec_pair_at(&mut self, curv: &ClusterCurvature, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.dim(), u.len())?;
        check_dim(self.dim(), v.len())?;
        let mut out = self.products(curv, &[u, v]);
        self.record(ops::HESSVEC_PAIR, 2 * u.len(), 2 * u.len());
        let hv = out.pop().unwrap();
        let hu = out.pop().unwrap();
        Ok((hu, hv))
    }

    /// `f''(w) v`, one round.
    pub fn distributed_hessvec(&mut self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let curv = self.curvature(w)?;
        self.hessvec_at(&curv, v)
    }

    /// `(f''(w) u, f''(w) v)`, one round.
    pub fn distributed_hessvec_pair(&mut self, w: &[f64], u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let curv = self.curvature(w)?;
        self.hessvec_pair_at(&curv, u, v)
    }

    // ---- out-of-band diagnostics ----

    /// `f(w)` without charging a round.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.note_diagnostic();
        self.value_impl(w)
    }

    fn value_impl(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let loss = self.loss;
        let values = self.map_machines(|s| losses::local_value(&loss, s, w)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ordered_scalar_mean(&values))
    }

    /// `f'(w)` without charging a round.
    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), w.len())?;
        self.note_diagnostic();
        let loss = self.loss;
        let grads = self.map_machines(|s| losses::local_grad(&loss, s, w)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ordered_mean(&grads))
    }

    /// `f''(w) v` at a precomputed curvature without charging a round.
    pub fn hessvec_diagnostic(&self, curv: &ClusterCurvature, v: &[f64]) -> Vec<f64> {
        self.note_diagnostic();
        self.products(curv, &[v]).pop().unwrap()
    }

    /// Dense `f''(w)`.
    pub fn dense_hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let curv = self.curvature(w)?;
        self.note_diagnostic();
        let mut h = DMatrix::<f64>::zeros(self.dim(), self.dim());
        for (s, c) in self.shards.iter().zip(&curv.locals) {
            h += c.to_dense(s);
        }
        Ok(h / self.m() as f64)
    }

    /// Dense `f_i''(w)`.
    pub fn dense_local_hessian(&self, machine: usize, w: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.shards.get(machine).ok_or_else(|| Error::InvalidArgument(format!("no machine {machine}")))?;
        self.note_diagnostic();
        Ok(LocalCurvature::new(&self.loss, s, w)?.to_dense(s))
    }
}

/// Power-iteration estimate of `||f_0''(w) - f''(w)||_2` from products with
/// the symmetric difference operator. Out of band.
///
/// Starts from a fixed pseudo-random unit vector and returns `||A x_k||`
/// for the normalized iterate `x_k`, which is nondecreasing in `iters` for
/// symmetric `A`.
pub fn hessian_similarity(cluster: &Cluster, w: &[f64], iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one step".into()));
    }
    let curv = cluster.curvature(w)?;
    cluster.note_diagnostic();
    let master = cluster.master();
    let apply = |x: &[f64]| -> Vec<f64> {
        let local = curv.master().apply(master, x);
        let global = cluster.products(&curv, &[x]).pop().unwrap();
        local.iter().zip(&global).map(|(a, b)| a - b).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..cluster.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&x);
    x.iter_mut().for_each(|v| *v /= n);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let ax = apply(&x);
        estimate = norm(&ax);
        if estimate == 0.0 {
            return Ok(0.0);
        }
        x = ax.into_iter().map(|v| v / estimate).collect();
    }
    Ok(estimate)
}
