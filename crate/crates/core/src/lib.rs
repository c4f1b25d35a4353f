//! Communication-efficient distributed optimization of self-concordant
//! empirical loss.
//!
//! The crate simulates an `m`-machine cluster (one master, `m - 1` workers)
//! and counts communication rounds exactly. On top of the simulator it
//! implements the inexact damped Newton method whose Newton systems are
//! solved by a distributed preconditioned conjugate gradient loop (DiSCO),
//! its adaptive and no-PCG variants, a proximal variant for `l1`-regularized
//! objectives, and the usual first-order and quasi-Newton baselines (GD,
//! accelerated gradient, L-BFGS, DANE) so that round counts can be compared.
//!
//! ```ignore
//! let data = data::normalize_rows(&data::synth_classification(2048, 50, 7, 0.05)?);
//! let shards = data::shard(&data, 4, 7)?;
//! let loss = RegularizedLoss::new(LossKind::Logistic, 1e-3)?;
//! let mut cluster = Cluster::new(shards, loss)?;
//! let trace = solver::run_disco(&mut cluster, &SolverConfig::default())?;
//! println!("{} rounds", cluster.rounds());
//! ```
//!
//! Per-machine work inside a collective runs on rayon when the `parallel`
//! feature is enabled (the default). Reductions are always summed in
//! machine-id order, so results are bitwise identical in both modes.

pub mod baselines;
pub mod commsim;
pub mod composite;
pub mod data;
pub mod error;
pub mod linalg;
pub mod localsolve;
pub mod losses;
pub mod pcg;
pub mod solver;
pub mod trace;

pub use commsim::{Cluster, Execution, RoundLedger};
pub use data::{Dataset, DatasetShard, Example};
pub use error::{Error, Result};
pub use losses::{LossKind, RegularizedLoss, SmoothnessConstants};
pub use pcg::{PcgResult, Tolerance};
pub use solver::{Algorithm, SolverConfig, ToleranceMode};
pub use trace::{NewtonTrace, TraceRecord, TraceStatus};
