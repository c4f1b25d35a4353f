//! Runs the algorithm × m × mu matrix of a config.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::Path;

use anyhow::{Context, Result};
use disco_core::baselines::{run_afg, run_dane, run_gd, run_lbfgs, BaselineOptions, StepPolicy};
use disco_core::composite::{composite_reference, run_disco_composite, Penalty};
use disco_core::solver::{self, reference_minimizer};
use disco_core::{data, Algorithm, Cluster, Dataset, NewtonTrace, RegularizedLoss, SolverConfig};
use rayon::prelude::*;

use crate::config::{AlgorithmSpec, DataSource, EtaMode, ExperimentConfig, Task};
use crate::summary::{self, Cell};

const REFERENCE_TOL: f64 = 1e-12;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(match &cfg.data {
        DataSource::Synthetic { task: Task::Classification, n, d, noise, decay } => data::synth_classification_decay(*n, *d, cfg.seed, *noise, *decay)?,
        DataSource::Synthetic { task: Task::Regression, n, d, noise, .. } => data::synth_regression(*n, *d, cfg.seed, *noise)?,
        DataSource::Libsvm { path, normalize, binarize } => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let mut ds = data::read_libsvm(std::io::BufReader::new(file))?;
            if *binarize {
                ds = ds.binarize_labels();
            }
            if *normalize {
                ds = data::normalize_rows(&ds);
            }
            ds
        }
    })
}

fn loss_for(cfg: &ExperimentConfig, ds: &Dataset) -> Result<RegularizedLoss> {
    let loss = RegularizedLoss::new(cfg.loss_kind()?, cfg.gamma)?;
    Ok(match cfg.eta {
        EtaMode::One => loss,
        EtaMode::Theory => loss.with_feature_bound(ds.max_row_norm().max(f64::MIN_POSITIVE))?.standardized()?,
    })
}

/// Writes through a temporary file so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Reference optimum of the smooth objective (or of `F` for an `l1` cell),
/// cached in the output directory under a hash of everything it depends on.
fn reference(cfg: &ExperimentConfig, cluster: &Cluster, m: usize, sigma: Option<f64>) -> Result<f64> {
    let key = format!("{:?}|{}|{:e}|{:?}|{}|{m}|{sigma:?}|{:e}", cfg.data, cfg.loss, cfg.gamma, cfg.eta, cfg.seed, REFERENCE_TOL);
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    let path = cfg.output.join(format!("reference_{:016x}.txt", h.finish()));
    if let Ok(text) = std::fs::read_to_string(&path) {
        let mut lines = text.lines();
        if lines.next() == Some(key.as_str()) {
            if let Some(Ok(f)) = lines.next().map(str::parse::<f64>) {
                return Ok(f);
            }
        }
    }
    let (w, f) = match sigma {
        None => {
            let r = reference_minimizer(cluster, REFERENCE_TOL)?;
            (r.w, r.f)
        }
        Some(s) => composite_reference(cluster, &Penalty::L1(s), REFERENCE_TOL)?,
    };
    let mut out = format!("{key}\n{f:e}\n");
    for x in &w {
        let _ = writeln!(out, "{x:e}");
    }
    write_atomic(&path, &out)?;
    Ok(f)
}

struct Job<'a> {
    spec: &'a AlgorithmSpec,
    m: usize,
    mu: Option<f64>,
    cell: Cell,
}

fn run_cell(cfg: &ExperimentConfig, job: &Job<'_>, base: &Cluster, f_star: f64) -> Result<NewtonTrace> {
    let spec = job.spec;
    let mut cluster = base.fresh();
    let mu = job.mu.unwrap_or(0.0) * if spec.mu_scale_sqrt_m { (job.m as f64).sqrt() } else { 1.0 };
    let defaults = SolverConfig::default();
    let solver_cfg = SolverConfig {
        algorithm: match spec.name.as_str() {
            "adaptive_disco" => Algorithm::AdaptiveDisco,
            "simple_disco" => Algorithm::SimpleDisco,
            _ => Algorithm::Disco,
        },
        beta: spec.beta.unwrap_or(defaults.beta),
        mu,
        mu0: spec.mu0.unwrap_or(defaults.mu0),
        epsilon: cfg.epsilon,
        tolerance_mode: spec.tolerance_mode()?.unwrap_or(defaults.tolerance_mode),
        max_outer: cfg.max_rounds,
        f_star: Some(f_star),
        max_rounds: Some(cfg.max_rounds),
        record_intermediate: spec.intermediate,
        ..defaults
    };
    let opts = BaselineOptions { epsilon: cfg.epsilon, max_rounds: cfg.max_rounds, f_star: Some(f_star), target_gap: None };
    Ok(match spec.name.as_str() {
        "disco" | "adaptive_disco" | "simple_disco" => solver::run(&mut cluster, &solver_cfg)?,
        "disco_l1" => run_disco_composite(&mut cluster, &solver_cfg, Penalty::L1(spec.sigma.unwrap_or(0.0)))?,
        "gd" => run_gd(&mut cluster, StepPolicy::FixedInverseL, &opts)?,
        "gd_backtracking" => run_gd(&mut cluster, StepPolicy::Backtracking, &opts)?,
        "afg" => run_afg(&mut cluster, &opts)?,
        "lbfgs" => run_lbfgs(&mut cluster, spec.memory.unwrap_or(10), &opts)?,
        "dane" => run_dane(&mut cluster, mu, &opts)?,
        other => anyhow::bail!("unknown algorithm {other}"),
    })
}

/// Runs every cell, writes trace CSVs, `status.csv` and `summary.md`, and
/// returns the summary text. A failing cell is recorded and the rest run on.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String> {
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let ds = load_dataset(cfg)?;
    let loss = loss_for(cfg, &ds)?;
    let clusters = cfg
        .m
        .iter()
        .map(|&m| Ok((m, Cluster::new(data::shard(&ds, m, cfg.seed)?, loss)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = vec![];
    for spec in &cfg.algorithms {
        for &m in &cfg.m {
            for mu in spec.shifts() {
                let cell = Cell { label: spec.label().to_string(), m, mu: spec.mu_sweep.as_ref().and(mu) };
                jobs.push(Job { spec, m, mu, cell });
            }
        }
    }
    let mut names: Vec<String> = jobs.iter().map(|j| j.cell.stem()).collect();
    names.sort();
    if let Some(p) = names.windows(2).find(|p| p[0] == p[1]) {
        anyhow::bail!("two cells share the name {}; give one of them a label", p[0]);
    }

    // References first, one per (m, sigma), so cells never race on the cache.
    let mut refs: Vec<((usize, Option<u64>), f64)> = vec![];
    for (m, cluster) in &clusters {
        let mut sigmas: Vec<Option<f64>> = vec![None];
        for spec in cfg.algorithms.iter().filter(|s| s.name == "disco_l1") {
            let s = Some(spec.sigma.unwrap_or(0.0));
            if !sigmas.contains(&s) {
                sigmas.push(s);
            }
        }
        for s in sigmas {
            refs.push(((*m, s.map(f64::to_bits)), reference(cfg, cluster, *m, s)?));
        }
    }
    let lookup = |m: usize, sigma: Option<f64>| refs.iter().find(|(k, _)| *k == (m, sigma.map(f64::to_bits))).map(|(_, f)| *f).unwrap();

    let results: Vec<(String, Result<NewtonTrace>)> = jobs
        .par_iter()
        .map(|job| {
            let base = &clusters.iter().find(|(m, _)| *m == job.m).unwrap().1;
            let sigma = (job.spec.name == "disco_l1").then(|| job.spec.sigma.unwrap_or(0.0));
            (job.cell.stem(), run_cell(cfg, job, base, lookup(job.m, sigma)))
        })
        .collect();

    let mut status = String::from("cell,status\n");
    for (stem, res) in &results {
        let label = match res {
            Ok(trace) => {
                write_atomic(&cfg.output.join(format!("trace_{stem}.csv")), &trace.to_csv())?;
                if !trace.intermediate.is_empty() {
                    write_atomic(&cfg.output.join(format!("inter_{stem}.csv")), &trace.intermediate_csv())?;
                }
                trace.status.label()
            }
            Err(e) => format!("failed: {e}"),
        };
        let _ = writeln!(status, "{stem},{}", label.replace([',', '\n'], ";"));
    }
    write_atomic(&cfg.output.join("status.csv"), &status)?;
    let table = summary::summarize(&cfg.output, cfg.target_gap, cfg.report_rounds)?;
    write_atomic(&cfg.output.join("summary.md"), &table)?;
    Ok(table)
}
