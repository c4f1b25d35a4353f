//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use disco_core::{LossKind, ToleranceMode};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Machine counts; one cell per algorithm and `m`.
    pub m: Vec<usize>,
    pub gamma: f64,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default)]
    pub eta: EtaMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub output: PathBuf,
    /// Unscaled gap that counts as reaching the target.
    #[serde(default = "default_target")]
    pub target_gap: f64,
    /// Round budget per cell.
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Also report the gap after this many rounds.
    #[serde(default)]
    pub report_rounds: Option<usize>,
    #[serde(rename = "algorithm")]
    pub algorithms: Vec<AlgorithmSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        task: Task,
        n: usize,
        d: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        /// Spectral decay of the feature covariance (classification only).
        #[serde(default)]
        decay: f64,
    },
    Libsvm {
        path: PathBuf,
        #[serde(default = "yes")]
        normalize: bool,
        /// Maps labels `> 0` to `+1` and the rest to `-1`.
        #[serde(default = "yes")]
        binarize: bool,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    #[default]
    One,
    Theory,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    /// disco, adaptive_disco, simple_disco, disco_l1, gd, gd_backtracking,
    /// afg, lbfgs or dane.
    pub name: String,
    /// Distinguishes two entries of the same algorithm in file names.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub mu: Option<f64>,
    /// One cell per value; overrides `mu`.
    #[serde(default)]
    pub mu_sweep: Option<Vec<f64>>,
    /// Multiply the shift by `sqrt(m)`.
    #[serde(default)]
    pub mu_scale_sqrt_m: bool,
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// `linear`, `superlinear` or `practical:<c>`.
    #[serde(default)]
    pub tolerance: Option<String>,
    #[serde(default)]
    pub intermediate: bool,
    #[serde(default)]
    pub memory: Option<usize>,
    /// `l1` weight for `disco_l1`.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_loss() -> String {
    "logistic".into()
}
fn default_epsilon() -> f64 {
    1e-10
}
fn default_target() -> f64 {
    1e-6
}
fn default_max_rounds() -> usize {
    2000
}
fn default_noise() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

pub const ALGORITHMS: [&str; 9] = ["disco", "adaptive_disco", "simple_disco", "disco_l1", "gd", "gd_backtracking", "afg", "lbfgs", "dane"];

impl ExperimentConfig {
    /// Reads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output = base.join(&cfg.output);
        if let DataSource::Libsvm { path, .. } = &mut cfg.data {
            *path = base.join(&*path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() || self.m.contains(&0) {
            bail!("m must be a nonempty list of positive machine counts");
        }
        if !(self.gamma >= 0.0) {
            bail!("gamma must be nonnegative");
        }
        if !(self.epsilon > 0.0 && self.target_gap > 0.0) {
            bail!("epsilon and target_gap must be positive");
        }
        self.loss_kind()?;
        if let DataSource::Libsvm { path, .. } = &self.data {
            if !path.is_file() {
                bail!("data file {} does not exist", path.display());
            }
        }
        if self.algorithms.is_empty() {
            bail!("no [[algorithm]] entries");
        }
        for a in &self.algorithms {
            if !ALGORITHMS.contains(&a.name.as_str()) {
                bail!("unknown algorithm {:?}; expected one of {}", a.name, ALGORITHMS.join(", "));
            }
            a.tolerance_mode()?;
            if a.mu.into_iter().chain(a.mu_sweep.iter().flatten().copied()).any(|mu| !(mu >= 0.0)) {
                bail!("{}: shifts must be nonnegative", a.name);
            }
            if let Some(l) = &a.label {
                if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                    bail!("label {l:?} must be nonempty ASCII letters, digits or '-'");
                }
            }
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        match self.loss.as_str() {
            "logistic" => Ok(LossKind::Logistic),
            "quadratic" => Ok(LossKind::Quadratic),
            s => match s.strip_prefix("hinge:").map(str::parse::<f64>) {
                Some(Ok(p)) => Ok(LossKind::SmoothedHinge(p)),
                _ => bail!("unknown loss {s:?}; expected logistic, quadratic or hinge:<p>"),
            },
        }
    }
}

impl AlgorithmSpec {
    pub fn tolerance_mode(&self) -> Result<Option<ToleranceMode>> {
        let Some(t) = &self.tolerance else { return Ok(None) };
        Ok(Some(match t.as_str() {
            "linear" => ToleranceMode::Linear,
            "superlinear" => ToleranceMode::Superlinear,
            s => match s.strip_prefix("practical:").map(str::parse::<f64>) {
                Some(Ok(c)) => ToleranceMode::Practical(c),
                _ => bail!("unknown tolerance {s:?}; expected linear, superlinear or practical:<c>"),
            },
        }))
    }

    /// Shifts to run, one cell each; `None` when the algorithm takes none.
    pub fn shifts(&self) -> Vec<Option<f64>> {
        match (&self.mu_sweep, self.mu) {
            (Some(sweep), _) => sweep.iter().map(|&mu| Some(mu)).collect(),
            (None, mu) => vec![mu],
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }
}
