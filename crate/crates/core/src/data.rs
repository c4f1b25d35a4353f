//! Sparse datasets: LIBSVM text ingestion, row normalization, seeded
//! sharding across machines, and synthetic generators.
//!
//! Feature indices are 1-based in files and 0-based in memory. Shuffling and
//! synthetic sampling use `ChaCha8Rng::seed_from_u64(seed)`, so every output
//! is a pure function of its arguments.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One sample `(x, y)` with a sparse feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// 0-based, strictly increasing.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, label: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument("indices and values differ in length".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("feature indices must be strictly increasing".into()));
        }
        Ok(Example { indices, values, label })
    }

    pub fn dense(values: &[f64], label: f64) -> Self {
        Example { indices: (0..values.len()).collect(), values: values.to_vec(), label }
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&j, &x)| x * w[j]).sum()
    }

    /// `out += alpha * x`
    #[inline]
    pub fn add_scaled_to(&self, alpha: f64, out: &mut [f64]) {
        for (&j, &x) in self.indices.iter().zip(&self.values) {
            out[j] += alpha * x;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        for e in &examples {
            if let Some(&last) = e.indices.last() {
                if last >= dim {
                    return Err(Error::InvalidArgument(format!("feature index {last} out of range for dim {dim}")));
                }
            }
        }
        Ok(Dataset { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// True when every label is exactly -1 or +1.
    pub fn is_binary(&self) -> bool {
        self.examples.iter().all(|e| e.label == 1.0 || e.label == -1.0)
    }

    /// Maps any label `> 0` to `+1` and everything else to `-1`.
    pub fn binarize_labels(mut self) -> Self {
        for e in &mut self.examples {
            e.label = if e.label > 0.0 { 1.0 } else { -1.0 };
        }
        self
    }

    pub fn max_row_norm(&self) -> f64 {
        self.examples.iter().map(|e| e.sq_norm().sqrt()).fold(0.0, f64::max)
    }

    /// Serializes to LIBSVM text (1-based indices, one example per line).
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            let _ = write!(out, "{}", e.label);
            for (&j, &v) in e.indices.iter().zip(&e.values) {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

/// One machine's local sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub machine_id: usize,
    pub examples: Vec<Example>,
    pub dim: usize,
}

impl DatasetShard {
    pub fn new(machine_id: usize, examples: Vec<Example>, dim: usize) -> Self {
        DatasetShard { machine_id, examples, dim }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_row_norm(&self) -> f64 {
        self.examples.iter().map(|e| e.sq_norm().sqrt()).fold(0.0, f64::max)
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Example>> {
    let content = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = content.split_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let label: f64 = label_tok.parse().map_err(|_| err(format!("non-numeric label {label_tok:?}")))?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("malformed feature {tok:?}")))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("bad feature index {idx:?}")))?;
        if idx == 0 {
            return Err(err("feature indices are 1-based".into()));
        }
        let val: f64 = val.parse().map_err(|_| err(format!("bad feature value {val:?}")))?;
        let idx = idx - 1;
        if let Some(&prev) = indices.last() {
            if idx <= prev {
                return Err(err(format!("feature index {} not increasing", idx + 1)));
            }
        }
        indices.push(idx);
        values.push(val);
    }
    Ok(Some(Example { indices, values, label }))
}

/// Parses LIBSVM text: `<label> (<idx>:<val>)*` per line, `#` starts a
/// comment, blank lines are skipped.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut dim = 0;
    for (i, line) in text.lines().enumerate() {
        if let Some(e) = parse_line(line, i + 1)? {
            if let Some(&last) = e.indices.last() {
                dim = dim.max(last + 1);
            }
            examples.push(e);
        }
    }
    Ok(Dataset { examples, dim })
}

pub fn read_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(e) = parse_line(&line, i + 1)? {
            if let Some(&last) = e.indices.last() {
                dim = dim.max(last + 1);
            }
            examples.push(e);
        }
    }
    Ok(Dataset { examples, dim })
}

/// Scales every nonzero row to unit Euclidean norm.
pub fn normalize_rows(d: &Dataset) -> Dataset {
    let examples = d
        .examples
        .iter()
        .map(|e| {
            let n = e.sq_norm().sqrt();
            let mut e = e.clone();
            if n > 0.0 {
                for v in &mut e.values {
                    *v /= n;
                }
            }
            e
        })
        .collect();
    Dataset { examples, dim: d.dim }
}

fn deal(examples: Vec<Example>, m: usize, dim: usize) -> Vec<DatasetShard> {
    let n = examples.len();
    let (base, extra) = (n / m, n % m);
    let mut it = examples.into_iter();
    (0..m)
        .map(|i| {
            let size = base + usize::from(i < extra);
            DatasetShard::new(i, it.by_ref().take(size).collect(), dim)
        })
        .collect()
}

fn check_shard_count(n: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one machine".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} examples over {m} machines")));
    }
    Ok(())
}

/// Shuffles with a seeded permutation and deals contiguous blocks; the first
/// `N mod m` shards get one extra example.
pub fn shard(d: &Dataset, m: usize, seed: u64) -> Result<Vec<DatasetShard>> {
    check_shard_count(d.len(), m)?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let examples = order.into_iter().map(|i| d.examples[i].clone()).collect();
    Ok(deal(examples, m, d.dim))
}

/// Deals contiguous blocks in file order, without shuffling.
pub fn shard_in_order(d: &Dataset, m: usize) -> Result<Vec<DatasetShard>> {
    check_shard_count(d.len(), m)?;
    Ok(deal(d.examples.clone(), m, d.dim))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_gaussian_row(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut x = gaussian_vec(rng, d);
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    x
}

fn decayed_unit_row(rng: &mut ChaCha8Rng, d: usize, decay: f64) -> Vec<f64> {
    let mut x = gaussian_vec(rng, d);
    if decay > 0.0 {
        for (j, v) in x.iter_mut().enumerate() {
            *v *= ((j + 1) as f64).powf(-decay);
        }
    }
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    x
}

/// Binary classification data: unit-norm Gaussian rows, labels
/// `sign(w*^T x)` for a seeded `w*`, each flipped with probability `noise`.
pub fn synth_classification(n_total: usize, d: usize, seed: u64, noise: f64) -> Result<Dataset> {
    synth_classification_decay(n_total, d, seed, noise, 0.0)
}

/// As [`synth_classification`], but coordinate `j` of every Gaussian row is
/// scaled by `(j + 1)^-decay` before normalization, which makes the Hessian
/// ill-conditioned for `decay > 0`.
pub fn synth_classification_decay(n_total: usize, d: usize, seed: u64, noise: f64, decay: f64) -> Result<Dataset> {
    if !(decay >= 0.0) {
        return Err(Error::InvalidArgument(format!("decay must be nonnegative, got {decay}")));
    }
    if n_total == 0 || d == 0 {
        return Err(Error::InvalidArgument("n_total and d must be positive".into()));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::InvalidArgument(format!("label noise {noise} outside [0, 0.5)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star = gaussian_vec(&mut rng, d);
    let examples = (0..n_total)
        .map(|_| {
            let x = decayed_unit_row(&mut rng, d, decay);
            let margin: f64 = x.iter().zip(&w_star).map(|(a, b)| a * b).sum();
            let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
            let u: f64 = rng.random();
            if u < noise {
                y = -y;
            }
            Example::dense(&x, y)
        })
        .collect();
    Ok(Dataset { examples, dim: d })
}

/// Regression data for the quadratic loss: unit-norm Gaussian rows and
/// `y = w*^T x + noise_std * N(0, 1)` with `w*` a seeded unit vector.
pub fn synth_regression(n_total: usize, d: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n_total == 0 || d == 0 {
        return Err(Error::InvalidArgument("n_total and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star = unit_gaussian_row(&mut rng, d);
    let examples = (0..n_total)
        .map(|_| {
            let x = unit_gaussian_row(&mut rng, d);
            let eps: f64 = rng.sample(StandardNormal);
            let y = x.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>() + noise_std * eps;
            Example::dense(&x, y)
        })
        .collect();
    Ok(Dataset { examples, dim: d })
}
