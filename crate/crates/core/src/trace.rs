//! Per-iteration run history and its CSV form.

use std::fmt::Write as _;

/// State at one iterate `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// Rounds consumed when `w_k` became available.
    pub rounds: usize,
    /// Smooth objective `f(w_k)` (scaled).
    pub f: f64,
    pub grad_norm: f64,
    /// `delta` of the step that produced `w_k`; NaN when not applicable.
    pub delta: f64,
    pub pcg_iters: usize,
    pub mu: f64,
    /// `Psi(w_k)` for composite runs.
    pub penalty: Option<f64>,
    /// `||w_k||_1` for composite runs.
    pub l1: Option<f64>,
}

impl TraceRecord {
    pub fn objective(&self) -> f64 {
        self.f + self.penalty.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceStatus {
    /// The algorithm's own stopping rule fired.
    Converged,
    /// The unscaled gap reached the configured target.
    TargetReached,
    MaxOuter,
    RoundCap,
    Diverged,
    Failed(String),
    Running,
}

impl TraceStatus {
    pub fn label(&self) -> String {
        match self {
            TraceStatus::Converged => "converged".into(),
            TraceStatus::TargetReached => "target_reached".into(),
            TraceStatus::MaxOuter => "max_outer".into(),
            TraceStatus::RoundCap => "round_cap".into(),
            TraceStatus::Diverged => "diverged".into(),
            TraceStatus::Failed(msg) => format!("failed: {msg}"),
            TraceStatus::Running => "running".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace {
    pub algorithm: String,
    /// Objective scale; unscaled values are `f / eta`.
    pub eta: f64,
    /// Reference optimum of the scaled objective.
    pub f_star: Option<f64>,
    pub records: Vec<TraceRecord>,
    /// Points evaluated inside inner solves, such as `w_k - v^(t) / (1 + delta^(t))`
    /// after every PCG round. Not iterates of the outer method.
    pub intermediate: Vec<TraceRecord>,
    pub status: TraceStatus,
    pub final_w: Vec<f64>,
    pub warnings: Vec<String>,
}

impl NewtonTrace {
    pub fn new(algorithm: impl Into<String>, eta: f64, f_star: Option<f64>) -> Self {
        NewtonTrace {
            algorithm: algorithm.into(),
            eta,
            f_star,
            records: Vec::new(),
            intermediate: Vec::new(),
            status: TraceStatus::Running,
            final_w: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn total_rounds(&self) -> usize {
        self.records.last().map_or(0, |r| r.rounds)
    }

    /// Number of outer iterations (records after the initial point).
    pub fn outer_iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Unscaled gap `(F(w_k) - F*) / eta`, when a reference is known.
    pub fn ell_gap(&self, record: &TraceRecord) -> Option<f64> {
        self.f_star.map(|fs| (record.objective() - fs) / self.eta)
    }

    /// Outer and intermediate records ordered by rounds (outer first on ties).
    pub fn all_points(&self) -> Vec<&TraceRecord> {
        let mut all: Vec<(usize, u8, &TraceRecord)> = self.records.iter().map(|r| (r.rounds, 0, r)).collect();
        all.extend(self.intermediate.iter().map(|r| (r.rounds, 1, r)));
        all.sort_by_key(|&(rounds, tag, _)| (rounds, tag));
        all.into_iter().map(|(_, _, r)| r).collect()
    }

    /// First round count at which some evaluated point (outer or
    /// intermediate) has unscaled gap at most `target`.
    pub fn rounds_to_gap(&self, target: f64) -> Option<usize> {
        self.all_points().into_iter().find(|r| self.ell_gap(r).is_some_and(|g| g <= target)).map(|r| r.rounds)
    }

    /// Smallest gap among points available within `rounds` rounds.
    pub fn gap_at_rounds(&self, rounds: usize) -> Option<f64> {
        self.all_points()
            .into_iter()
            .take_while(|r| r.rounds <= rounds)
            .filter_map(|r| self.ell_gap(r))
            .fold(None, |best: Option<f64>, g| Some(best.map_or(g, |b| b.min(g))))
    }

    pub fn is_composite(&self) -> bool {
        self.records.iter().any(|r| r.penalty.is_some())
    }

    /// `k,rounds,f,ell_gap,grad_norm,delta,pcg_iters,mu`, plus `F,l1` for
    /// composite runs. Missing values are written as `nan`.
    pub fn to_csv(&self) -> String {
        self.csv_of(&self.records)
    }

    /// Intermediate points in the same CSV layout.
    pub fn intermediate_csv(&self) -> String {
        self.csv_of(&self.intermediate)
    }

    fn csv_of(&self, rows: &[TraceRecord]) -> String {
        let composite = self.is_composite();
        let mut s = String::from("k,rounds,f,ell_gap,grad_norm,delta,pcg_iters,mu");
        if composite {
            s.push_str(",F,l1");
        }
        s.push('\n');
        for r in rows {
            let gap = self.ell_gap(r).unwrap_or(f64::NAN);
            let _ = write!(s, "{},{},{},{},{},{},{},{}", r.k, r.rounds, fmt(r.f), fmt(gap), fmt(r.grad_norm), fmt(r.delta), r.pcg_iters, fmt(r.mu));
            if composite {
                let _ = write!(s, ",{},{}", fmt(r.objective()), fmt(r.l1.unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
        s
    }
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

/// Parses the trace CSV back into `(rounds, ell_gap)` pairs.
pub fn parse_gap_series(csv: &str) -> Vec<(usize, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let Some(ri) = header.iter().position(|h| *h == "rounds") else { return Vec::new() };
    let Some(gi) = header.iter().position(|h| *h == "ell_gap") else { return Vec::new() };
    lines
        .filter_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let rounds = cols.get(ri)?.parse().ok()?;
            let gap = cols.get(gi)?.parse().unwrap_or(f64::NAN);
            Some((rounds, gap))
        })
        .collect()
}
