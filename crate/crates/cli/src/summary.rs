//! Markdown summary recomputed from the CSVs of an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use disco_core::trace::parse_gap_series;

/// One (algorithm, m, mu) cell of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub m: usize,
    /// Set only for cells of a shift sweep.
    pub mu: Option<f64>,
}

impl Cell {
    /// File-name stem, `<label>_m<m>` or `<label>_m<m>_mu<mu>`.
    pub fn stem(&self) -> String {
        match self.mu {
            Some(mu) => format!("{}_m{}_mu{mu:e}", self.label, self.m),
            None => format!("{}_m{}", self.label, self.m),
        }
    }

    pub fn parse(stem: &str) -> Option<Cell> {
        let (rest, mu) = match stem.rsplit_once("_mu") {
            Some((rest, mu)) if mu.parse::<f64>().is_ok() => (rest, Some(mu.parse().ok()?)),
            _ => (stem, None),
        };
        let (label, m) = rest.rsplit_once("_m")?;
        Some(Cell { label: label.to_string(), m: m.parse().ok()?, mu })
    }

    fn sort_key(&self) -> (String, usize, u64) {
        (self.label.clone(), self.m, self.mu.map_or(0, f64::to_bits))
    }
}

/// Every evaluated point of a cell, outer and intermediate, by rounds.
pub fn gap_points(dir: &Path, stem: &str) -> Result<Vec<(usize, f64)>> {
    let mut pts = vec![];
    for prefix in ["trace", "inter"] {
        let path = dir.join(format!("{prefix}_{stem}.csv"));
        if path.is_file() {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            pts.extend(parse_gap_series(&text));
        }
    }
    pts.sort_by_key(|p| p.0);
    Ok(pts)
}

/// Cells with a trace file or a `status.csv` entry, sorted.
pub fn cells(dir: &Path) -> Result<Vec<(Cell, Option<String>)>> {
    let mut found: BTreeMap<(String, usize, u64), (Cell, Option<String>)> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(cell) = name.strip_prefix("trace_").and_then(|s| s.strip_suffix(".csv")).and_then(Cell::parse) {
            found.insert(cell.sort_key(), (cell, None));
        }
    }
    if let Ok(text) = std::fs::read_to_string(dir.join("status.csv")) {
        for line in text.lines().skip(1) {
            if let Some((cell, status)) = line.split_once(',').and_then(|(s, st)| Some((Cell::parse(s)?, st.to_string()))) {
                found.entry(cell.sort_key()).or_insert((cell, None)).1 = Some(status);
            }
        }
    }
    Ok(found.into_values().collect())
}

fn fmt_gap(g: Option<f64>) -> String {
    match g {
        Some(g) if g.is_finite() => format!("{g:.2e}"),
        _ => "—".into(),
    }
}

/// Rounds to reach `target` per cell, plus the gap after `at_rounds` when
/// requested. Unreached targets print as "—".
pub fn summarize(dir: &Path, target: f64, at_rounds: Option<usize>) -> Result<String> {
    let mut out = format!("| algorithm | m | mu | status | rounds to gap <= {target:e} |");
    if let Some(r) = at_rounds {
        let _ = write!(out, " gap at {r} rounds |");
    }
    out.push_str(" final gap |\n|---|---|---|---|---|");
    if at_rounds.is_some() {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for (cell, status) in cells(dir)? {
        let pts = gap_points(dir, &cell.stem())?;
        let reached = pts.iter().find(|p| p.1 <= target).map_or("—".to_string(), |p| p.0.to_string());
        let mu = cell.mu.map_or("—".to_string(), |mu| format!("{mu:e}"));
        let _ = write!(out, "| {} | {} | {mu} | {} | {reached} |", cell.label, cell.m, status.as_deref().unwrap_or("—"));
        if let Some(r) = at_rounds {
            let best = pts.iter().take_while(|p| p.0 <= r).map(|p| p.1).filter(|g| !g.is_nan()).reduce(f64::min);
            let _ = write!(out, " {} |", fmt_gap(best));
        }
        let trace = std::fs::read_to_string(dir.join(format!("trace_{}.csv", cell.stem()))).unwrap_or_default();
        let _ = writeln!(out, " {} |", fmt_gap(parse_gap_series(&trace).last().map(|p| p.1)));
    }
    Ok(out)
}
