//! Gap-vs-rounds line charts as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::experiment::write_atomic;
use crate::summary::{cells, gap_points};

const W: f64 = 720.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const FLOOR: f64 = 1e-16;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Writes `plot_m<m>.svg` per machine count and returns the paths.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_m: BTreeMap<usize, Vec<(String, Vec<(f64, f64)>)>> = BTreeMap::new();
    for (cell, _) in cells(dir)? {
        // Best gap so far, so intermediate points never draw upward spikes.
        let mut best = f64::INFINITY;
        let pts: Vec<(f64, f64)> = gap_points(dir, &cell.stem())?
            .into_iter()
            .filter(|p| p.1.is_finite())
            .map(|(r, g)| {
                best = best.min(g.max(FLOOR));
                (r as f64, best.log10())
            })
            .collect();
        if !pts.is_empty() {
            let name = match cell.mu {
                Some(mu) => format!("{} mu={mu:e}", cell.label),
                None => cell.label.clone(),
            };
            by_m.entry(cell.m).or_default().push((name, pts));
        }
    }
    let mut written = vec![];
    for (m, series) in by_m {
        let path = dir.join(format!("plot_m{m}.svg"));
        write_atomic(&path, &render(&format!("m = {m}"), &series))?;
        written.push(path);
    }
    Ok(written)
}

fn render(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = series.iter().flat_map(|s| s.1.iter());
    let x_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_lo = all.clone().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let y_hi = all.map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().max(y_lo + 1.0);
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);

    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{title}</text>", W / 2.0);
    let _ = writeln!(s, "<path d=\"M{PAD},{PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>", H - PAD, W - PAD);
    let y_step = ((y_hi - y_lo) / 8.0).ceil().max(1.0);
    let mut y = y_lo;
    while y <= y_hi {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{y}</text>", PAD - 6.0, sy(y) + 4.0);
        y += y_step;
    }
    for i in 0..=5 {
        let x = x_max * i as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{x:.0}</text>", sx(x), H - PAD + 18.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">communication rounds</text>", W / 2.0, H - 16.0);
    let _ = writeln!(s, "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">objective gap</text>", H / 2.0, H / 2.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"/>", d.join(" "));
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", W - PAD - 150.0, W - PAD - 130.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", W - PAD - 124.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
