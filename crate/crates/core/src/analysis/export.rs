//! Weight heatmaps (CSV/SVG), thresholded connectivity graphs (DOT) and
//! small SVG plots.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::numcore::Matrix;

use super::stats::{SaturationStats, UnitDistribution};
use super::AnalysisError;

/// CSV of a weight matrix as stored: row `i` holds the outgoing weights of
/// sending unit (or token) `i`, column `j` the incoming weights of
/// receiving unit `j`.
pub fn heatmap_csv(name: &str, m: &Matrix) -> String {
    let mut out = format!("# {name} [{}x{}]; rows: sending units (outgoing weights); columns: receiving units (incoming weights)\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        let cells: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_heatmap_csv(text: &str) -> Result<Matrix, AnalysisError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| AnalysisError::Format(format!("line {}: bad number {c:?}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(AnalysisError::Format("heatmap rows are ragged or missing".into()));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Mean absolute weight of each row.
pub fn row_mean_abs(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().map(|v| v.abs()).sum::<f64>() / m.cols().max(1) as f64).collect()
}

fn ramp(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{},{})", fade(t), fade(t))
    } else {
        format!("rgb({},{},255)", fade(t), fade(t))
    }
}

/// Blue (negative) to white to red (positive), symmetric around zero.
pub fn heatmap_svg(name: &str, m: &Matrix) -> String {
    let cell = if m.cols() > 64 { 2 } else { 12 };
    let (w, h) = (m.cols() * cell, m.rows() * cell);
    let scale = m.max_abs();
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n<title>{name}</title>\n", w, h + 20);
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>", c * cell, 20 + r * cell, ramp(m.get(r, c), scale));
        }
    }
    let _ = writeln!(s, "<text x=\"0\" y=\"14\" font-size=\"12\">{name} (|w| max {scale:.3})</text>");
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Edges `from -> to` for every `|w[from][to]| >= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityGraph {
    pub tensor: String,
    pub threshold: f64,
    pub rows: usize,
    pub cols: usize,
    pub edges: Vec<Edge>,
    pub kept_fraction: f64,
    pub out_degree: Vec<usize>,
    pub in_degree: Vec<usize>,
}

pub fn connectivity_graph(tensor: &str, m: &Matrix, threshold: f64) -> Result<ConnectivityGraph, AnalysisError> {
    if !(threshold >= 0.0) {
        return Err(AnalysisError::Config(format!("threshold must be non-negative, got {threshold}")));
    }
    let mut edges = Vec::new();
    let mut out_degree = vec![0; m.rows()];
    let mut in_degree = vec![0; m.cols()];
    for r in 0..m.rows() {
        for (c, &w) in m.row(r).iter().enumerate() {
            if w.abs() >= threshold {
                edges.push(Edge { from: r, to: c, weight: w });
                out_degree[r] += 1;
                in_degree[c] += 1;
            }
        }
    }
    let kept_fraction = if m.is_empty() { 0.0 } else { edges.len() as f64 / m.len() as f64 };
    Ok(ConnectivityGraph { tensor: tensor.to_string(), threshold, rows: m.rows(), cols: m.cols(), edges, kept_fraction, out_degree, in_degree })
}

impl ConnectivityGraph {
    /// Bottom layer nodes `i*`, top layer nodes `o*`; colour carries the
    /// sign and pen width the magnitude.
    pub fn to_dot(&self) -> String {
        let mut s = format!(
            "digraph \"{}\" {{\n  // threshold {} kept {} of {} ({:.4})\n  rankdir=BT;\n",
            self.tensor,
            self.threshold,
            self.edges.len(),
            self.rows * self.cols,
            self.kept_fraction
        );
        for e in &self.edges {
            let colour = if e.weight >= 0.0 { "red" } else { "blue" };
            let _ = writeln!(s, "  i{} -> o{} [weight={:.6}, color={colour}, penwidth={:.3}];", e.from, e.to, e.weight, 1.0 + 4.0 * e.weight.abs());
        }
        s.push_str("}\n");
        s
    }
}

const PLOT: (f64, f64, f64) = (480.0, 320.0, 40.0);

/// Left fraction on x, right fraction on y, one point per gate unit.
pub fn saturation_svg(title: &str, stats: &[(&str, &SaturationStats)]) -> String {
    let (w, h, m) = PLOT;
    let colours = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    let mut s = axes(title, "left-saturated fraction", "right-saturated fraction");
    for (i, (label, st)) in stats.iter().enumerate() {
        let colour = colours[i % colours.len()];
        for (l, r) in st.left.iter().zip(&st.right) {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"{colour}\" fill-opacity=\"0.6\"/>", m + l * (w - 2.0 * m), h - m - r * (h - 2.0 * m));
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{label}</text>", w - 120.0, m + 14.0 * (i as f64 + 1.0));
    }
    s.push_str("</svg>\n");
    s
}

/// Box plots on a `[-1, 1]` axis with full-range whiskers.
pub fn distributions_svg(title: &str, series: &[(&str, &[UnitDistribution])]) -> String {
    let (w, h, m) = PLOT;
    let colours = ["#1f77b4", "#ff7f0e"];
    let mut s = axes(title, "sampled unit", "activation");
    let y = |v: f64| h - m - (v + 1.0) / 2.0 * (h - 2.0 * m);
    let n = series.iter().map(|(_, d)| d.len()).max().unwrap_or(1).max(1) as f64;
    let slot = (w - 2.0 * m) / n;
    for (si, (label, dists)) in series.iter().enumerate() {
        let colour = colours[si % colours.len()];
        let off = slot * (0.2 + 0.4 * si as f64);
        for (k, d) in dists.iter().enumerate() {
            let x = m + k as f64 * slot + off;
            let bw = (slot * 0.35).max(1.0);
            let _ = writeln!(s, "<line x1=\"{0:.1}\" x2=\"{0:.1}\" y1=\"{1:.1}\" y2=\"{2:.1}\" stroke=\"{colour}\"/>", x + bw / 2.0, y(d.min), y(d.max));
            let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{colour}\"/>", y(d.q3), (y(d.q1) - y(d.q3)).max(0.5));
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{label}</text>", w - 120.0, m + 14.0 * (si as f64 + 1.0));
    }
    s.push_str("</svg>\n");
    s
}

fn axes(title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h, m) = PLOT;
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    let _ = writeln!(s, "<text x=\"{m}\" y=\"16\" font-size=\"13\">{title}</text>");
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", h - m, w - m);
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\">{x_label}</text>", w / 2.0 - 40.0, h - 8.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"11\" transform=\"rotate(-90 12,{})\">{y_label}</text>", h / 2.0, h / 2.0);
    s
}
