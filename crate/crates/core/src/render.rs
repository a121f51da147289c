//! Standalone SVG renderings of matrices, cluster trees and state timelines.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::cluster::{StateSequence, TreeRecord};
use crate::error::{Error, Result};
use crate::states::SectorBlock;
use crate::time::format_timestamp;

const BLUE: (f64, f64, f64) = (59.0, 76.0, 192.0);
const WHITE: (f64, f64, f64) = (247.0, 247.0, 247.0);
const RED: (f64, f64, f64) = (180.0, 4.0, 38.0);

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Diverging blue-white-red color for `v` on `[lo, hi]`; values outside are clamped.
pub fn diverging_color(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let (a, b, u) = if t < 0.5 {
        (BLUE, WHITE, t * 2.0)
    } else {
        (WHITE, RED, (t - 0.5) * 2.0)
    };
    let mix = |x: f64, y: f64| (x + (y - x) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorRange {
    /// Fixed [-1, 1], for correlation matrices.
    Correlation,
    /// [0, largest entry], for distance matrices.
    Observed,
    Fixed(f64, f64),
}

#[derive(Debug, Clone)]
pub struct HeatmapStyle {
    pub range: ColorRange,
    pub cell_size: f64,
    pub title: Option<String>,
    /// Sector blocks drawn as outlines along the diagonal.
    pub blocks: Vec<SectorBlock>,
    /// Row/column labels are drawn only up to this many rows.
    pub max_labels: usize,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        Self {
            range: ColorRange::Correlation,
            cell_size: 12.0,
            title: None,
            blocks: Vec::new(),
            max_labels: 60,
        }
    }
}

impl HeatmapStyle {
    pub fn distances() -> Self {
        Self {
            range: ColorRange::Observed,
            ..Self::default()
        }
    }
}

/// One `rect.cell` per matrix entry, row-major.
pub fn render_heatmap(values: &Array2<f64>, labels: &[String], style: &HeatmapStyle) -> Result<String> {
    let (rows, cols) = values.dim();
    if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, col });
    }
    let (lo, hi) = match style.range {
        ColorRange::Correlation => (-1.0, 1.0),
        ColorRange::Observed => (0.0, values.iter().copied().fold(0.0, f64::max)),
        ColorRange::Fixed(lo, hi) => (lo, hi),
    };
    let show_labels = !labels.is_empty() && rows <= style.max_labels;
    let margin = if show_labels { 90.0 } else { 10.0 };
    let top = margin + if style.title.is_some() { 20.0 } else { 0.0 };
    let cs = style.cell_size;
    let legend_w = 70.0;
    let width = margin + cols as f64 * cs + 10.0 + legend_w;
    let height = top + rows as f64 * cs + 10.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(title) = &style.title {
        let _ = writeln!(
            svg,
            r#"<text class="title" x="{margin}" y="14" font-size="12">{}</text>"#,
            escape(title)
        );
    }
    let _ = writeln!(svg, r#"<g class="cells" shape-rendering="crispEdges">"#);
    for ((i, j), v) in values.indexed_iter() {
        let _ = writeln!(
            svg,
            r#"<rect class="cell" x="{}" y="{}" width="{cs}" height="{cs}" fill="{}"/>"#,
            margin + j as f64 * cs,
            top + i as f64 * cs,
            diverging_color(*v, lo, hi)
        );
    }
    let _ = writeln!(svg, "</g>");
    for b in &style.blocks {
        let x = margin + b.range.start as f64 * cs;
        let y = top + b.range.start as f64 * cs;
        let s = b.range.len() as f64 * cs;
        let _ = writeln!(
            svg,
            r#"<rect class="block" x="{x}" y="{y}" width="{s}" height="{s}" fill="none" stroke="black" stroke-width="1"><title>{}</title></rect>"#,
            b.sector.name()
        );
    }
    if show_labels {
        for (i, l) in labels.iter().enumerate().take(rows) {
            let c = i as f64 * cs + cs * 0.75;
            let _ = writeln!(
                svg,
                r#"<text class="row-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
                margin - 3.0,
                top + c,
                escape(l)
            );
            let _ = writeln!(
                svg,
                r#"<text class="col-label" transform="translate({},{}) rotate(-90)">{}</text>"#,
                margin + c,
                top - 3.0,
                escape(l)
            );
        }
    }
    // color bar
    let bar_x = margin + cols as f64 * cs + 10.0;
    let bar_h = (rows as f64 * cs).max(40.0);
    let steps = 20;
    for s in 0..steps {
        let frac = s as f64 / (steps - 1) as f64;
        let v = hi - frac * (hi - lo);
        let _ = writeln!(
            svg,
            r#"<rect class="legend" x="{bar_x}" y="{}" width="12" height="{}" fill="{}"/>"#,
            top + frac * (bar_h - bar_h / steps as f64),
            bar_h / steps as f64,
            diverging_color(v, lo, hi)
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{hi:.3}</text>"#, bar_x + 15.0, top + 8.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{lo:.3}</text>"#, bar_x + 15.0, top + bar_h);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn leaf_label(node: &TreeRecord) -> String {
    match node.members.as_slice() {
        [one] => one.clone(),
        [first, .., last] => format!("{first} .. {last} ({})", node.members.len()),
        [] => String::new(),
    }
}

fn max_path(node: &TreeRecord) -> f64 {
    node.children
        .iter()
        .map(|c| c.branch_length + max_path(c))
        .fold(0.0, f64::max)
}

/// Horizontal dendrogram; each `line.edge` is as long as the child's branch length times a common scale.
pub fn render_tree(root: &TreeRecord) -> String {
    const ROW: f64 = 14.0;
    const LEFT: f64 = 20.0;
    const PLOT_W: f64 = 500.0;
    let longest = max_path(root);
    let scale = if longest > 0.0 { PLOT_W / longest } else { 1.0 };
    let leaves = root.leaf_count();
    let width = LEFT + PLOT_W + 220.0;
    let height = 20.0 + leaves as f64 * ROW;

    let mut body = String::new();
    let mut next_leaf = 0usize;
    fn place(node: &TreeRecord, x: f64, scale: f64, next_leaf: &mut usize, body: &mut String) -> f64 {
        if node.children.is_empty() {
            let y = 15.0 + *next_leaf as f64 * ROW;
            *next_leaf += 1;
            let _ = writeln!(
                body,
                r#"<circle class="leaf" cx="{x}" cy="{y}" r="2"/><text class="leaf-label" x="{}" y="{}">{}</text>"#,
                x + 5.0,
                y + 3.0,
                escape(&leaf_label(node))
            );
            if let Some(s) = node.state_id {
                let _ = writeln!(
                    body,
                    r#"<text class="state" x="{}" y="{}" font-weight="bold" font-size="12">{s}</text>"#,
                    x - 14.0,
                    y - 3.0
                );
            }
            return y;
        }
        let kids: Vec<f64> = node
            .children
            .iter()
            .map(|c| {
                let cx = x + c.branch_length * scale;
                let p = place(c, cx, scale, next_leaf, body);
                let _ = writeln!(
                    body,
                    r#"<line class="edge" x1="{x}" y1="{y}" x2="{cx}" y2="{y}" data-branch-length="{}" stroke="black"/>"#,
                    c.branch_length,
                    y = p
                );
                p
            })
            .collect();
        let (y0, y1) = kids
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(*p), b.max(*p)));
        let _ = writeln!(
            body,
            r#"<line class="connector" x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="black"/>"#
        );
        let y = (y0 + y1) / 2.0;
        if let Some(s) = node.state_id {
            let _ = writeln!(
                body,
                r#"<text class="state" x="{}" y="{}" font-weight="bold" font-size="12">{s}</text>"#,
                x + 3.0,
                y - 3.0
            );
        }
        y
    }
    place(root, LEFT, scale, &mut next_leaf, &mut body);

    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"9\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// State id against time: one `rect.mark` per window.
pub fn render_timeline(seq: &StateSequence) -> String {
    const W: f64 = 6.0;
    const ROW: f64 = 16.0;
    let n_states = seq.entries.iter().map(|e| e.1).max().unwrap_or(1);
    let left = 40.0;
    let width = left + seq.entries.len().max(1) as f64 * W + 20.0;
    let height = 30.0 + n_states as f64 * ROW + 30.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"9\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for s in 1..=n_states {
        let _ = writeln!(
            svg,
            r#"<text class="state-label" x="{}" y="{}" text-anchor="end">{s}</text>"#,
            left - 5.0,
            20.0 + s as f64 * ROW - 4.0
        );
    }
    for (i, (t, s)) in seq.entries.iter().enumerate() {
        let color = diverging_color(*s as f64, 0.5, n_states as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<rect class="mark" x="{}" y="{}" width="{W}" height="{}" fill="{color}"><title>{} state {s}</title></rect>"#,
            left + i as f64 * W,
            20.0 + (*s as f64 - 1.0) * ROW,
            ROW - 2.0,
            format_timestamp(t)
        );
    }
    if let (Some(first), Some(last)) = (seq.entries.first(), seq.entries.last()) {
        let y = 20.0 + n_states as f64 * ROW + 14.0;
        let _ = writeln!(svg, r#"<text x="{left}" y="{y}">{}</text>"#, format_timestamp(&first.0));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            width - 20.0,
            format_timestamp(&last.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
