//! Rendering: deterministic SVG heatmaps with a diverging color scale and the
//! run summary assembled from the analytics outputs.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::analytics::{AsymmetrySummary, GroupMatrix, OutlierReport, ResourceStat};
use crate::matrix::LabeledMatrix;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot render an empty matrix")]
    EmptyMatrix,
    #[error("non-finite cell at ({0}, {1})")]
    NonFinite(usize, usize),
}

const CELL: f64 = 26.0;
const FONT: f64 = 11.0;
const CHAR_W: f64 = 6.6;
const PAD: f64 = 8.0;

fn diverging_color(value: f64, max_abs: f64) -> String {
    let t = if max_abs > 0.0 {
        (value / max_abs).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let lerp = |from: f64, to: f64, w: f64| (from + (to - from) * w).round() as u8;
    let w = t.abs();
    let (r, g, b) = if t < 0.0 {
        // White toward red: interference.
        (lerp(255.0, 202.0, w), lerp(255.0, 32.0, w), lerp(255.0, 38.0, w))
    } else {
        // White toward blue: transfer.
        (lerp(255.0, 26.0, w), lerp(255.0, 90.0, w), lerp(255.0, 196.0, w))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Render a labeled matrix as an SVG heatmap. Negative cells shade toward
/// red, positive toward blue, centered at zero; masked cells are hatched.
/// Output bytes are a pure function of the input.
pub fn render_heatmap(matrix: &LabeledMatrix, title: &str) -> Result<String, ReportError> {
    let n = matrix.n();
    if n == 0 {
        return Err(ReportError::EmptyMatrix);
    }
    let mut max_abs = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            if let Some(v) = matrix.get(r, c) {
                if !v.is_finite() {
                    return Err(ReportError::NonFinite(r, c));
                }
                max_abs = max_abs.max(v.abs());
            }
        }
    }
    let longest = matrix.labels().iter().map(|l| l.chars().count()).max().unwrap_or(1) as f64;
    let label_w = longest * CHAR_W + PAD;
    let title_h = if title.is_empty() { 0.0 } else { 20.0 };
    let grid = n as f64 * CELL;
    let width = label_w + grid + PAD;
    let height = title_h + label_w + grid + PAD;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.1}\" height=\"{height:.1}\" viewBox=\"0 0 {width:.1} {height:.1}\">\n"
    ));
    svg.push_str("<defs><pattern id=\"masked\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\"><rect width=\"6\" height=\"6\" fill=\"#e8e8e8\"/><path d=\"M0 6 L6 0\" stroke=\"#9a9a9a\" stroke-width=\"1\"/></pattern></defs>\n");
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width:.1}\" height=\"{height:.1}\" fill=\"#ffffff\"/>\n"
    ));
    if !title.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"14\" font-family=\"monospace\" font-size=\"{FONT:.1}\" text-anchor=\"middle\">{}</text>\n",
            width / 2.0,
            xml_escape(title)
        ));
    }
    let x0 = label_w;
    let y0 = title_h + label_w;
    // Column labels, rotated.
    for (c, label) in matrix.labels().iter().enumerate() {
        let x = x0 + c as f64 * CELL + CELL / 2.0 + FONT / 3.0;
        let y = y0 - 4.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"monospace\" font-size=\"{FONT:.1}\" text-anchor=\"start\" transform=\"rotate(-90 {x:.1} {y:.1})\">{}</text>\n",
            xml_escape(label)
        ));
    }
    // Row labels.
    for (r, label) in matrix.labels().iter().enumerate() {
        let x = label_w - 4.0;
        let y = y0 + r as f64 * CELL + CELL / 2.0 + FONT / 3.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"monospace\" font-size=\"{FONT:.1}\" text-anchor=\"end\">{}</text>\n",
            xml_escape(label)
        ));
    }
    for r in 0..n {
        for c in 0..n {
            let x = x0 + c as f64 * CELL;
            let y = y0 + r as f64 * CELL;
            let fill = match matrix.get(r, c) {
                Some(v) => diverging_color(v, max_abs),
                None => "url(#masked)".to_string(),
            };
            let tooltip = match matrix.get(r, c) {
                Some(v) => format!("{} / {} = {v:.4}", matrix.labels()[r], matrix.labels()[c]),
                None => format!("{} / {} masked", matrix.labels()[r], matrix.labels()[c]),
            };
            svg.push_str(&format!(
                "<rect class=\"cell\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"{fill}\" stroke=\"#d0d0d0\" stroke-width=\"0.5\"><title>{}</title></rect>\n",
                xml_escape(&tooltip)
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Structural well-formedness check for the generated XML: balanced tags,
/// single root, no stray `<`. Used by the report command's self-check and by
/// tests.
pub fn xml_well_formed(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let mut rest = text.trim();
    while let Some(open) = rest.find('<') {
        if rest[..open].contains('<') {
            return false;
        }
        let Some(close_rel) = rest[open..].find('>') else {
            return false;
        };
        let tag = &rest[open + 1..open + close_rel];
        rest = &rest[open + close_rel + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(top) if top == name.trim() => {
                    if stack.is_empty() {
                        roots += 1;
                    }
                }
                _ => return false,
            }
        } else if tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
        } else {
            let name = tag.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return false;
            }
            stack.push(name.to_string());
        }
    }
    stack.is_empty() && roots == 1 && !rest.contains('>')
}

/// JSON-friendly form of a group matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMatrixJson {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl GroupMatrixJson {
    pub fn from_group(g: &GroupMatrix) -> Self {
        let n = g.matrix.n();
        GroupMatrixJson {
            labels: g.matrix.labels().to_vec(),
            values: (0..n)
                .map(|r| (0..n).map(|c| g.matrix.get(r, c)).collect())
                .collect(),
            counts: (0..n).map(|r| (0..n).map(|c| g.count(r, c)).collect()).collect(),
        }
    }
}

/// Top-level `summary.json` payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub n_languages: usize,
    pub robustness_top5: Vec<(String, f64)>,
    pub robustness_bottom5: Vec<(String, f64)>,
    pub friendliness_top5: Vec<(String, f64)>,
    pub friendliness_bottom5: Vec<(String, f64)>,
    pub max_asymmetry: Option<AsymmetrySummary>,
    pub outliers: OutlierReport,
    pub excluded_languages: Vec<String>,
    pub group_matrices: BTreeMap<String, GroupMatrixJson>,
    pub resource_stats: Vec<ResourceStat>,
    pub metadata: BTreeMap<String, String>,
}

/// Sort descending and take the extremes for the summary.
pub fn top_bottom(values: &[(String, f64)], k: usize) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
    let top = sorted.iter().take(k).cloned().collect();
    let bottom = sorted.iter().rev().take(k).cloned().collect();
    (top, bottom)
}
