//! Matrix analytics: assembling the loss matrix from sweep results, deriving
//! the interference matrix, and the downstream statistics (robustness,
//! friendliness, IQR outlier screening, asymmetry, and block aggregation by
//! script, family, or resource level).
//!
//! Conventions: row = evaluated language, column = secondary language in the
//! training mix, diagonal = monolingual baseline. An interference cell
//! `I(A,B) = (L(A,A) - L(A,B)) / L(A,A)` is negative when adding B hurt A and
//! positive when it helped. Masked (failed) cells never enter any average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::matrix::LabeledMatrix;
use crate::registry::{Registry, ResourceLevel};

/// Sweep output: `results[evaluated][secondary] = held-out loss`.
pub type ResultsTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("missing diagonal (monolingual) loss for `{0}`")]
    MissingDiagonal(String),
    #[error("zero diagonal loss for `{0}` (cannot normalize)")]
    ZeroDiagonal(String),
    #[error("row `{0}` has no present off-diagonal entries")]
    EmptyRow(String),
    #[error("column `{0}` has no present off-diagonal entries")]
    EmptyColumn(String),
    #[error("IQR outlier detection needs at least 4 values, got {0}")]
    TooFewValues(usize),
    #[error("no group of size >= {0} to aggregate")]
    NoGroups(usize),
    #[error("result for `{evaluated}` / `{secondary}` does not match any registry language")]
    UnknownLanguage { evaluated: String, secondary: String },
}

/// N x N held-out losses over registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix(pub LabeledMatrix);

/// N x N relative loss changes; diagonal exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMatrix(pub LabeledMatrix);

impl LossMatrix {
    pub fn matrix(&self) -> &LabeledMatrix {
        &self.0
    }

    pub fn without(&self, exclude: &[String]) -> LossMatrix {
        LossMatrix(self.0.without(exclude))
    }
}

impl InterferenceMatrix {
    pub fn matrix(&self) -> &LabeledMatrix {
        &self.0
    }

    pub fn without(&self, exclude: &[String]) -> InterferenceMatrix {
        InterferenceMatrix(self.0.without(exclude))
    }
}

/// Quartile bounds and flagged codes for one scored quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierReport {
    pub metric: String,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower: f64,
    pub upper: f64,
    pub outliers: Vec<String>,
}

/// Block-aggregated interference over group labels, with per-cell counts of
/// the averaged entries.
#[derive(Debug, Clone)]
pub struct GroupMatrix {
    pub matrix: LabeledMatrix,
    pub counts: Vec<usize>,
}

impl GroupMatrix {
    pub fn count(&self, row: usize, col: usize) -> usize {
        self.counts[row * self.matrix.n() + col]
    }
}

/// Per-resource-level averages of robustness and friendliness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceStat {
    pub level: String,
    pub n_languages: usize,
    pub mean_robustness: f64,
    pub mean_friendliness: f64,
}

/// Pair with the largest directional imbalance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymmetrySummary {
    pub row: String,
    pub column: String,
    pub delta: f64,
}

/// Place sweep results into matrix form over registry order. Entries missing
/// from the table (failed jobs) stay masked.
pub fn assemble_loss_matrix(
    results: &ResultsTable,
    registry: &Registry,
) -> Result<LossMatrix, AnalyticsError> {
    let mut m = LabeledMatrix::new(registry.codes());
    for (evaluated, row) in results {
        let r = registry
            .index_of(evaluated)
            .ok_or_else(|| AnalyticsError::UnknownLanguage {
                evaluated: evaluated.clone(),
                secondary: String::new(),
            })?;
        for (secondary, &loss) in row {
            let c = registry
                .index_of(secondary)
                .ok_or_else(|| AnalyticsError::UnknownLanguage {
                    evaluated: evaluated.clone(),
                    secondary: secondary.clone(),
                })?;
            m.set(r, c, loss);
        }
    }
    Ok(LossMatrix(m))
}

/// Relative loss change per cell: `I(A,B) = (L(A,A) - L(A,B)) / L(A,A)`.
/// The diagonal is zero by construction; masked loss cells stay masked.
pub fn interference(loss: &LossMatrix) -> Result<InterferenceMatrix, AnalyticsError> {
    let l = loss.matrix();
    let n = l.n();
    let mut m = LabeledMatrix::new(l.labels().to_vec());
    for a in 0..n {
        let diag = l
            .get(a, a)
            .ok_or_else(|| AnalyticsError::MissingDiagonal(l.labels()[a].clone()))?;
        if diag == 0.0 {
            return Err(AnalyticsError::ZeroDiagonal(l.labels()[a].clone()));
        }
        for b in 0..n {
            if a == b {
                m.set(a, a, 0.0);
            } else if let Some(lab) = l.get(a, b) {
                m.set(a, b, (diag - lab) / diag);
            }
        }
    }
    Ok(InterferenceMatrix(m))
}

/// Row averages over present off-diagonal entries: how little other languages
/// hurt this one.
pub fn robustness(i: &InterferenceMatrix) -> Result<Vec<(String, f64)>, AnalyticsError> {
    let m = i.matrix();
    let mut out = Vec::with_capacity(m.n());
    for r in 0..m.n() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in 0..m.n() {
            if r == c {
                continue;
            }
            if let Some(v) = m.get(r, c) {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(AnalyticsError::EmptyRow(m.labels()[r].clone()));
        }
        out.push((m.labels()[r].clone(), sum / count as f64));
    }
    Ok(out)
}

/// Column averages over present off-diagonal entries: how little this
/// language hurts the others.
pub fn friendliness(i: &InterferenceMatrix) -> Result<Vec<(String, f64)>, AnalyticsError> {
    let m = i.matrix();
    let mut out = Vec::with_capacity(m.n());
    for c in 0..m.n() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..m.n() {
            if r == c {
                continue;
            }
            if let Some(v) = m.get(r, c) {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(AnalyticsError::EmptyColumn(m.labels()[c].clone()));
        }
        out.push((m.labels()[c].clone(), sum / count as f64));
    }
    Ok(out)
}

/// Type-7 quantile (linear interpolation on order statistics) of a sorted
/// sample.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// IQR outlier rule: flag codes strictly outside
/// `[Q1 - 1.5*IQR, Q3 + 1.5*IQR]`, quartiles by type-7 interpolation.
pub fn iqr_outliers(
    metric: &str,
    values: &[(String, f64)],
) -> Result<OutlierReport, AnalyticsError> {
    if values.len() < 4 {
        return Err(AnalyticsError::TooFewValues(values.len()));
    }
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = quantile_type7(&sorted, 0.25);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower = q1 - 1.5 * iqr;
    let upper = q3 + 1.5 * iqr;
    let outliers = values
        .iter()
        .filter(|(_, v)| *v < lower || *v > upper)
        .map(|(code, _)| code.clone())
        .collect();
    Ok(OutlierReport {
        metric: metric.to_string(),
        q1,
        q3,
        iqr,
        lower,
        upper,
        outliers,
    })
}

/// Average interference inside each pair of groups, excluding the structural
/// diagonal zeros. Groups smaller than `min_group_size` are dropped; per-cell
/// entry counts are reported alongside the means.
pub fn aggregate_by_group(
    i: &InterferenceMatrix,
    grouping: &[(String, Vec<String>)],
    min_group_size: usize,
) -> Result<GroupMatrix, AnalyticsError> {
    let m = i.matrix();
    let kept: Vec<(String, Vec<usize>)> = grouping
        .iter()
        .filter(|(_, codes)| codes.len() >= min_group_size)
        .map(|(label, codes)| {
            let idx: Vec<usize> = codes.iter().filter_map(|c| m.index_of(c)).collect();
            (label.clone(), idx)
        })
        .filter(|(_, idx)| idx.len() >= min_group_size)
        .collect();
    if kept.is_empty() {
        return Err(AnalyticsError::NoGroups(min_group_size));
    }
    let g = kept.len();
    let mut matrix = LabeledMatrix::new(kept.iter().map(|(l, _)| l.clone()).collect());
    let mut counts = vec![0usize; g * g];
    for (gr, (_, rows)) in kept.iter().enumerate() {
        for (gc, (_, cols)) in kept.iter().enumerate() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &a in rows {
                for &b in cols {
                    if a == b {
                        continue;
                    }
                    if let Some(v) = m.get(a, b) {
                        sum += v;
                        count += 1;
                    }
                }
            }
            counts[gr * g + gc] = count;
            if count > 0 {
                matrix.set(gr, gc, sum / count as f64);
            }
        }
    }
    Ok(GroupMatrix { matrix, counts })
}

/// Mean robustness and friendliness per resource level; `unknown` languages
/// are excluded and empty levels omitted.
pub fn resource_stats(
    i: &InterferenceMatrix,
    registry: &Registry,
) -> Result<Vec<ResourceStat>, AnalyticsError> {
    let rob: BTreeMap<String, f64> = robustness(i)?.into_iter().collect();
    let fri: BTreeMap<String, f64> = friendliness(i)?.into_iter().collect();
    let mut out = Vec::new();
    for level in [ResourceLevel::High, ResourceLevel::Low] {
        let codes: Vec<&str> = registry
            .specs()
            .iter()
            .filter(|s| s.resource_level == level && rob.contains_key(&s.code))
            .map(|s| s.code.as_str())
            .collect();
        if codes.is_empty() {
            continue;
        }
        let mean = |map: &BTreeMap<String, f64>| {
            codes.iter().map(|c| map[*c]).sum::<f64>() / codes.len() as f64
        };
        out.push(ResourceStat {
            level: level.label().to_string(),
            n_languages: codes.len(),
            mean_robustness: mean(&rob),
            mean_friendliness: mean(&fri),
        });
    }
    Ok(out)
}

/// Directional imbalance `D(A,B) = I(A,B) - I(B,A)`, exactly antisymmetric,
/// plus the pair with the largest magnitude.
pub fn asymmetry(i: &InterferenceMatrix) -> (LabeledMatrix, Option<AsymmetrySummary>) {
    let m = i.matrix();
    let n = m.n();
    let mut delta = LabeledMatrix::new(m.labels().to_vec());
    let mut best: Option<AsymmetrySummary> = None;
    for a in 0..n {
        delta.set(a, a, 0.0);
        for b in (a + 1)..n {
            let (Some(ab), Some(ba)) = (m.get(a, b), m.get(b, a)) else {
                continue;
            };
            let d = ab - ba;
            delta.set(a, b, d);
            delta.set(b, a, -d);
            if best.as_ref().map_or(true, |s| d.abs() > s.delta.abs()) {
                best = Some(AsymmetrySummary {
                    row: m.labels()[a].clone(),
                    column: m.labels()[b].clone(),
                    delta: d,
                });
            }
        }
    }
    (delta, best)
}

/// Per-language mean loss across all models covering it (row means of L,
/// diagonal included), with IQR outlier screening of those means. High-loss
/// outliers are languages the sweep failed to fit.
pub fn convergence_profile(
    loss: &LossMatrix,
) -> Result<(Vec<(String, f64)>, OutlierReport), AnalyticsError> {
    let m = loss.matrix();
    let mut means = Vec::with_capacity(m.n());
    for r in 0..m.n() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in 0..m.n() {
            if let Some(v) = m.get(r, c) {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(AnalyticsError::EmptyRow(m.labels()[r].clone()));
        }
        means.push((m.labels()[r].clone(), sum / count as f64));
    }
    let report = iqr_outliers("mean row loss", &means)?;
    Ok((means, report))
}
