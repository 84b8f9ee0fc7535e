//! Exploratory statistics over a [`CleanDataset`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CleanDataset, DatasetError, TractKey};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("column `{0}` has zero variance")]
    Degenerate(String),
    #[error("k = {k} exceeds the {available} usable candidates")]
    KTooLarge { k: usize, available: usize },
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Pearson correlation, computed in two passes (means first).
///
/// Constant inputs are an error rather than a silent 0 or NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew(x.len()));
    }
    if is_constant(x) {
        return Err(StatsError::Degenerate("x".into()));
    }
    if is_constant(y) {
        return Err(StatsError::Degenerate("y".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate(if sxx == 0.0 { "x" } else { "y" }.into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Pearson coefficients. `None` marks entries involving a
/// zero-variance column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<Option<f64>>>,
    pub degenerate: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.r[i][j]
    }

    /// CSV with a leading `column` header; undefined entries are written `NA`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["column".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (name, row) in self.names.iter().zip(&self.r) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or("NA".to_string(), |x| x.to_string())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn corr_matrix(data: &CleanDataset, columns: &[String]) -> Result<CorrelationMatrix> {
    if data.nrows() < 2 {
        return Err(StatsError::TooFew(data.nrows()));
    }
    let cols = columns
        .iter()
        .map(|c| data.column(c))
        .collect::<Result<Vec<_>, _>>()?;
    let degenerate: Vec<bool> = cols.iter().map(|c| is_constant(c)).collect();
    let p = cols.len();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
        .filter(|&(i, j)| !degenerate[i] && !degenerate[j])
        .collect();
    let values: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pearson(&cols[i], &cols[j]).ok())
        .collect();
    let mut r = vec![vec![None; p]; p];
    for (i, row) in r.iter_mut().enumerate() {
        if !degenerate[i] {
            row[i] = Some(1.0);
        }
    }
    for (&(i, j), v) in pairs.iter().zip(values) {
        r[i][j] = v;
        r[j][i] = v;
    }
    Ok(CorrelationMatrix {
        names: columns.to_vec(),
        r,
        degenerate: columns
            .iter()
            .zip(&degenerate)
            .filter(|(_, &d)| d)
            .map(|(n, _)| n.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedColumn {
    pub name: String,
    pub r: f64,
}

/// Sorts by |r| descending, ties by name ascending, and keeps the first `k`.
pub fn select_top_k(mut scores: Vec<RankedColumn>, k: usize) -> Result<Vec<RankedColumn>> {
    if k > scores.len() {
        return Err(StatsError::KTooLarge {
            k,
            available: scores.len(),
        });
    }
    scores.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then_with(|| a.name.cmp(&b.name)));
    scores.truncate(k);
    Ok(scores)
}

/// The `k` candidates most correlated (in absolute value) with `target`.
///
/// Zero-variance candidates cannot be ranked and are skipped; asking for more
/// than the remaining candidates is an error.
pub fn top_k_correlated(
    data: &CleanDataset,
    candidates: &[String],
    target: &str,
    k: usize,
) -> Result<Vec<RankedColumn>> {
    if k > candidates.len() {
        return Err(StatsError::KTooLarge {
            k,
            available: candidates.len(),
        });
    }
    let y = data.column(target)?;
    if is_constant(&y) {
        return Err(StatsError::Degenerate(target.to_string()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        match pearson(&data.column(c)?, &y) {
            Ok(r) => scores.push(RankedColumn { name: c.clone(), r }),
            Err(StatsError::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    select_top_k(scores, k)
}

/// Count, mean and population standard deviation of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl GroupSummary {
    pub fn from_values(label: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(StatsError::EmptyGroup(label.to_string()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            label: label.to_string(),
            count: values.len(),
            mean,
            std_dev: var.sqrt(),
        })
    }
}

/// Outcome statistics for rows above vs. at-or-below a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub group_col: String,
    pub outcome: String,
    pub threshold: f64,
    /// `(high, low)`.
    pub group_labels: [String; 2],
    pub counts: [usize; 2],
    pub means: [f64; 2],
    pub std_devs: [f64; 2],
    /// Mean of the high group minus mean of the low group.
    pub mean_difference: f64,
}

/// Partitioned outcome values, `(high, low)`.
pub fn split_by_threshold(group: &[f64], outcome: &[f64], threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for (&g, &o) in group.iter().zip(outcome) {
        // equality belongs to the low group
        if g > threshold {
            high.push(o);
        } else {
            low.push(o);
        }
    }
    (high, low)
}

pub fn threshold_groups(
    data: &CleanDataset,
    group_col: &str,
    threshold: f64,
    outcome: &str,
) -> Result<GroupComparison> {
    let g = data.column(group_col)?;
    let y = data.column(outcome)?;
    let (high, low) = split_by_threshold(&g, &y, threshold);
    let h = GroupSummary::from_values("high", &high)?;
    let l = GroupSummary::from_values("low", &low)?;
    Ok(GroupComparison {
        group_col: group_col.to_string(),
        outcome: outcome.to_string(),
        threshold,
        group_labels: [h.label, l.label],
        counts: [h.count, l.count],
        means: [h.mean, l.mean],
        std_devs: [h.std_dev, l.std_dev],
        mean_difference: h.mean - l.mean,
    })
}

/// Per-label outcome summaries, sorted by label. Rows without a label are
/// left out.
pub fn category_groups(labels: &[Option<String>], outcome: &[f64]) -> Result<Vec<GroupSummary>> {
    if labels.len() != outcome.len() {
        return Err(StatsError::LengthMismatch(labels.len(), outcome.len()));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (label, &v) in labels.iter().zip(outcome) {
        if let Some(l) = label {
            groups.entry(l.as_str()).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|(l, v)| GroupSummary::from_values(l, &v))
        .collect()
}

/// Region label per tract from a state-FIPS → region map.
pub fn region_labels(keys: &[TractKey], state_to_region: &BTreeMap<String, String>) -> Vec<Option<String>> {
    keys.iter()
        .map(|k| state_to_region.get(k.state()).cloned())
        .collect()
}
