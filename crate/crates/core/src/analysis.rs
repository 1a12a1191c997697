//! Feature analysis: rank correlation of descriptors with difficulty,
//! difficulty-conditional correlations between descriptors, average-linkage
//! clustering, and per-grade descriptor statistics of a trained model.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::descriptors::{FEATURE_NAMES, N_FEATURES};
use crate::error::{Error, Result};
use crate::model::{forward_values, normalize_score, predict_level, ModelParams};
use crate::training::Sample;

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Sum of `t(t-1)/2` over runs of equal keys in an already sorted sequence.
fn tied_pairs<T, F: Fn(&T, &T) -> bool>(sorted: &[T], eq: F) -> u64 {
    let mut total = 0;
    let mut run = 1;
    for i in 1..sorted.len() {
        if eq(&sorted[i - 1], &sorted[i]) {
            run += 1;
        } else {
            total += pairs(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        total += pairs(run);
    }
    total
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn sort_count_inversions(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = vec![0.0; n];
    let mut width = 1;
    let mut inversions = 0u64;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[i] <= v[j] {
                    buf[k] = v[i];
                    i += 1;
                } else {
                    buf[k] = v[j];
                    inversions += (mid - i) as u64;
                    j += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (end - j)].copy_from_slice(&v[j..end]);
            start = end;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    inversions
}

fn distinct(sorted: &[f64]) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Concordant minus discordant pair count, in `O(n log n)`.
fn concordance_balance(x: &[f64], y: &[f64]) -> i64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xy: Vec<(f64, f64)> = idx.iter().map(|&i| (x[i], y[i])).collect();
    let tied_x = tied_pairs(&xy, |a, b| a.0 == b.0);
    let tied_xy = tied_pairs(&xy, |a, b| a == b);
    let mut ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
    let discordant = sort_count_inversions(&mut ys);
    let tied_y = tied_pairs(&ys, |a, b| a == b);
    let untied = pairs(x.len()) + tied_xy - tied_x - tied_y;
    untied as i64 - 2 * discordant as i64
}

/// Stuart's tau-c: `2m(C - D) / (n^2 (m - 1))`, with `m` the smaller number
/// of distinct values of the two variables. Zero when `m < 2`.
pub fn kendall_tau_c(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Analysis("tau-c needs at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in tau-c input".into()));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let m = distinct(&xs).min(distinct(&ys));
    if m < 2 {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let s = concordance_balance(x, y) as f64;
    let m = m as f64;
    Ok(2.0 * m * s / (n * n * (m - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub feature: String,
    pub slot: usize,
    pub tau_c: f64,
}

/// Features ranked by `|tau_c|` with the difficulty level, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,tau_c\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.feature, e.tau_c));
        }
        out
    }
}

/// Transpose rows into one column per feature.
pub fn columns(rows: &[[f64; N_FEATURES]]) -> Vec<Vec<f64>> {
    (0..N_FEATURES)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn feature_difficulty_table(rows: &[[f64; N_FEATURES]], labels: &[u32]) -> Result<CorrelationTable> {
    feature_difficulty_table_named(&columns(rows), labels, &FEATURE_NAMES)
}

pub fn feature_difficulty_table_named(columns: &[Vec<f64>], labels: &[u32], names: &[&str]) -> Result<CorrelationTable> {
    if columns.len() != names.len() {
        return Err(Error::LengthMismatch {
            expected: names.len(),
            actual: columns.len(),
        });
    }
    let y: Vec<f64> = labels.iter().map(|l| *l as f64).collect();
    let mut entries = columns
        .iter()
        .enumerate()
        .map(|(slot, col)| {
            Ok(CorrelationEntry {
                feature: names[slot].to_string(),
                slot,
                tau_c: kendall_tau_c(col, &y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.tau_c
            .abs()
            .total_cmp(&a.tau_c.abs())
            .then(a.slot.cmp(&b.slot))
    });
    Ok(CorrelationTable { entries })
}

/// Pairwise tau-c between columns within each difficulty class, averaged over
/// classes that have at least two samples. Diagonal is 1.
pub fn conditional_tau_matrix(columns: &[Vec<f64>], labels: &[u32]) -> Result<Vec<Vec<f64>>> {
    let d = columns.len();
    for c in columns {
        if c.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                actual: c.len(),
            });
        }
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let classes: Vec<Vec<usize>> = by_class.into_values().filter(|v| v.len() >= 2).collect();
    if classes.is_empty() {
        return Err(Error::Analysis("no difficulty class has two or more samples".into()));
    }
    let mut m = vec![vec![0.0; d]; d];
    for a in 0..d {
        m[a][a] = 1.0;
        for b in a + 1..d {
            let mut sum = 0.0;
            for idx in &classes {
                let xa: Vec<f64> = idx.iter().map(|&i| columns[a][i]).collect();
                let xb: Vec<f64> = idx.iter().map(|&i| columns[b][i]).collect();
                sum += kendall_tau_c(&xa, &xb)?;
            }
            let v = sum / classes.len() as f64;
            m[a][b] = v;
            m[b][a] = v;
        }
    }
    Ok(m)
}

fn check_square_symmetric(m: &[Vec<f64>]) -> Result<()> {
    let n = m.len();
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Analysis(format!("row {i} has length {}, expected {n}", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite entry ({i}, {j})")));
            }
            if (v - m[j][i]).abs() > 1e-12 {
                return Err(Error::Analysis(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `1 - tau` for a symmetric correlation matrix with unit diagonal.
pub fn correlation_to_distance(corr: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_square_symmetric(corr)?;
    for (i, row) in corr.iter().enumerate() {
        if (row[i] - 1.0).abs() > 1e-12 {
            return Err(Error::Analysis(format!("diagonal entry {i} is {}, expected 1", row[i])));
        }
    }
    Ok(corr
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| if i == j { 0.0 } else { 1.0 - v })
                .collect()
        })
        .collect())
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `s` gets id `n + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Leaf indices in left-to-right drawing order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.leaves.len();
        if self.merges.is_empty() {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < n {
                out.push(c);
            } else {
                let m = &self.merges[c - n];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }
}

/// Average-linkage agglomerative clustering (Lance-Williams update). Ties
/// are broken towards the pair with the smallest cluster ids.
pub fn agglomerative_cluster(distances: &[Vec<f64>], leaves: &[&str]) -> Result<Dendrogram> {
    check_square_symmetric(distances)?;
    let n = distances.len();
    if leaves.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: leaves.len(),
        });
    }
    let total = 2 * n.max(1) - 1;
    let mut d = vec![vec![f64::INFINITY; total]; total];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = distances[i][j];
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = d[a][b];
                if best.is_none_or(|(_, _, bv)| v.total_cmp(&bv) == Ordering::Less) {
                    best = Some((a, b, v));
                }
            }
        }
        let (a, b, dist) = best.expect("at least two active clusters");
        let new = n + merges.len();
        size[new] = size[a] + size[b];
        for &c in &active {
            if c != a && c != b {
                let v = (size[a] as f64 * d[c][a] + size[b] as f64 * d[c][b]) / size[new] as f64;
                d[c][new] = v;
                d[new][c] = v;
            }
        }
        active.retain(|&c| c != a && c != b);
        active.push(new);
        merges.push(Merge {
            a,
            b,
            distance: dist,
            size: size[new],
        });
    }
    Ok(Dendrogram {
        leaves: leaves.iter().map(|s| s.to_string()).collect(),
        merges,
    })
}

/// Normalized `[0, 1]` descriptor scores of one feature vector.
pub fn normalized_scores(params: &ModelParams, features: &[f64; N_FEATURES]) -> Result<[f64; N_FEATURES]> {
    let trace = forward_values(params, features)?;
    Ok(trace.scores.map(normalize_score))
}

/// Per-grade mean normalized descriptor scores on a reference (training) set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeStatistics {
    pub k: u32,
    pub means: BTreeMap<u32, [f64; N_FEATURES]>,
    pub counts: BTreeMap<u32, usize>,
}

impl GradeStatistics {
    pub fn compute(params: &ModelParams, samples: &[Sample]) -> Result<Self> {
        let mut sums: BTreeMap<u32, [f64; N_FEATURES]> = BTreeMap::new();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for s in samples {
            let scores = normalized_scores(params, &s.features)?;
            let acc = sums.entry(s.level).or_insert([0.0; N_FEATURES]);
            for (a, v) in acc.iter_mut().zip(scores) {
                *a += v;
            }
            *counts.entry(s.level).or_default() += 1;
        }
        let means = sums
            .into_iter()
            .map(|(g, sum)| {
                let n = counts[&g] as f64;
                (g, sum.map(|v| v / n))
            })
            .collect();
        Ok(GradeStatistics {
            k: params.k,
            means,
            counts,
        })
    }
}

/// Mean normalized score per grade relative to grade 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionProfile {
    pub grades: Vec<u32>,
    pub rows: Vec<[f64; N_FEATURES]>,
}

impl ContributionProfile {
    pub fn row(&self, grade: u32) -> Option<&[f64; N_FEATURES]> {
        self.grades.iter().position(|g| *g == grade).map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("grade");
        for name in FEATURE_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (g, row) in self.grades.iter().zip(&self.rows) {
            out.push_str(&g.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Relative contribution of each descriptor per labeled grade, averaged over
/// `(params, pieces)` splits.
pub fn grade_contributions(splits: &[(&ModelParams, &[Sample])]) -> Result<ContributionProfile> {
    if splits.is_empty() {
        return Err(Error::Analysis("no splits given".into()));
    }
    let mut sums: BTreeMap<u32, ([f64; N_FEATURES], usize)> = BTreeMap::new();
    for (params, samples) in splits {
        let stats = GradeStatistics::compute(params, samples)?;
        let reference = *stats
            .means
            .get(&1)
            .ok_or_else(|| Error::Analysis("grade 1 absent: contribution reference undefined".into()))?;
        for (g, mean) in &stats.means {
            let entry = sums.entry(*g).or_insert(([0.0; N_FEATURES], 0));
            for i in 0..N_FEATURES {
                entry.0[i] += mean[i] - reference[i];
            }
            entry.1 += 1;
        }
    }
    let (grades, rows) = sums
        .into_iter()
        .map(|(g, (sum, n))| {
            let row = if g == 1 {
                [0.0; N_FEATURES]
            } else {
                sum.map(|v| v / n as f64)
            };
            (g, row)
        })
        .unzip();
    Ok(ContributionProfile { grades, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub values: [f64; N_FEATURES],
    /// Grade whose training mean was subtracted.
    pub grade: u32,
    /// True when the piece was unlabeled and its predicted grade was used.
    pub from_prediction: bool,
}

/// Normalized descriptor scores minus the training mean of the piece's grade.
pub fn grade_divergence(
    params: &ModelParams,
    features: &[f64; N_FEATURES],
    label: Option<u32>,
    stats: &GradeStatistics,
) -> Result<Divergence> {
    let trace = forward_values(params, features)?;
    let (grade, from_prediction) = match label {
        Some(l) => (l, false),
        None => (predict_level(params, &trace), true),
    };
    let mean = stats
        .means
        .get(&grade)
        .ok_or_else(|| Error::Analysis(format!("no training statistics for grade {grade}")))?;
    let values = std::array::from_fn(|i| normalize_score(trace.scores[i]) - mean[i]);
    Ok(Divergence {
        values,
        grade,
        from_prediction,
    })
}
