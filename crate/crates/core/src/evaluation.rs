//! Scoring detections against ground truth.
//!
//! Predictions are matched to ground-truth points with a minimum-cost
//! assignment on Euclidean distance; assigned pairs farther apart than the
//! gating distance count as one false positive and one false negative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::volume::GridPoint;

/// Minimum-cost assignment for a rectangular cost matrix.
///
/// Returns, for each row, the assigned column. When there are more rows than
/// columns some rows stay unassigned. Uses the shortest-augmenting-path form
/// of the Hungarian method, `O(n^2 m)`.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let mut out = vec![None; rows];
        for (j, i) in solve_assignment(&transposed).into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }

    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // owner[j] = row (1-based) currently holding column j; 0 = free
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Outcome of matching one volume's predictions to its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Sorted by prediction index.
    pub matches: Vec<Match>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub max_distance: f64,
    pub n_pred: usize,
    pub n_gt: usize,
}

impl MatchReport {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    /// Matched flag for each prediction.
    pub fn prediction_correct(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_pred];
        for m in &self.matches {
            out[m.pred] = true;
        }
        out
    }

    /// Matched flag for each ground-truth lesion.
    pub fn gt_detected(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_gt];
        for m in &self.matches {
            out[m.gt] = true;
        }
        out
    }
}

/// Optimal one-to-one matching with distance gating applied after assignment.
pub fn hungarian_match(
    pred: &[GridPoint],
    gt: &[GridPoint],
    max_distance: f64,
) -> Result<MatchReport> {
    if !(max_distance.is_finite() && max_distance > 0.0) {
        return param(format!("max_distance must be positive, got {max_distance}"));
    }
    if let Some(p) = pred
        .iter()
        .chain(gt)
        .find(|p| p.ndim() != pred.first().or(gt.first()).map_or(0, |q| q.ndim()))
    {
        return param(format!("mixed dimensionality at point {p}"));
    }
    let cost: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| gt.iter().map(|g| p.distance(g)).collect())
        .collect();
    let assignment = solve_assignment(&cost);

    let mut matches = Vec::new();
    let mut gt_used = vec![false; gt.len()];
    let mut false_positives = Vec::new();
    for (i, a) in assignment.iter().enumerate() {
        match *a {
            Some(j) if cost[i][j] <= max_distance => {
                gt_used[j] = true;
                matches.push(Match {
                    pred: i,
                    gt: j,
                    distance: cost[i][j],
                });
            }
            _ => false_positives.push(i),
        }
    }
    let false_negatives = (0..gt.len()).filter(|&j| !gt_used[j]).collect();
    Ok(MatchReport {
        matches,
        false_positives,
        false_negatives,
        max_distance,
        n_pred: pred.len(),
        n_gt: gt.len(),
    })
}

/// Inclusive size range; `hi = None` means unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBin {
    pub name: String,
    pub lo: u32,
    pub hi: Option<u32>,
}

impl SizeBin {
    pub fn new(name: impl Into<String>, lo: u32, hi: Option<u32>) -> Self {
        SizeBin {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, size: u32) -> bool {
        size >= self.lo && self.hi.is_none_or(|h| size <= h)
    }
}

/// small 3-10, medium 11-50, large > 50.
pub fn default_size_bins() -> Vec<SizeBin> {
    vec![
        SizeBin::new("small", 3, Some(10)),
        SizeBin::new("medium", 11, Some(50)),
        SizeBin::new("large", 51, None),
    ]
}

fn validate_bins(bins: &[SizeBin]) -> Result<()> {
    for (i, a) in bins.iter().enumerate() {
        if a.hi.is_some_and(|h| h < a.lo) {
            return param(format!("size bin '{}' is empty", a.name));
        }
        for b in &bins[i + 1..] {
            if a.name == b.name {
                return param(format!("duplicate size bin '{}'", a.name));
            }
            let a_hi = a.hi.unwrap_or(u32::MAX);
            let b_hi = b.hi.unwrap_or(u32::MAX);
            if a.lo <= b_hi && b.lo <= a_hi {
                return param(format!("size bins '{}' and '{}' overlap", a.name, b.name));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCount {
    pub detected: usize,
    pub total: usize,
}

/// Aggregate detection scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_size_recall: BTreeMap<String, f64>,
    pub per_size_counts: BTreeMap<String, BinCount>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl DetectionMetrics {
    /// Derives the rates from raw counts (0/0 is taken as 0).
    pub fn from_counts(
        tp: usize,
        fp: usize,
        fn_: usize,
        per_size_counts: BTreeMap<String, BinCount>,
    ) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let per_size_recall = per_size_counts
            .iter()
            .map(|(k, c)| (k.clone(), ratio(c.detected, c.total)))
            .collect();
        DetectionMetrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            per_size_recall,
            per_size_counts,
        }
    }

    /// Sums the counts of several metric sets and recomputes the rates.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a DetectionMetrics>) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut bins: BTreeMap<String, BinCount> = BTreeMap::new();
        for m in parts {
            tp += m.tp;
            fp += m.fp;
            fn_ += m.fn_;
            for (k, c) in &m.per_size_counts {
                let e = bins.entry(k.clone()).or_default();
                e.detected += c.detected;
                e.total += c.total;
            }
        }
        Self::from_counts(tp, fp, fn_, bins)
    }
}

/// Aggregates match reports. `gt_sizes[r][j]` is the size of ground-truth
/// lesion `j` of report `r`; sizes are only required when bins are given.
pub fn detection_metrics(
    reports: &[MatchReport],
    gt_sizes: &[Vec<Option<u32>>],
    size_bins: &[SizeBin],
) -> Result<DetectionMetrics> {
    validate_bins(size_bins)?;
    let mut counts: BTreeMap<String, BinCount> = size_bins
        .iter()
        .map(|b| (b.name.clone(), BinCount::default()))
        .collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (r, report) in reports.iter().enumerate() {
        tp += report.tp();
        fp += report.false_positives.len();
        fn_ += report.false_negatives.len();
        if size_bins.is_empty() {
            continue;
        }
        let sizes = gt_sizes
            .get(r)
            .filter(|s| s.len() == report.n_gt)
            .ok_or_else(|| {
                crate::Error::Parameter(format!("report {r}: ground-truth sizes missing"))
            })?;
        for (j, detected) in report.gt_detected().into_iter().enumerate() {
            let size = sizes[j].ok_or_else(|| {
                crate::Error::Parameter(format!("report {r}: ground truth {j} has no size"))
            })?;
            if let Some(bin) = size_bins.iter().find(|b| b.contains(size)) {
                let c = counts.get_mut(&bin.name).expect("bin registered");
                c.total += 1;
                c.detected += detected as usize;
            }
        }
    }
    Ok(DetectionMetrics::from_counts(tp, fp, fn_, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

impl CalibrationBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Reliability diagram over equal-width bins; only occupied bins are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub total: usize,
}

/// Bins `(confidence, correct)` pairs over `[0, 1]` and computes the expected
/// calibration error `sum (count / total) |confidence - accuracy|`.
pub fn calibration_curve(scored: &[(f64, bool)], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return param("n_bins must be at least 1");
    }
    if let Some((a, _)) = scored.iter().find(|(a, _)| !(0.0..=1.0).contains(a)) {
        return param(format!("confidence {a} outside [0, 1]"));
    }
    let mut sums = vec![(0.0f64, 0usize, 0usize); n_bins];
    for &(a, ok) in scored {
        let b = ((a * n_bins as f64) as usize).min(n_bins - 1);
        sums[b].0 += a;
        sums[b].1 += ok as usize;
        sums[b].2 += 1;
    }
    let total = scored.len();
    let mut ece = 0.0;
    let bins = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.2 > 0)
        .map(|(b, &(conf, hits, count))| {
            let mean_confidence = conf / count as f64;
            let accuracy = hits as f64 / count as f64;
            ece += count as f64 / total as f64 * (mean_confidence - accuracy).abs();
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                mean_confidence,
                accuracy,
                count,
            }
        })
        .collect();
    Ok(CalibrationReport { bins, ece, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionPoint {
    pub fraction: f64,
    pub accuracy: f64,
    pub retained: usize,
}

/// Accuracy over the least-uncertain `10%, 20%, ..., 100%` of detections.
///
/// Entries are ordered by entropy ascending, ties in input order. Fraction
/// `f` keeps the first `ceil(f * n)` entries.
pub fn retention_curve(scored: &[(f64, bool)]) -> Result<Vec<RetentionPoint>> {
    if let Some((e, _)) = scored.iter().find(|(e, _)| !(*e >= 0.0)) {
        return param(format!("entropy {e} is negative or NaN"));
    }
    let n = scored.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut prefix = vec![0usize; n + 1];
    for (k, &i) in order.iter().enumerate() {
        prefix[k + 1] = prefix[k] + scored[i].1 as usize;
    }
    Ok((1..=10)
        .map(|tenth| {
            let retained = (tenth * n).div_ceil(10);
            RetentionPoint {
                fraction: tenth as f64 / 10.0,
                accuracy: prefix[retained] as f64 / retained as f64,
                retained,
            }
        })
        .collect())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
