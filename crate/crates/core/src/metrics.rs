//! Unsupervised segmentation metrics.
//!
//! Predicted clusters carry arbitrary ids, so every evaluation unit (one video,
//! or the whole dataset) first matches clusters to ground-truth actions with
//! the Hungarian algorithm on the negated cluster/action overlap counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::segmentation::{Segment, Segmentation};
use crate::{AsotError, Result};

/// Label assigned to frames whose cluster has no matched action.
const UNMATCHED: usize = usize::MAX;

/// Minimum-cost assignment for a `rows x cols` cost matrix given row-major.
///
/// Every element of the smaller side is matched. Among optimal assignments
/// the lexicographically smallest one (in row order of the smaller side) is
/// returned. The result maps each row to its column, `None` for rows left
/// unmatched when there are more rows than columns.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<Option<usize>>> {
    if cost.len() != rows * cols {
        return Err(AsotError::invalid(format!(
            "cost has {} entries, expected {rows}x{cols}",
            cost.len()
        )));
    }
    if let Some(i) = cost.iter().position(|v| !v.is_finite()) {
        return Err(AsotError::invalid(format!("non-finite assignment cost at index {i}")));
    }
    if rows == 0 || cols == 0 {
        return Ok(vec![None; rows]);
    }
    if rows <= cols {
        let a = lexicographic_assignment(cost, rows, cols);
        Ok(a.into_iter().map(Some).collect())
    } else {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = cost[i * cols + j];
            }
        }
        let col_to_row = lexicographic_assignment(&t, cols, rows);
        let mut out = vec![None; rows];
        for (j, i) in col_to_row.into_iter().enumerate() {
            out[i] = Some(j);
        }
        Ok(out)
    }
}

/// Sum of the assigned costs.
pub fn assignment_cost(cost: &[f64], cols: usize, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[i * cols + j]))
        .sum()
}

/// Shortest augmenting path Hungarian algorithm with potentials, `n <= m`.
/// Returns the column of every row and the optimal total.
fn min_assignment(cost: &[f64], n: usize, m: usize) -> (Vec<usize>, f64) {
    debug_assert!(n <= m);
    let c = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    (assignment, total)
}

/// Fixes rows one at a time to the smallest column that still admits an
/// optimal completion.
fn lexicographic_assignment(cost: &[f64], n: usize, m: usize) -> Vec<usize> {
    let (first, optimum) = min_assignment(cost, n, m);
    let tol = 1e-9 * (1.0 + optimum.abs());
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    let mut used = vec![false; m];
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for j in 0..m {
            if used[j] {
                continue;
            }
            let base = fixed_cost + cost[i * m + j];
            let rest_cols: Vec<usize> = (0..m).filter(|&c| !used[c] && c != j).collect();
            let rest = if rest_rows.is_empty() {
                0.0
            } else {
                let mut sub = Vec::with_capacity(rest_rows.len() * rest_cols.len());
                for &r in &rest_rows {
                    for &c in &rest_cols {
                        sub.push(cost[r * m + c]);
                    }
                }
                min_assignment(&sub, rest_rows.len(), rest_cols.len()).1
            };
            if base + rest <= optimum + tol {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.unwrap_or(first[i]);
        used[j] = true;
        fixed_cost += cost[i * m + j];
        fixed.push(j);
    }
    fixed
}

/// Which frames pool into one matching problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PerVideo,
    FullDataset,
}

impl std::str::FromStr for EvalMode {
    type Err = AsotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_video" | "per-video" | "per" => Ok(EvalMode::PerVideo),
            "full" | "full_dataset" | "full-dataset" => Ok(EvalMode::FullDataset),
            other => Err(AsotError::invalid(format!("unknown eval mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mof: f64,
    pub f1: f64,
    pub miou: f64,
    /// Predicted cluster id to ground-truth action id.
    pub matching: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: EvalMode,
    /// Pooled result. In per-video mode MoF is frame-weighted over videos while
    /// F1 and mIoU are averaged over videos; `matching` is empty.
    pub aggregate: EvalResult,
    /// One entry per video in per-video mode, empty otherwise.
    pub per_video: Vec<EvalResult>,
}

/// Overlap counts between predicted clusters and ground-truth actions.
#[derive(Debug, Clone)]
struct Contingency {
    n_pred: usize,
    n_gt: usize,
    counts: Vec<u64>,
}

impl Contingency {
    fn build<'a>(pairs: impl Iterator<Item = (&'a [usize], &'a [usize])> + Clone) -> Self {
        let (mut n_pred, mut n_gt) = (0, 0);
        for (p, g) in pairs.clone() {
            n_pred = p.iter().fold(n_pred, |m, &v| m.max(v + 1));
            n_gt = g.iter().fold(n_gt, |m, &v| m.max(v + 1));
        }
        let mut counts = vec![0u64; n_pred * n_gt];
        for (p, g) in pairs {
            for (&a, &b) in p.iter().zip(g) {
                counts[a * n_gt + b] += 1;
            }
        }
        Self { n_pred, n_gt, counts }
    }

    fn at(&self, c: usize, g: usize) -> u64 {
        self.counts[c * self.n_gt + g]
    }

    fn matching(&self) -> BTreeMap<usize, usize> {
        let neg: Vec<f64> = self.counts.iter().map(|&c| -(c as f64)).collect();
        let assign = hungarian(&neg, self.n_pred, self.n_gt).expect("finite contingency costs");
        assign
            .into_iter()
            .enumerate()
            .filter_map(|(c, g)| g.map(|g| (c, g)))
            .collect()
    }
}

fn check_lengths(pred: &[Segmentation], gt: &[Vec<usize>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(AsotError::invalid(format!(
            "{} predicted videos but {} ground-truth videos",
            pred.len(),
            gt.len()
        )));
    }
    for (v, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(AsotError::invalid(format!(
                "video {v}: prediction has {} frames, ground truth has {}",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Segment-level hit counts used by the unsupervised F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct SegmentHits {
    gt_hit: usize,
    gt_total: usize,
    pred_hit: usize,
    pred_total: usize,
}

impl SegmentHits {
    fn add(&mut self, other: SegmentHits) {
        self.gt_hit += other.gt_hit;
        self.gt_total += other.gt_total;
        self.pred_hit += other.pred_hit;
        self.pred_total += other.pred_total;
    }

    fn f1(&self) -> f64 {
        let recall = ratio(self.gt_hit, self.gt_total);
        let precision = ratio(self.pred_hit, self.pred_total);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// A segment of `reference` is a hit when more than half of its frames carry
/// the same label in `other`.
fn majority_hits(reference: &[Segment], labels_ref: &[usize], other: &[usize]) -> usize {
    reference
        .iter()
        .filter(|s| {
            let correct = (s.start..s.end()).filter(|&i| other[i] == labels_ref[i]).count();
            2 * correct > s.len
        })
        .count()
}

fn segment_hits(pred: &Segmentation, gt: &Segmentation) -> SegmentHits {
    SegmentHits {
        gt_hit: majority_hits(gt.segments(), gt.labels(), pred.labels()),
        gt_total: gt.segments().len(),
        pred_hit: majority_hits(pred.segments(), pred.labels(), gt.labels()),
        pred_total: pred.segments().len(),
    }
}

/// Segment-level F1 between two equally long segmentations in a shared label
/// space. A ground-truth segment counts towards recall when over half its
/// frames are predicted correctly; a predicted segment counts towards
/// precision when over half its frames agree with the ground truth.
pub fn f1_segment(pred: &Segmentation, gt: &Segmentation) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(AsotError::invalid(format!(
            "segmentations differ in length: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(segment_hits(pred, gt).f1())
}

struct UnitScores {
    result: EvalResult,
    correct: u64,
    frames: u64,
}

fn evaluate_unit(pred: &[Segmentation], gt: &[Vec<usize>]) -> UnitScores {
    let pairs = pred.iter().zip(gt).map(|(p, g)| (p.labels(), g.as_slice()));
    let table = Contingency::build(pairs);
    let matching = table.matching();

    let frames: u64 = gt.iter().map(|g| g.len() as u64).sum();
    let correct: u64 = matching.iter().map(|(&c, &g)| table.at(c, g)).sum();

    let mut pred_sizes = vec![0u64; table.n_pred];
    let mut gt_sizes = vec![0u64; table.n_gt];
    for c in 0..table.n_pred {
        for g in 0..table.n_gt {
            pred_sizes[c] += table.at(c, g);
            gt_sizes[g] += table.at(c, g);
        }
    }
    let inverse: BTreeMap<usize, usize> = matching.iter().map(|(&c, &g)| (g, c)).collect();
    let mut iou_sum = 0.0;
    let mut present = 0;
    for (g, &size) in gt_sizes.iter().enumerate() {
        if size == 0 {
            continue;
        }
        present += 1;
        if let Some(&c) = inverse.get(&g) {
            let inter = table.at(c, g);
            iou_sum += inter as f64 / (size + pred_sizes[c] - inter) as f64;
        }
    }

    let mut hits = SegmentHits::default();
    for (p, g) in pred.iter().zip(gt) {
        let mapped = p.map_labels(|c| matching.get(&c).copied().unwrap_or(UNMATCHED));
        hits.add(segment_hits(&mapped, &Segmentation::from_labels(g.clone())));
    }

    UnitScores {
        result: EvalResult {
            mof: ratio(correct as usize, frames as usize),
            f1: hits.f1(),
            miou: if present == 0 { 0.0 } else { iou_sum / present as f64 },
            matching,
        },
        correct,
        frames,
    }
}

/// Matches clusters to actions and scores MoF, F1 and mIoU.
pub fn evaluate(pred: &[Segmentation], gt: &[Vec<usize>], mode: EvalMode) -> Result<Evaluation> {
    check_lengths(pred, gt)?;
    match mode {
        EvalMode::FullDataset => Ok(Evaluation {
            mode,
            aggregate: evaluate_unit(pred, gt).result,
            per_video: Vec::new(),
        }),
        EvalMode::PerVideo => {
            let units: Vec<UnitScores> = pred
                .iter()
                .zip(gt)
                .map(|(p, g)| evaluate_unit(std::slice::from_ref(p), std::slice::from_ref(g)))
                .collect();
            let n = units.len().max(1) as f64;
            let correct: u64 = units.iter().map(|u| u.correct).sum();
            let frames: u64 = units.iter().map(|u| u.frames).sum();
            let aggregate = EvalResult {
                mof: ratio(correct as usize, frames as usize),
                f1: units.iter().map(|u| u.result.f1).sum::<f64>() / n,
                miou: units.iter().map(|u| u.result.miou).sum::<f64>() / n,
                matching: BTreeMap::new(),
            };
            Ok(Evaluation { mode, aggregate, per_video: units.into_iter().map(|u| u.result).collect() })
        }
    }
}

/// Levenshtein distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Segmental edit score in `[0, 1]`, higher is better.
pub fn edit_distance(pred: &Segmentation, gt: &Segmentation) -> f64 {
    let a = pred.action_sequence();
    let b = gt.action_sequence();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

fn interval_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end().min(b.end()).saturating_sub(a.start.max(b.start));
    let union = a.end().max(b.end()) - a.start.min(b.start);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Overlap F1: a predicted segment is a true positive when its best IoU with a
/// not yet matched ground-truth segment of the same action exceeds `tau`.
pub fn f1_at_tau(pred: &Segmentation, gt: &Segmentation, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(AsotError::invalid(format!("overlap threshold must lie in (0, 1), got {tau}")));
    }
    let gts = gt.segments();
    let mut taken = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut fp = 0usize;
    for p in pred.segments() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, s)| !taken[*g] && s.action == p.action)
            .map(|(g, s)| (g, interval_iou(p, s)))
            .fold(None, |best: Option<(usize, f64)>, (g, iou)| match best {
                Some((_, b)) if b >= iou => best,
                _ => Some((g, iou)),
            });
        match best {
            Some((g, iou)) if iou > tau => {
                taken[g] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    let fn_ = gts.len() - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Supervised-style scores of one prediction against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentalScores {
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
}

pub fn segmental_scores(pred: &Segmentation, gt: &Segmentation) -> SegmentalScores {
    let f = |tau| f1_at_tau(pred, gt, tau).expect("threshold in range");
    SegmentalScores { edit: edit_distance(pred, gt), f1_10: f(0.10), f1_25: f(0.25), f1_50: f(0.50) }
}
