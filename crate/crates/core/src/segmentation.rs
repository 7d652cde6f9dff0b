//! Hard decoding of transport plans and run-length segment lists.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::solver::TransportPlan;
use crate::{AsotError, Matrix, Result};

/// One maximal run of identical labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub action: usize,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Per-frame labels together with their run-length encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    labels: Vec<usize>,
    segments: Vec<Segment>,
}

impl Segmentation {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let segments = run_length(&labels);
        Self { labels, segments }
    }

    /// Rebuilds per-frame labels from a segment list. Adjacent segments with the
    /// same action are merged.
    pub fn from_segments(segments: &[Segment]) -> Result<Self> {
        let mut labels = Vec::new();
        for s in segments {
            if s.start != labels.len() || s.len == 0 {
                return Err(AsotError::invalid(format!(
                    "segment {s:?} does not continue at frame {}",
                    labels.len()
                )));
            }
            labels.extend(std::iter::repeat_n(s.action, s.len));
        }
        Ok(Self::from_labels(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sequence of segment actions, e.g. for edit distance.
    pub fn action_sequence(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.action).collect()
    }

    /// Applies `f` to every label and re-encodes.
    pub fn map_labels(&self, f: impl Fn(usize) -> usize) -> Self {
        Self::from_labels(self.labels.iter().map(|&l| f(l)).collect())
    }

    pub fn segments_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.segments)?)
    }
}

fn run_length(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.action == l => s.len += 1,
            _ => out.push(Segment { action: l, start: i, len: 1 }),
        }
    }
    out
}

/// Row-wise argmax of a score matrix; ties go to the lowest column.
pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise argmin; ties go to the lowest column.
pub fn argmin_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    argmax_rows(scores.mapv(|v| -v).view())
}

/// Labels every frame with its highest-mass action.
pub fn decode(plan: &TransportPlan) -> Segmentation {
    Segmentation::from_labels(argmax_rows(plan.plan.view()))
}

pub fn segment_count(seg: &Segmentation) -> usize {
    seg.segments().len()
}

/// Soft per-frame targets: each plan row rescaled to sum to one.
///
/// The returned matrix is a fresh copy; training treats it as a constant.
pub fn to_pseudo_labels(plan: &TransportPlan) -> Result<Matrix> {
    let mut out = plan.plan.clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let s = row.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(AsotError::Numerical {
                iteration: 0,
                detail: format!("plan row {i} has mass {s}; cannot form pseudo-labels"),
            });
        }
        row.mapv_inplace(|v| v / s);
    }
    Ok(out)
}
