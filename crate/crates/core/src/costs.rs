//! Cost construction for the transport problem.
//!
//! The solver consumes one dense `N x K` matrix (the visual / linear cost) and
//! two structural costs that are never materialised: a banded frame-frame
//! cost with entries `1/r` for `1 <= |i - k| <= floor(N r)` and an
//! action-action cost equal to one minus the identity. Only their product
//! with a plan is ever needed, see [`gw_structure_apply`].

use ndarray::{Array2, ArrayView2};

use crate::{AsotError, Matrix, Result};

/// Frame embeddings of a single video, `N x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings(Matrix);

/// Action embeddings (cluster centroids), `K x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEmbeddings(Matrix);

macro_rules! embedding_newtype {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(data: Matrix) -> Result<Self> {
                if data.nrows() == 0 || data.ncols() == 0 {
                    return Err(AsotError::invalid(format!(
                        "{} must be non-empty, got {}x{}",
                        $what,
                        data.nrows(),
                        data.ncols()
                    )));
                }
                if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
                    return Err(AsotError::invalid(format!(
                        "{} has a non-finite entry at ({}, {})",
                        $what, idx.0, idx.1
                    )));
                }
                Ok(Self(data))
            }

            pub fn view(&self) -> ArrayView2<'_, f64> {
                self.0.view()
            }

            pub fn into_inner(self) -> Matrix {
                self.0
            }

            pub fn rows(&self) -> usize {
                self.0.nrows()
            }

            pub fn dim(&self) -> usize {
                self.0.ncols()
            }
        }
    };
}

embedding_newtype!(FrameEmbeddings, "frame embeddings");
embedding_newtype!(ActionEmbeddings, "action embeddings");

/// The full cost description of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSet {
    pub kot_cost: Matrix,
    pub band_radius: f64,
}

impl CostSet {
    pub fn new(kot_cost: Matrix, band_radius: f64) -> Result<Self> {
        validate_cost(kot_cost.view())?;
        if !(0.0..=1.0).contains(&band_radius) {
            return Err(AsotError::invalid(format!(
                "band radius must lie in [0, 1], got {band_radius}"
            )));
        }
        Ok(Self { kot_cost, band_radius })
    }

    pub fn n_frames(&self) -> usize {
        self.kot_cost.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.kot_cost.ncols()
    }

    pub fn band_width(&self) -> usize {
        band_width(self.n_frames(), self.band_radius)
    }
}

/// Checks that a cost matrix is non-empty, finite and nonnegative.
pub fn validate_cost(cost: ArrayView2<'_, f64>) -> Result<()> {
    if cost.nrows() == 0 || cost.ncols() == 0 {
        return Err(AsotError::invalid(format!(
            "cost matrix must be non-empty, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    for ((i, j), &c) in cost.indexed_iter() {
        if !c.is_finite() || c < 0.0 {
            return Err(AsotError::invalid(format!(
                "cost entry ({i}, {j}) = {c} is not a finite nonnegative number"
            )));
        }
    }
    Ok(())
}

/// Number of neighbouring frames on each side covered by the structural cost.
pub fn band_width(n_frames: usize, radius: f64) -> usize {
    if n_frames == 0 {
        return 0;
    }
    let w = (n_frames as f64 * radius).floor();
    (w.max(0.0) as usize).min(n_frames - 1)
}

fn row_norms(m: ArrayView2<'_, f64>, what: &'static str) -> Result<Vec<f64>> {
    m.outer_iter()
        .enumerate()
        .map(|(row, r)| {
            let n = r.dot(&r).sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(AsotError::ZeroNorm { what, row })
            }
        })
        .collect()
}

/// Cosine cost `1 - <x_i, a_j> / (|x_i| |a_j|)`, entries in `[0, 2]`.
pub fn build_kot_cost(frames: &FrameEmbeddings, actions: &ActionEmbeddings) -> Result<Matrix> {
    if frames.dim() != actions.dim() {
        return Err(AsotError::invalid(format!(
            "frame dim {} does not match action dim {}",
            frames.dim(),
            actions.dim()
        )));
    }
    let x_norm = row_norms(frames.view(), "frame embeddings")?;
    let a_norm = row_norms(actions.view(), "action embeddings")?;
    let mut cost = frames.view().dot(&actions.view().t());
    for ((i, j), c) in cost.indexed_iter_mut() {
        let cos = (*c / (x_norm[i] * a_norm[j])).clamp(-1.0, 1.0);
        *c = 1.0 - cos;
    }
    Ok(cost)
}

/// Adds `rho * |i/N - j/K|` (0-based indices) to every entry of `cost`.
pub fn add_temporal_prior(cost: ArrayView2<'_, f64>, rho: f64) -> Result<Matrix> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(AsotError::invalid(format!(
            "temporal prior weight must be a finite nonnegative number, got {rho}"
        )));
    }
    let (n, k) = cost.dim();
    let mut out = cost.to_owned();
    if rho == 0.0 {
        return Ok(out);
    }
    for ((i, j), c) in out.indexed_iter_mut() {
        *c += rho * (i as f64 / n as f64 - j as f64 / k as f64).abs();
    }
    Ok(out)
}

/// Computes `C^v T C^a` without materialising either structural cost.
///
/// `(T C^a)_il = rowsum_i(T) - T_il`; the frame-side product is a band sum over
/// rows `1 <= |i - k| <= W` scaled by `1/r`, evaluated with a sliding window
/// so the total cost is `O(N K)`.
pub fn gw_structure_apply(plan: ArrayView2<'_, f64>, radius: f64) -> Matrix {
    let mut out = Array2::zeros(plan.dim());
    gw_structure_apply_into(plan, radius, &mut out);
    out
}

/// In-place form of [`gw_structure_apply`]; `out` must have the plan's shape.
pub fn gw_structure_apply_into(plan: ArrayView2<'_, f64>, radius: f64, out: &mut Matrix) {
    let (n, k) = plan.dim();
    assert_eq!(out.dim(), (n, k), "output shape mismatch");
    let w = band_width(n, radius);
    if w == 0 || k == 1 {
        out.fill(0.0);
        return;
    }
    let plan = plan.as_standard_layout();
    let t = plan.as_slice().expect("standard layout");
    if out.as_slice().is_none() {
        *out = out.as_standard_layout().into_owned();
    }
    let o = out.as_slice_mut().expect("standard layout");
    let scale = 1.0 / radius;
    let row = |r: usize| &t[r * k..(r + 1) * k];
    let row_sums: Vec<f64> = t.chunks_exact(k).map(|r| r.iter().sum()).collect();

    // Window over rows [i - w, i + w], clipped to [0, n).
    let mut win_cols = vec![0.0; k];
    let mut win_rows = 0.0;
    for r in 0..=w.min(n - 1) {
        for (acc, &v) in win_cols.iter_mut().zip(row(r)) {
            *acc += v;
        }
        win_rows += row_sums[r];
    }

    for (i, out_row) in o.chunks_exact_mut(k).enumerate() {
        let band_rows = win_rows - row_sums[i];
        for ((o, &own), &win) in out_row.iter_mut().zip(row(i)).zip(&win_cols) {
            *o = scale * (band_rows - (win - own));
        }
        // Slide: row i + w + 1 enters, row i - w leaves.
        let enter = i + w + 1;
        if enter < n {
            for (acc, &v) in win_cols.iter_mut().zip(row(enter)) {
                *acc += v;
            }
            win_rows += row_sums[enter];
        }
        if i >= w {
            let leave = i - w;
            for (acc, &v) in win_cols.iter_mut().zip(row(leave)) {
                *acc -= v;
            }
            win_rows -= row_sums[leave];
        }
    }
}

/// Min-max maps logits to costs in `[0, 2]`: the largest logit costs 0 and the
/// smallest costs 2.
pub fn logits_to_cost(logits: ArrayView2<'_, f64>) -> Result<Matrix> {
    if logits.is_empty() {
        return Err(AsotError::invalid("logit matrix is empty"));
    }
    if let Some(((i, j), _)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(AsotError::invalid(format!("non-finite logit at ({i}, {j})")));
    }
    let (lo, hi) = logits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Err(AsotError::Degenerate(format!(
            "constant logits ({lo}); the cost matrix would be identically zero"
        )));
    }
    let span = hi - lo;
    Ok(logits.mapv(|v| 2.0 * (1.0 - (v - lo) / span)))
}
