//! Self-training of a frame encoder from transport pseudo-labels.
//!
//! Each step samples frames from a couple of videos, embeds them with a
//! one-hidden-layer MLP, solves the transport problem against the current
//! action embeddings to get soft pseudo-labels, and takes an Adam step on the
//! cross-entropy between those (fixed) targets and the temperature-scaled
//! frame/action similarities. Gradients are derived by hand.

mod checkpoint;
pub mod kmeans;

use ndarray::{Array1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{add_temporal_prior, build_kot_cost, ActionEmbeddings, FrameEmbeddings};
use crate::segmentation::{decode, to_pseudo_labels, Segmentation};
use crate::solver::{solve, solve_batch, SolverConfig};
use crate::{AsotError, Matrix, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use kmeans::kmeans;

/// Norm floor used by the output l2-normalisation.
pub const NORM_FLOOR: f64 = 1e-12;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_actions: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub frames_per_video: usize,
    pub batch_videos: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Weight of the temporal prior added to the pseudo-labelling cost.
    pub rho: f64,
    pub solver_train: SolverConfig,
    pub solver_infer: SolverConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_actions: 6,
            lr: 1e-3,
            weight_decay: 1e-4,
            temperature: 0.1,
            frames_per_video: 256,
            batch_videos: 2,
            epochs: 30,
            hidden: 128,
            out_dim: 40,
            rho: 0.15,
            solver_train: SolverConfig::pseudo_labelling(),
            solver_infer: SolverConfig::inference(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_actions", self.n_actions),
            ("frames_per_video", self.frames_per_video),
            ("batch_videos", self.batch_videos),
            ("hidden", self.hidden),
            ("out_dim", self.out_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AsotError::invalid(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("lr", self.lr), ("temperature", self.temperature)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(AsotError::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.rho >= 0.0) {
            return Err(AsotError::invalid("weight_decay and rho must be >= 0"));
        }
        self.solver_train.validate()?;
        self.solver_infer.validate()
    }
}

/// Every learnable tensor. Also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Matrix,
    pub b1: Array1<f64>,
    pub w2: Matrix,
    pub b2: Array1<f64>,
    pub actions: Matrix,
}

impl Params {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize, k: usize) -> Self {
        Self {
            w1: Matrix::zeros((d_in, hidden)),
            b1: Array1::zeros(hidden),
            w2: Matrix::zeros((hidden, d_out)),
            b2: Array1::zeros(d_out),
            actions: Matrix::zeros((k, d_out)),
        }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Self::zeros(other.d_in(), other.hidden(), other.d_out(), other.n_actions())
    }

    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.ncols()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.nrows()
    }

    /// Flat views of every tensor, in a fixed order.
    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("contiguous"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("contiguous"),
            self.actions.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("contiguous"),
            self.actions.as_slice_mut().expect("standard layout"),
        ]
    }

    fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub params: Params,
    pub adam_m: Params,
    pub adam_v: Params,
    pub step_count: u64,
}

impl EncoderState {
    /// Uniform fan-in initialisation of both layers; action embeddings start at
    /// zero and are set by [`kmeans_init`] / [`train`].
    pub fn init(d_in: usize, hidden: usize, d_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut params = Params::zeros(d_in, hidden, d_out, k);
        let b1 = 1.0 / (d_in as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        params.w1.mapv_inplace(|_| rng.random_range(-b1..b1));
        params.b1.mapv_inplace(|_| rng.random_range(-b1..b1));
        params.w2.mapv_inplace(|_| rng.random_range(-b2..b2));
        params.b2.mapv_inplace(|_| rng.random_range(-b2..b2));
        Self::from_params(params)
    }

    pub fn from_params(params: Params) -> Self {
        let zeros = Params::zeros_like(&params);
        Self { adam_m: zeros.clone(), adam_v: zeros, params, step_count: 0 }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Matrix,
    pub raw: Matrix,
    pub norms: Array1<f64>,
    /// Row-normalised output embeddings.
    pub embeddings: Matrix,
    /// Rows whose norm fell below [`NORM_FLOOR`].
    pub degenerate_rows: usize,
}

/// `relu(x w1 + b1) w2 + b2`, then row-wise l2 normalisation.
pub fn forward(params: &Params, x: ArrayView2<'_, f64>) -> Result<Forward> {
    if x.ncols() != params.d_in() {
        return Err(AsotError::invalid(format!(
            "input has {} features, encoder expects {}",
            x.ncols(),
            params.d_in()
        )));
    }
    let mut hidden = x.dot(&params.w1) + &params.b1;
    hidden.mapv_inplace(|v| v.max(0.0));
    let raw = hidden.dot(&params.w2) + &params.b2;
    let mut degenerate_rows = 0;
    let norms: Array1<f64> = raw
        .outer_iter()
        .map(|r| {
            let n = r.dot(&r).sqrt();
            if n < NORM_FLOOR {
                degenerate_rows += 1;
                NORM_FLOOR
            } else {
                n
            }
        })
        .collect();
    let embeddings = &raw / &norms.view().insert_axis(Axis(1));
    Ok(Forward { hidden, raw, norms, embeddings, degenerate_rows })
}

/// Row-wise softmax of `emb actions^T / tau`.
pub fn soft_assign(emb: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>, tau: f64) -> Matrix {
    let mut s = emb.dot(&actions.t()) / tau;
    for mut row in s.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    s
}

/// Cross-entropy `-weight * sum_ij pseudo_ij log P_ij` and its gradient with
/// respect to every parameter. `pseudo` is a constant target.
pub fn ce_loss_and_grads(
    params: &Params,
    x: ArrayView2<'_, f64>,
    pseudo: ArrayView2<'_, f64>,
    tau: f64,
    weight: f64,
) -> Result<(f64, Params)> {
    let fwd = forward(params, x)?;
    let p = soft_assign(fwd.embeddings.view(), params.actions.view(), tau);
    if p.dim() != pseudo.dim() {
        return Err(AsotError::invalid(format!(
            "pseudo-labels {:?} do not match assignments {:?}",
            pseudo.dim(),
            p.dim()
        )));
    }
    let loss = -weight
        * Zip::from(&pseudo)
            .and(&p)
            .fold(0.0, |acc, &t, &q| if t > 0.0 { acc + t * q.max(f64::MIN_POSITIVE).ln() } else { acc });

    // d loss / d logits, per row: weight * (rowsum(T) P - T).
    let mut d_logits = p.clone();
    for (mut row, t_row) in d_logits.outer_iter_mut().zip(pseudo.outer_iter()) {
        let mass = t_row.sum();
        Zip::from(&mut row).and(&t_row).for_each(|g, &t| *g = weight * (mass * *g - t));
    }
    let d_logits = d_logits / tau;

    let d_actions = d_logits.t().dot(&fwd.embeddings);
    let d_emb = d_logits.dot(&params.actions);

    // Through e = z / |z|: dz = (de - e <e, de>) / |z|; floored rows are linear.
    let mut d_raw = Matrix::zeros(fwd.raw.dim());
    for i in 0..d_raw.nrows() {
        let e = fwd.embeddings.row(i);
        let de = d_emb.row(i);
        let n = fwd.norms[i];
        let mut out = d_raw.row_mut(i);
        if fwd.raw.row(i).dot(&fwd.raw.row(i)).sqrt() < NORM_FLOOR {
            out.assign(&(&de / n));
        } else {
            let proj = e.dot(&de);
            Zip::from(&mut out).and(&de).and(&e).for_each(|o, &d, &ev| *o = (d - ev * proj) / n);
        }
    }

    let d_w2 = fwd.hidden.t().dot(&d_raw);
    let d_b2 = d_raw.sum_axis(Axis(0));
    let mut d_hidden = d_raw.dot(&params.w2.t());
    Zip::from(&mut d_hidden).and(&fwd.hidden).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let d_w1 = x.t().dot(&d_hidden);
    let d_b1 = d_hidden.sum_axis(Axis(0));
    Ok((loss, Params { w1: d_w1, b1: d_b1, w2: d_w2, b2: d_b2, actions: d_actions }))
}

/// Adam with decoupled weight decay.
pub fn adam_step(state: &mut EncoderState, grads: &Params, lr: f64, weight_decay: f64) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let tensors = state
        .params
        .slices_mut()
        .into_iter()
        .zip(state.adam_m.slices_mut())
        .zip(state.adam_v.slices_mut())
        .zip(grads.slices());
    for (((p, m), v), g) in tensors {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * p[i]);
        }
    }
}

/// One index drawn uniformly from each of `n_samples` equal-width bins over
/// `0..n`. When `n < n_samples` neighbouring bins share frames.
pub fn sample_frames(n: usize, n_samples: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n >= 1, "cannot sample from an empty video");
    (0..n_samples)
        .map(|k| {
            let lo = k * n / n_samples;
            let hi = ((k + 1) * n / n_samples).max(lo + 1);
            rng.random_range(lo..hi)
        })
        .collect()
}

pub fn sample_frames_seeded(n: usize, n_samples: usize, seed: u64) -> Vec<usize> {
    sample_frames(n, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// k-means over pooled embeddings, used as the initial action embeddings.
pub fn kmeans_init(pool: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Matrix> {
    kmeans(pool, k, seed)
}

fn select_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    x.select(Axis(0), idx)
}

/// Pseudo-labels for one set of frames under the current parameters.
pub fn pseudo_labels(
    params: &Params,
    x: ArrayView2<'_, f64>,
    rho: f64,
    solver: &SolverConfig,
) -> Result<Matrix> {
    let cost = training_cost(params, x, rho)?;
    let (plan, _) = solve(cost.view(), solver)?;
    to_pseudo_labels(&plan)
}

fn training_cost(params: &Params, x: ArrayView2<'_, f64>, rho: f64) -> Result<Matrix> {
    let fwd = forward(params, x)?;
    let cost = build_kot_cost(
        &FrameEmbeddings::new(fwd.embeddings)?,
        &ActionEmbeddings::new(params.actions.clone())?,
    )?;
    add_temporal_prior(cost.view(), rho)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Builds the initial state: random encoder, then k-means on embeddings of
/// binned frame samples from every video.
pub fn initial_state(videos: &[Matrix], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<EncoderState> {
    let d_in = videos[0].ncols();
    let mut state = EncoderState::init(d_in, cfg.hidden, cfg.out_dim, cfg.n_actions, rng);
    let mut pool = Vec::new();
    for v in videos {
        let idx = sample_frames(v.nrows(), cfg.frames_per_video, rng);
        let fwd = forward(&state.params, select_rows(v, &idx).view())?;
        pool.push(fwd.embeddings);
    }
    let views: Vec<_> = pool.iter().map(|m| m.view()).collect();
    let pool = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    state.params.actions = kmeans_init(pool.view(), cfg.n_actions, rng.random())?;
    Ok(state)
}

/// One optimisation step on a batch of (already sampled) frame sets.
/// Returns the per-frame loss before the update.
pub fn train_step(state: &mut EncoderState, batch: &[Matrix], cfg: &TrainConfig) -> Result<f64> {
    let costs = batch
        .iter()
        .map(|x| training_cost(&state.params, x.view(), cfg.rho))
        .collect::<Result<Vec<_>>>()?;
    let plans = solve_batch(&costs, &cfg.solver_train)?;
    let frames: usize = batch.iter().map(|x| x.nrows()).sum();
    let weight = 1.0 / frames as f64;
    let mut grads = Params::zeros_like(&state.params);
    let mut loss = 0.0;
    for (x, (plan, _)) in batch.iter().zip(&plans) {
        let pseudo = to_pseudo_labels(plan)?;
        let (l, g) = ce_loss_and_grads(&state.params, x.view(), pseudo.view(), cfg.temperature, weight)?;
        loss += l;
        grads.add_scaled(&g, 1.0);
    }
    adam_step(state, &grads, cfg.lr, cfg.weight_decay);
    if !state.params.is_finite() {
        return Err(AsotError::Numerical {
            iteration: state.step_count as usize,
            detail: "encoder parameters became non-finite".into(),
        });
    }
    Ok(loss)
}

/// Trains from scratch; deterministic given the config seed.
pub fn train(videos: &[Matrix], cfg: &TrainConfig) -> Result<(EncoderState, Vec<EpochLog>)> {
    train_with(videos, cfg, |_, _| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    videos: &[Matrix],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EncoderState, &EpochLog),
) -> Result<(EncoderState, Vec<EpochLog>)> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(AsotError::invalid("training needs at least one video"));
    }
    let d_in = videos[0].ncols();
    if let Some(i) = videos.iter().position(|v| v.ncols() != d_in || v.nrows() == 0) {
        return Err(AsotError::invalid(format!(
            "video {i} has shape {:?}, expected non-empty with {d_in} features",
            videos[i].dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_state(videos, cfg, &mut rng)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_videos) {
            let batch: Vec<Matrix> = chunk
                .iter()
                .map(|&v| {
                    let idx = sample_frames(videos[v].nrows(), cfg.frames_per_video, &mut rng);
                    select_rows(&videos[v], &idx)
                })
                .collect();
            total += train_step(&mut state, &batch, cfg).map_err(|e| match e {
                AsotError::Batch { index, source } => {
                    AsotError::Batch { index: chunk[index], source }
                }
                other => other,
            })?;
            steps += 1;
        }
        let log = EpochLog { epoch, mean_loss: total / steps as f64, steps };
        on_epoch(&state, &log);
        logs.push(log);
    }
    Ok((state, logs))
}

/// Embeds a full video and decodes it with the inference solver settings.
pub fn segment_video(params: &Params, video: ArrayView2<'_, f64>, solver: &SolverConfig) -> Result<Segmentation> {
    let cost = training_cost(params, video, 0.0)?;
    let (plan, _) = solve(cost.view(), solver)?;
    Ok(decode(&plan))
}

/// Cosine cost of a full video against the learned actions (no prior).
pub fn video_cost(params: &Params, video: ArrayView2<'_, f64>) -> Result<Matrix> {
    training_cost(params, video, 0.0)
}

/// Zero-initialised stand-in for shapes in tests and tooling.
pub fn zeros_state(d_in: usize, hidden: usize, d_out: usize, k: usize) -> EncoderState {
    EncoderState::from_params(Params::zeros(d_in, hidden, d_out, k))
}
