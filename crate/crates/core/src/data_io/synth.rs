//! Synthetic datasets with planted segmentations.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{AsotError, Matrix, Result};

const MAX_REJECTIONS: usize = 10_000;
/// Prototypes are accepted only if all pairwise cosines stay below this.
const MAX_PROTOTYPE_COSINE: f64 = 0.3;
/// Shortest planted segment, as a fraction of the video length.
const MIN_SEGMENT_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub n_actions: usize,
    pub dim: usize,
    /// Average frames per video; actual lengths vary by up to 25%.
    pub mean_frames: usize,
    pub mean_segments_per_video: usize,
    pub noise_sigma: f64,
    /// Dirichlet concentration of per-video class proportions.
    pub class_imbalance: f64,
    /// Shuffle the action order independently per video.
    pub order_variation: bool,
    /// Allow an action to occur in more than one segment of a video.
    pub repeat_actions: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            n_actions: 6,
            dim: 16,
            mean_frames: 400,
            mean_segments_per_video: 6,
            noise_sigma: 0.1,
            class_imbalance: 0.5,
            order_variation: true,
            repeat_actions: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_videos", self.n_videos),
            ("n_actions", self.n_actions),
            ("dim", self.dim),
            ("mean_frames", self.mean_frames),
            ("mean_segments_per_video", self.mean_segments_per_video),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(AsotError::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(AsotError::invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.class_imbalance > 0.0) || !self.class_imbalance.is_finite() {
            return Err(AsotError::invalid(format!(
                "class_imbalance must be > 0, got {}",
                self.class_imbalance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub videos: Vec<SynthVideo>,
    /// Unit-norm action prototypes, `K x D`.
    pub prototypes: Matrix,
}

fn dirichlet(rng: &mut impl Rng, concentration: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

fn prototypes(rng: &mut impl Rng, k: usize, d: usize) -> Result<Matrix> {
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rejections = 0;
    while accepted.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let ok = accepted
            .iter()
            .all(|a| a.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() <= MAX_PROTOTYPE_COSINE);
        if ok {
            accepted.push(v);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(AsotError::invalid(format!(
                    "could not place {k} prototypes with pairwise cosine <= {MAX_PROTOTYPE_COSINE} in \
                     {d} dimensions; use fewer actions or a larger dimension"
                )));
            }
        }
    }
    Ok(Array2::from_shape_fn((k, d), |(i, j)| accepted[i][j]))
}

/// Inserts `extra` repeats of already present actions at positions where they
/// do not touch a segment of the same action.
fn add_repeats(rng: &mut impl Rng, seq: &mut Vec<usize>, extra: usize) {
    for _ in 0..extra {
        for _attempt in 0..32 {
            let action = seq[rng.random_range(0..seq.len())];
            let pos = rng.random_range(0..=seq.len());
            let left_ok = pos == 0 || seq[pos - 1] != action;
            let right_ok = pos == seq.len() || seq[pos] != action;
            if left_ok && right_ok {
                seq.insert(pos, action);
                break;
            }
        }
    }
}

/// Splits `n` frames over segments with the given weights; every segment gets
/// at least `min_len` frames.
fn segment_lengths(weights: &[f64], n: usize, min_len: usize) -> Vec<usize> {
    let s = weights.len();
    let min_len = min_len.min(n / s).max(1);
    let spare = n.saturating_sub(min_len * s);
    let total: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| min_len + (w / total * spare as f64).floor() as usize)
        .collect();
    let assigned: usize = lens.iter().sum();
    let longest = (0..s).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap_or(0);
    lens[longest] += n - assigned;
    lens
}

/// Draws one planted label sequence of length `n`.
fn planted_labels(
    rng: &mut impl Rng,
    base_order: &[usize],
    n: usize,
    n_segments: usize,
    proportions: &[f64],
    shuffle: bool,
    repeats: bool,
) -> Vec<usize> {
    let k = base_order.len();
    let mut order = base_order.to_vec();
    if shuffle {
        order.shuffle(rng);
    }
    let n_rep = if repeats && n_segments >= 3 { (n_segments / 4).max(1) } else { 0 };
    let n_distinct = (n_segments - n_rep).clamp(1, k);
    // Keep a random subset of the ordering, preserving relative order.
    let mut keep: Vec<usize> = (0..k).collect();
    keep.shuffle(rng);
    keep.truncate(n_distinct);
    keep.sort_unstable();
    let mut seq: Vec<usize> = keep.iter().map(|&i| order[i]).collect();
    add_repeats(rng, &mut seq, n_rep);

    let mut occurrences = vec![0usize; k];
    for &a in &seq {
        occurrences[a] += 1;
    }
    let weights: Vec<f64> = seq.iter().map(|&a| proportions[a] / occurrences[a] as f64).collect();
    let min_len = ((n as f64) * MIN_SEGMENT_FRACTION).ceil() as usize;
    let lens = segment_lengths(&weights, n, min_len);
    seq.iter()
        .zip(lens)
        .flat_map(|(&a, len)| std::iter::repeat_n(a, len))
        .collect()
}

/// Generates videos whose frames are noisy copies of per-action prototypes.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.n_actions;
    let protos = prototypes(&mut rng, k, spec.dim)?;
    let mut base_order: Vec<usize> = (0..k).collect();
    base_order.shuffle(&mut rng);

    let mut videos = Vec::with_capacity(spec.n_videos);
    for _ in 0..spec.n_videos {
        let jitter = spec.mean_frames / 4;
        let n = rng.random_range(spec.mean_frames - jitter..=spec.mean_frames + jitter).max(1);
        let seg_jitter = spec.mean_segments_per_video / 4;
        let n_seg = rng
            .random_range(spec.mean_segments_per_video - seg_jitter..=spec.mean_segments_per_video + seg_jitter)
            .clamp(1, n);
        let proportions = dirichlet(&mut rng, spec.class_imbalance, k);
        let labels = planted_labels(
            &mut rng,
            &base_order,
            n,
            n_seg,
            &proportions,
            spec.order_variation,
            spec.repeat_actions,
        );
        let mut features = Matrix::zeros((n, spec.dim));
        for (mut row, &l) in features.outer_iter_mut().zip(&labels) {
            for (x, &p) in row.iter_mut().zip(protos.row(l)) {
                let z: f64 = rng.sample(StandardNormal);
                *x = p + spec.noise_sigma * z;
            }
        }
        videos.push(SynthVideo { features, labels });
    }
    Ok(SynthDataset { videos, prototypes: protos })
}

/// A single frame-to-action score matrix with planted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockSpec {
    pub n_frames: usize,
    pub n_actions: usize,
    pub n_segments: usize,
    pub noise_sigma: f64,
    /// Dirichlet concentration of segment lengths; `None` gives equal lengths.
    pub concentration: Option<f64>,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self { n_frames: 500, n_actions: 6, n_segments: 8, noise_sigma: 0.3, concentration: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInstance {
    pub scores: Matrix,
    pub labels: Vec<usize>,
}

fn block_labels(rng: &mut impl Rng, spec: &BlockSpec) -> Vec<usize> {
    let k = spec.n_actions;
    let s = spec.n_segments.clamp(1, spec.n_frames);
    let mut seq = Vec::with_capacity(s);
    for _ in 0..s {
        let a = loop {
            let a = rng.random_range(0..k);
            if k == 1 || seq.last() != Some(&a) {
                break a;
            }
        };
        seq.push(a);
    }
    let weights = match spec.concentration {
        Some(c) => dirichlet(rng, c, s),
        None => vec![1.0; s],
    };
    let min_len = ((spec.n_frames as f64) * MIN_SEGMENT_FRACTION).ceil() as usize;
    let lens = segment_lengths(&weights, spec.n_frames, min_len);
    seq.iter().zip(lens).flat_map(|(&a, l)| std::iter::repeat_n(a, l)).collect()
}

/// Noisy block cost: planted entries have base cost 0.5, all others 1.0, plus
/// Gaussian noise, clamped to `[0, 2]`.
pub fn block_cost_instance(spec: &BlockSpec) -> Result<BlockInstance> {
    if spec.n_frames == 0 || spec.n_actions == 0 || spec.n_segments == 0 {
        return Err(AsotError::invalid("block instance needs frames, actions and segments"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = block_labels(&mut rng, spec);
    let mut scores = Matrix::zeros((spec.n_frames, spec.n_actions));
    for (mut row, &l) in scores.outer_iter_mut().zip(&labels) {
        for (j, c) in row.iter_mut().enumerate() {
            let base = if j == l { 0.5 } else { 1.0 };
            let z: f64 = rng.sample(StandardNormal);
            *c = (base + spec.noise_sigma * z).clamp(0.0, 2.0);
        }
    }
    Ok(BlockInstance { scores, labels })
}

/// Noisy classifier logits: the planted action gets +2, noise is Gaussian.
pub fn logit_instance(spec: &BlockSpec) -> Result<BlockInstance> {
    if spec.n_frames == 0 || spec.n_actions == 0 || spec.n_segments == 0 {
        return Err(AsotError::invalid("logit instance needs frames, actions and segments"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = block_labels(&mut rng, spec);
    let mut scores = Matrix::zeros((spec.n_frames, spec.n_actions));
    for (mut row, &l) in scores.outer_iter_mut().zip(&labels) {
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = if j == l { 2.0 } else { 0.0 } + spec.noise_sigma * z;
        }
    }
    Ok(BlockInstance { scores, labels })
}
