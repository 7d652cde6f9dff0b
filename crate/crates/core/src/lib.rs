//! Action segmentation as optimal transport.
//!
//! Frames of a video are coupled to a fixed set of action clusters by solving
//! a fused, unbalanced, entropic Gromov-Wasserstein transport problem. The
//! structural (GW) part penalises temporally adjacent frames that are assigned
//! to different actions, which makes the decoded segmentation contiguous even
//! when the frame-to-action affinities are noisy.
//!
//! The crate is organised bottom-up:
//!
//! - [`costs`]: visual cost, temporal prior, the implicit banded structure
//!   operator and the logits-to-cost conversion.
//! - [`solver`]: objective, gradient and the projected mirror-descent solver.
//! - [`segmentation`]: argmax decoding, run-length segments, pseudo-labels.
//! - [`metrics`]: Hungarian matching, MoF / F1 / mIoU, edit score, F1@tau.
//! - [`learn`]: the self-training pipeline (MLP encoder, Adam, k-means).
//! - [`data_io`]: feature/label file formats and the synthetic generator.
//! - [`bench`]: per-iteration timing used by the `bench` command.
//! - [`plot`]: SVG barcode rendering of segmentations.

pub mod bench;
pub mod costs;
pub mod data_io;
pub mod error;
pub mod learn;
pub mod metrics;
pub mod plot;
pub mod segmentation;
pub mod solver;

pub use error::{AsotError, Result};

/// Dense row-major matrix used throughout the crate.
pub type Matrix = ndarray::Array2<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
