//! On-disk formats and synthetic data.
//!
//! Feature files are a fixed little-endian layout:
//!
//! | offset | size  | field                                  |
//! |--------|-------|----------------------------------------|
//! | 0      | 8     | magic `ASOTFEAT`                       |
//! | 8      | 4     | format version (`u32`, currently 1)    |
//! | 12     | 8     | rows `N` (`u64`)                       |
//! | 20     | 8     | columns `D` (`u64`)                    |
//! | 28     | 4·N·D | row-major `f32` payload                |
//!
//! Label files hold one non-negative integer per line.

mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{AsotError, Matrix, Result};

pub use synth::{
    block_cost_instance, logit_instance, synth_generate, BlockInstance, BlockSpec, SynthDataset, SynthSpec,
    SynthVideo,
};

pub const FEATURE_MAGIC: &[u8; 8] = b"ASOTFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Encodes a matrix in the feature-file layout, narrowing to `f32`.
pub fn encode_features(x: &Matrix) -> Vec<u8> {
    let (n, d) = x.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * n * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for &v in x.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Decodes a feature file held in memory; `path` is only used in errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let truncated = |expected: u64| AsotError::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
        if bytes.len() < 8 && FEATURE_MAGIC.starts_with(bytes) {
            return Err(truncated(HEADER_LEN as u64));
        }
        return Err(AsotError::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(AsotError::UnsupportedVersion { path: path.to_path_buf(), version });
    }
    let (n, d) = (u64_at(12), u64_at(20));
    let expected = n
        .checked_mul(d)
        .and_then(|e| e.checked_mul(4))
        .and_then(|e| e.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| AsotError::invalid(format!("{}: shape {n}x{d} overflows", path.display())))?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if (bytes.len() as u64) > expected {
        return Err(AsotError::invalid(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let mut data = Vec::with_capacity(n * d);
    for (idx, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(AsotError::NonFinite { path: path.to_path_buf(), row: idx / d, col: idx % d });
        }
        data.push(v as f64);
    }
    Ok(Matrix::from_shape_vec((n, d), data).expect("length checked"))
}

/// Writes a feature file, creating parent directories.
pub fn write_features(path: impl AsRef<Path>, x: &Matrix) -> Result<()> {
    write_file(path, encode_features(x))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AsotError::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| AsotError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("'{}' is not a label: {e}", l.trim()),
            })
        })
        .collect()
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AsotError::io(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_file(path, format_labels(labels))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AsotError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| AsotError::io(path, e))?;
    f.write_all(contents.as_ref()).map_err(|e| AsotError::io(path, e))
}

/// One video of an on-disk dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub name: String,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

pub const FEATURES_DIR: &str = "features";
pub const LABELS_DIR: &str = "labels";
pub const PROTOTYPES_FILE: &str = "prototypes.feat";

/// Lists files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AsotError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads `<dir>/features/*.feat` and, when present, `<dir>/labels/<name>.txt`.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let dir = dir.as_ref();
    let feat_dir = dir.join(FEATURES_DIR);
    let files = list_files(&feat_dir, "feat")?;
    if files.is_empty() {
        return Err(AsotError::invalid(format!("no .feat files in {}", feat_dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let name = stem(f);
            let features = read_features(f)?;
            let label_path = dir.join(LABELS_DIR).join(format!("{name}.txt"));
            let labels = if label_path.exists() {
                let l = read_labels(&label_path)?;
                if l.len() != features.nrows() {
                    return Err(AsotError::invalid(format!(
                        "{}: {} labels for {} frames",
                        label_path.display(),
                        l.len(),
                        features.nrows()
                    )));
                }
                Some(l)
            } else {
                None
            };
            Ok(VideoRecord { name, features, labels })
        })
        .collect()
}

/// Writes a dataset in the layout read by [`read_dataset`].
pub fn write_dataset(dir: impl AsRef<Path>, data: &SynthDataset) -> Result<()> {
    let dir = dir.as_ref();
    for sub in [FEATURES_DIR, LABELS_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| AsotError::io(&p, e))?;
    }
    for (i, v) in data.videos.iter().enumerate() {
        let name = format!("video_{i:03}");
        write_features(dir.join(FEATURES_DIR).join(format!("{name}.feat")), &v.features)?;
        write_labels(dir.join(LABELS_DIR).join(format!("{name}.txt")), &v.labels)?;
    }
    write_features(dir.join(PROTOTYPES_FILE), &data.prototypes)
}
