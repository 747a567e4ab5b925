//! MNIST ingestion, static binarization, the train/valid/test partition,
//! minibatch order, and half-image views.

mod idx;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::{decode_store, encode_store, CheckpointError, ParamStore};
use crate::numerics::{NoiseKind, RngStream, Tensor};

pub use idx::{encode_idx, idx_magic, parse_idx, parse_idx_raw, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const TRAIN_COUNT: usize = 50_000;
pub const VALID_COUNT: usize = 10_000;
pub const TEST_COUNT: usize = 10_000;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("bad IDX magic {found:#010x} at offset {offset}")]
    BadMagic { offset: usize, found: u32 },
    #[error("IDX data truncated at offset {offset}: {needed} more bytes expected")]
    Truncated { offset: usize, needed: usize },
    #[error("IDX dimension product overflows at offset {offset}")]
    DimensionOverflow { offset: usize },
    #[error("{extra} unexpected bytes after IDX payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("pixel {index} has value {value}, outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("expected {expected} records, found {found}")]
    Count { expected: usize, found: usize },
    #[error("expected an image of length {expected}, got {found}")]
    ImageLength { expected: usize, found: usize },
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("MNIST files not found in {dir}: expected {expected:?} (run scripts/fetch_mnist.sh or set MNIST_DIR)")]
    MissingFiles { dir: String, expected: Vec<String> },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("cache file {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, valid or test)")),
        }
    }
}

/// How grey levels become bits. Applied once, before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarization {
    /// `1[p ≥ 0.5]`
    Threshold,
    /// One Bernoulli(p) draw per pixel from the given seed.
    SampleOnce { seed: u64 },
}

impl fmt::Display for Binarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binarization::Threshold => f.write_str("threshold"),
            Binarization::SampleOnce { seed } => write!(f, "sample_once-{seed}"),
        }
    }
}

/// Binary images of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub split: Split,
    pub binarization: Binarization,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `n` images (all of them if `n` exceeds the count).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&idx),
            ..*self
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        self.images.select_rows(indices)
    }
}

/// Converts `[count, ...]` grey levels into `[count, pixels]` bits.
///
/// For `SampleOnce`, pixel `k` of the flattened array uses draw `k` of the
/// stream, so the same seed always gives the same bits.
pub fn binarize_static(images: &Tensor, mode: Binarization) -> Result<Tensor, DataError> {
    if let Some((index, &value)) = images.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(DataError::PixelRange { index, value });
    }
    let count = images.shape().first().copied().unwrap_or(0);
    let pixels = if count == 0 { 0 } else { images.len() / count };
    let bits = match mode {
        Binarization::Threshold => images.map(|p| if p >= 0.5 { 1.0 } else { 0.0 }),
        Binarization::SampleOnce { seed } => {
            let u = RngStream::new(seed).sample(NoiseKind::Uniform01, &[images.len()]);
            images.clone().reshape(&[images.len()]).expect("flat").zip_map(&u, |p, u| if u < p { 1.0 } else { 0.0 }).expect("same length")
        }
    };
    Ok(bits.reshape(&[count, pixels]).expect("same length"))
}

/// Splits the 60000 official training records into train and validation
/// sets in file order.
pub fn partition(train_raw: &Tensor) -> Result<(Tensor, Tensor), DataError> {
    let n = train_raw.rows();
    if n != TRAIN_COUNT + VALID_COUNT {
        return Err(DataError::Count {
            expected: TRAIN_COUNT + VALID_COUNT,
            found: n,
        });
    }
    let train: Vec<usize> = (0..TRAIN_COUNT).collect();
    let valid: Vec<usize> = (TRAIN_COUNT..n).collect();
    Ok((train_raw.select_rows(&train), train_raw.select_rows(&valid)))
}

/// Index batches for one epoch: a permutation from `epoch_seed`, cut into
/// batches of `batch_size` with the short remainder kept last.
pub fn minibatches(count: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BatchSize);
    }
    let order = RngStream::new(epoch_seed).permutation(count);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Top rows 0..14 and bottom rows 14..28 of a row-major 28×28 image.
pub fn half_split(image: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    if image.len() != IMAGE_DIM {
        return Err(DataError::ImageLength {
            expected: IMAGE_DIM,
            found: image.len(),
        });
    }
    let (top, bottom) = image.split_at(IMAGE_DIM / 2);
    Ok((top.to_vec(), bottom.to_vec()))
}

/// Binarized train, validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Mnist {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Mnist {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// `$MNIST_DIR` if set, else `data/mnist` under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    match std::env::var_os("MNIST_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses an official image file into `[count, 28, 28]` grey levels.
pub fn read_images(path: &Path) -> Result<Tensor, DataError> {
    let t = parse_idx(&read(path)?)?;
    if t.shape().len() != 3 || t.shape()[1..] != [IMAGE_SIDE, IMAGE_SIDE] {
        return Err(DataError::ImageLength {
            expected: IMAGE_DIM,
            found: t.shape()[1..].iter().product(),
        });
    }
    Ok(t)
}

fn cache_path(dir: &Path, mode: Binarization) -> PathBuf {
    dir.join(format!("binarized-{mode}.ckpt"))
}

// Eight pixels per stored value: the cache is ~40 MB instead of ~550 MB.
fn pack_bits(bits: &Tensor) -> Tensor {
    let packed: Vec<f64> = bits
        .data()
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u32, |acc, (k, &b)| acc | ((b as u32) << k)) as f64)
        .collect();
    let n = packed.len();
    Tensor::new(&[n], packed).expect("flat")
}

fn unpack_bits(packed: &Tensor, rows: usize, cols: usize) -> Option<Tensor> {
    let total = rows * cols;
    if packed.len() != total.div_ceil(8) {
        return None;
    }
    let mut out = Vec::with_capacity(total);
    for &v in packed.data() {
        let byte = v as u32;
        for k in 0..8 {
            if out.len() < total {
                out.push(((byte >> k) & 1) as f64);
            }
        }
    }
    Tensor::new(&[rows, cols], out).ok()
}

fn write_cache(path: &Path, data: &Mnist) -> Result<(), DataError> {
    let mut store = ParamStore::new();
    for ds in [&data.train, &data.valid, &data.test] {
        let name = ds.split.name();
        store.set_buffer(name, pack_bits(&ds.images)).expect("buffer names are distinct");
        store
            .set_buffer(&format!("{name}/shape"), Tensor::new(&[2], vec![ds.len() as f64, ds.images.cols() as f64]).expect("two dims"))
            .expect("buffer names are distinct");
    }
    fs::write(path, encode_store(&store)).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_cache(path: &Path, mode: Binarization) -> Result<Mnist, DataError> {
    let bad = |message: String| DataError::Cache {
        path: path.display().to_string(),
        message,
    };
    let store = decode_store(&read(path)?).map_err(|e: CheckpointError| bad(e.to_string()))?;
    let get = |split: Split| -> Result<Dataset, DataError> {
        let name = split.name();
        let shape = store.buffer(&format!("{name}/shape")).ok_or_else(|| bad(format!("missing `{name}/shape`")))?;
        let (rows, cols) = (shape.data()[0] as usize, shape.data()[1] as usize);
        let packed = store.buffer(name).ok_or_else(|| bad(format!("missing `{name}`")))?;
        let images = unpack_bits(packed, rows, cols).ok_or_else(|| bad(format!("`{name}` has the wrong length")))?;
        Ok(Dataset {
            images,
            split,
            binarization: mode,
        })
    };
    Ok(Mnist {
        train: get(Split::Train)?,
        valid: get(Split::Valid)?,
        test: get(Split::Test)?,
    })
}

/// Loads and binarizes MNIST from `dir`, using (and creating) a binarized
/// cache file next to the raw files when `use_cache` is set.
pub fn load_mnist(dir: &Path, mode: Binarization, use_cache: bool) -> Result<Mnist, DataError> {
    let cache = cache_path(dir, mode);
    if use_cache && cache.is_file() {
        match read_cache(&cache, mode) {
            Ok(m) => return Ok(m),
            Err(e) => log::warn!("ignoring unreadable cache: {e}"),
        }
    }
    let files = [dir.join(TRAIN_IMAGES), dir.join(TEST_IMAGES)];
    if files.iter().any(|f| !f.is_file()) {
        return Err(DataError::MissingFiles {
            dir: dir.display().to_string(),
            expected: vec![TRAIN_IMAGES.into(), TEST_IMAGES.into()],
        });
    }
    let train_raw = read_images(&files[0])?;
    let test_raw = read_images(&files[1])?;
    if test_raw.shape()[0] != TEST_COUNT {
        return Err(DataError::Count {
            expected: TEST_COUNT,
            found: test_raw.shape()[0],
        });
    }
    // Binarize the full training file before partitioning so that the bits of
    // a record do not depend on which split it lands in.
    let train_bits = binarize_static(&train_raw, mode)?;
    let test_bits = match mode {
        Binarization::Threshold => binarize_static(&test_raw, mode)?,
        // A separate stream for the test file so its bits are not correlated with train.
        Binarization::SampleOnce { seed } => binarize_static(&test_raw, Binarization::SampleOnce { seed: seed ^ 0x7e57 })?,
    };
    let (train, valid) = partition(&train_bits)?;
    let data = Mnist {
        train: Dataset {
            images: train,
            split: Split::Train,
            binarization: mode,
        },
        valid: Dataset {
            images: valid,
            split: Split::Valid,
            binarization: mode,
        },
        test: Dataset {
            images: test_bits,
            split: Split::Test,
            binarization: mode,
        },
    };
    if use_cache {
        if let Err(e) = write_cache(&cache, &data) {
            log::warn!("could not write cache: {e}");
        }
    }
    Ok(data)
}

/// Small binary dataset built from a few random prototype patterns with
/// independent bit flips; used for smoke runs without MNIST.
pub fn synthetic(count: usize, dim: usize, prototypes: usize, flip: f64, seed: u64) -> Tensor {
    let root = RngStream::new(seed);
    let protos = root
        .split(0)
        .sample(NoiseKind::Uniform01, &[prototypes.max(1), dim])
        .map(|u| if u < 0.5 { 1.0 } else { 0.0 });
    let mut pick = root.split(1);
    let mut noise = root.split(2);
    let mut out = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let p = pick.below(prototypes.max(1));
        for &bit in protos.row(p) {
            let flipped = noise.uniform() < flip;
            out.push(if flipped { 1.0 - bit } else { bit });
        }
    }
    Tensor::new(&[count, dim], out).expect("count × dim")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn threshold_rule() {
        let t = Tensor::full(&[2, 4], 0.4);
        assert_eq!(binarize_static(&t, Binarization::Threshold).unwrap().sum(), 0.0);
        let t = Tensor::full(&[1, 4], 0.5);
        assert_eq!(binarize_static(&t, Binarization::Threshold).unwrap().sum(), 4.0);
        assert!(matches!(
            binarize_static(&Tensor::full(&[1, 1], 1.5), Binarization::Threshold),
            Err(DataError::PixelRange { index: 0, .. })
        ));
    }

    #[test]
    fn sample_once_is_static() {
        let t = Tensor::new(&[2, 3], vec![0.0, 1.0, 0.3, 0.7, 0.0, 1.0]).unwrap();
        for seed in [0, 1, 99] {
            let a = binarize_static(&t, Binarization::SampleOnce { seed }).unwrap();
            let b = binarize_static(&t, Binarization::SampleOnce { seed }).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.data()[0], 0.0);
            assert_eq!(a.data()[1], 1.0);
            assert_eq!(a.data()[4], 0.0);
            assert_eq!(a.data()[5], 1.0);
        }
    }

    #[test]
    fn partition_preserves_order() {
        let raw = Tensor::new(&[60_000, 1], (0..60_000).map(|i| i as f64).collect()).unwrap();
        let (train, valid) = partition(&raw).unwrap();
        assert_eq!((train.rows(), valid.rows()), (50_000, 10_000));
        assert_eq!(train.data()[49_999], 49_999.0);
        assert_eq!(valid.data()[0], 50_000.0);
        assert!(matches!(
            partition(&Tensor::zeros(&[10, 1])),
            Err(DataError::Count { expected: 60_000, found: 10 })
        ));
    }

    #[test]
    fn minibatch_shapes() {
        let b = minibatches(10, 3, 7).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, minibatches(10, 3, 7).unwrap());
        let all: HashSet<usize> = b.into_iter().flatten().collect();
        assert_eq!(all, (0..10).collect());
        assert_eq!(minibatches(3, 0, 0), Err(DataError::BatchSize));
    }

    #[test]
    fn halves() {
        let img: Vec<f64> = (0..IMAGE_DIM).map(|i| (i / IMAGE_SIDE) as f64).collect();
        let (top, bottom) = half_split(&img).unwrap();
        assert_eq!(top.iter().cloned().fold(f64::MIN, f64::max), 13.0);
        assert_eq!([top, bottom].concat(), img);
        let (t, b) = half_split(&[1.0; IMAGE_DIM]).unwrap();
        assert!(t.len() == 392 && b.len() == 392 && t.iter().chain(&b).all(|v| *v == 1.0));
        assert!(half_split(&[0.0; 10]).is_err());
    }

    #[test]
    fn bit_packing_round_trip() {
        let bits = synthetic(7, 13, 3, 0.2, 4);
        assert_eq!(unpack_bits(&pack_bits(&bits), 7, 13).unwrap(), bits);
    }

    #[test]
    fn missing_files_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mnist(dir.path(), Binarization::Threshold, false).unwrap_err();
        assert!(err.to_string().contains(TRAIN_IMAGES));
    }
}
