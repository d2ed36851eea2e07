//! CIFAR-10 and MNIST in their standard binary layouts.
//!
//! Images are kept as raw bytes (≈150 MB for CIFAR-10) and normalized to
//! `[-1, 1]` when an example is materialized.

mod augment;
pub mod fetch;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, flip_horizontal, translate, AugmentPolicy};

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_DIR: &str = "cifar-10-batches-bin";
pub const MNIST_DIR: &str = "mnist";

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Mnist,
}

impl DatasetKind {
    pub fn channels(self) -> usize {
        match self {
            DatasetKind::Cifar10 => 3,
            DatasetKind::Mnist => 1,
        }
    }

    pub fn side(self) -> usize {
        match self {
            DatasetKind::Cifar10 => 32,
            DatasetKind::Mnist => 28,
        }
    }

    pub fn image_len(self) -> usize {
        self.channels() * self.side() * self.side()
    }

    /// Directory below a data root where this dataset lives.
    pub fn dir(self, root: &Path) -> PathBuf {
        match self {
            DatasetKind::Cifar10 => root.join(CIFAR_DIR),
            DatasetKind::Mnist => root.join(MNIST_DIR),
        }
    }
}

/// Maps a pixel byte onto `[-1, 1]`: `byte / 255 · 2 − 1`.
#[inline]
pub fn normalize(byte: u8) -> f32 {
    (byte as f32 / 255.0) * 2.0 - 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `C×H×W`, every value in `[-1, 1]`.
    pub pixels: Tensor<f32>,
    pub label: u8,
}

/// A memory-resident labeled image set stored as raw bytes.
#[derive(Clone, Debug)]
pub struct Dataset {
    kind: DatasetKind,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_raw(kind: DatasetKind, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * kind.image_len() {
            return Err(Error::Invalid(format!(
                "{} labels need {} pixel bytes, got {}",
                labels.len(),
                labels.len() * kind.image_len(),
                pixels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Label(bad as usize));
        }
        Ok(Self { kind, pixels, labels })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let n = self.kind.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        let side = self.kind.side();
        let data = self.raw(i).iter().map(|&b| normalize(b)).collect();
        LabeledImage {
            pixels: Tensor::new(vec![self.kind.channels(), side, side], data).expect("image shape"),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledImage> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// New dataset holding the listed examples, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.kind.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.raw(i));
            labels.push(self.labels[i]);
        }
        Self {
            kind: self.kind,
            pixels,
            labels,
        }
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            kind: self.kind,
            pixels: self.pixels[..n * self.kind.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn class_frequency(&self, class: u8) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.len() as f64
    }
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| dataset_err(path, format!("cannot read: {e}")))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| dataset_err(path, format!("gzip: {e}")))?;
        return Ok(out);
    }
    Ok(bytes)
}

/// Parses one CIFAR-10 binary batch: a sequence of 3073-byte records
/// (label byte, then 1024 R, 1024 G, 1024 B bytes).
pub fn parse_cifar_batch(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(dataset_err(
            path,
            format!(
                "truncated record: length {} is not a multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(dataset_err(path, format!("record {i}: label byte {} > 9", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Dataset::from_raw(DatasetKind::Cifar10, pixels, labels)
}

fn concat(kind: DatasetKind, parts: Vec<Dataset>) -> Dataset {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        pixels.extend(p.pixels);
        labels.extend(p.labels);
    }
    Dataset { kind, pixels, labels }
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut parts = Vec::with_capacity(5);
    for name in CIFAR_TRAIN_FILES {
        let path = dir.join(name);
        parts.push(parse_cifar_batch(&path, &read_file(&path)?)?);
    }
    let test_path = dir.join(CIFAR_TEST_FILE);
    let test = parse_cifar_batch(&test_path, &read_file(&test_path)?)?;
    Ok((concat(DatasetKind::Cifar10, parts), test))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX image file and its label file into a dataset.
pub fn parse_idx_pair(images_path: &Path, images: &[u8], labels_path: &Path, labels: &[u8]) -> Result<Dataset> {
    if images.len() < 16 {
        return Err(dataset_err(images_path, "truncated header"));
    }
    let magic = be_u32(images, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(dataset_err(images_path, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let (n, rows, cols) = (be_u32(images, 4) as usize, be_u32(images, 8) as usize, be_u32(images, 12) as usize);
    if rows != 28 || cols != 28 {
        return Err(dataset_err(images_path, format!("expected 28×28 images, header says {rows}×{cols}")));
    }
    let need = 16 + n * rows * cols;
    if images.len() < need {
        return Err(dataset_err(
            images_path,
            format!("truncated: header claims {n} images ({need} bytes), file has {}", images.len()),
        ));
    }
    if labels.len() < 8 {
        return Err(dataset_err(labels_path, "truncated header"));
    }
    let magic = be_u32(labels, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(dataset_err(labels_path, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let nl = be_u32(labels, 4) as usize;
    if nl != n {
        return Err(dataset_err(labels_path, format!("dimension mismatch: {nl} labels for {n} images")));
    }
    if labels.len() < 8 + n {
        return Err(dataset_err(
            labels_path,
            format!("truncated: header claims {n} labels, file has {}", labels.len() - 8),
        ));
    }
    let lab = labels[8..8 + n].to_vec();
    if let Some(i) = lab.iter().position(|&l| l > 9) {
        return Err(dataset_err(labels_path, format!("label {} > 9 at index {i}", lab[i])));
    }
    Dataset::from_raw(DatasetKind::Mnist, images[16..need].to_vec(), lab)
}

fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return gz;
    }
    plain
}

/// Loads MNIST train/test IDX files (plain or `.gz`) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |prefix: &str| -> Result<Dataset> {
        let ip = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"));
        let lp = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"));
        parse_idx_pair(&ip, &read_file(&ip)?, &lp, &read_file(&lp)?)
    };
    Ok((load("train")?, load("t10k")?))
}

/// Loads a dataset from its conventional directory below `root`.
pub fn load(kind: DatasetKind, root: &Path) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Cifar10 => load_cifar10(&kind.dir(root)),
        DatasetKind::Mnist => load_mnist(&kind.dir(root)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cifar_bytes(n: usize, label: u8, pixel: u8) -> Vec<u8> {
        let mut v = Vec::new();
        for _ in 0..n {
            v.push(label);
            v.extend(std::iter::repeat_n(pixel, 3072));
        }
        v
    }

    fn idx_images(n_header: u32, n_payload: usize) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        v.extend(n_header.to_be_bytes());
        v.extend(28u32.to_be_bytes());
        v.extend(28u32.to_be_bytes());
        v.extend((0..n_payload * 784).map(|i| (i % 256) as u8));
        v
    }

    fn idx_labels(n: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_LABELS_MAGIC.to_be_bytes());
        v.extend(n.to_be_bytes());
        v.extend((0..n).map(|i| (i % 10) as u8));
        v
    }

    #[test]
    fn normalize_endpoints_and_midpoints() {
        assert_eq!(normalize(255), 1.0);
        assert_eq!(normalize(0), -1.0);
        assert!((normalize(51) + 0.6).abs() < 1e-7);
        assert_eq!(normalize(255) - normalize(0), 2.0);
        for b in 0..255u8 {
            assert!(normalize(b) < normalize(b + 1));
        }
    }

    #[test]
    fn cifar_batch_parses_and_normalizes() {
        let p = Path::new("batch.bin");
        let d = parse_cifar_batch(p, &cifar_bytes(10_000, 4, 255)).unwrap();
        assert_eq!(d.len(), 10_000);
        let img = d.get(9_999);
        assert_eq!(img.label, 4);
        assert_eq!(img.pixels.shape(), &[3, 32, 32]);
        assert!(img.pixels.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_channel_major_layout() {
        let mut rec = vec![1u8];
        rec.extend(std::iter::repeat_n(0u8, 1024));
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 1024));
        let d = parse_cifar_batch(Path::new("x"), &rec).unwrap();
        let img = d.get(0);
        assert_eq!(img.pixels.at(&[0, 5, 5]), -1.0);
        assert_eq!(img.pixels.at(&[1, 5, 5]), 1.0);
        assert_eq!(img.pixels.at(&[2, 31, 31]), -1.0);
    }

    #[test]
    fn cifar_truncated_and_bad_label() {
        let mut b = cifar_bytes(2, 1, 0);
        b.pop();
        let err = parse_cifar_batch(Path::new("x"), &b).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let err = parse_cifar_batch(Path::new("x"), &cifar_bytes(1, 10, 0)).unwrap_err().to_string();
        assert!(err.contains("label byte 10"), "{err}");
    }

    #[test]
    fn cifar_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("data_batch_1.bin"), "{err}");
    }

    #[test]
    fn mnist_idx_parsing() {
        let ip = Path::new("i");
        let lp = Path::new("l");
        let d = parse_idx_pair(ip, &idx_images(12, 12), lp, &idx_labels(12)).unwrap();
        assert_eq!(d.len(), 12);
        let img = d.get(0);
        assert_eq!(img.pixels.shape(), &[1, 28, 28]);
        assert_eq!(img.pixels.data()[0], -1.0);
        assert_eq!(d.label(11), 1);

        let err = parse_idx_pair(ip, &idx_images(10, 9), lp, &idx_labels(10)).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let err = parse_idx_pair(ip, &idx_images(10, 10), lp, &idx_labels(9)).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch"), "{err}");

        let mut bad = idx_images(1, 1);
        bad[3] = 0x01;
        let err = parse_idx_pair(ip, &bad, lp, &idx_labels(1)).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn mnist_directory_round_trip_with_gzip() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        for (prefix, n) in [("train", 5u32), ("t10k", 3u32)] {
            fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), idx_images(n, n as usize)).unwrap();
            let mut gz = GzEncoder::new(Vec::new(), Compression::fast());
            gz.write_all(&idx_labels(n)).unwrap();
            fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte.gz")), gz.finish().unwrap()).unwrap();
        }
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (5, 3));
    }

    #[test]
    fn select_and_head_preserve_order() {
        let mut bytes = cifar_bytes(1, 0, 0);
        bytes.extend(cifar_bytes(1, 1, 10));
        bytes.extend(cifar_bytes(1, 2, 20));
        let d = parse_cifar_batch(Path::new("x"), &bytes).unwrap();
        assert_eq!(d.select(&[2, 0]).labels(), &[2, 0]);
        assert_eq!(d.head(2).labels(), &[0, 1]);
        assert!((d.class_frequency(1) - 1.0 / 3.0).abs() < 1e-12);
    }
}
