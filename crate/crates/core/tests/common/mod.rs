#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

/// Writes MNIST-format IDX files under `root/mnist` in which class `c`
/// brightens horizontal stripe `c` of an otherwise noisy image.
pub fn write_synthetic_mnist(root: &Path, n_train: usize, n_test: usize) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for (prefix, n) in [("train", n_train), ("t10k", n_test)] {
        let mut images = vec![0, 0, 8, 3];
        for d in [n as u32, 28, 28] {
            images.extend(d.to_be_bytes());
        }
        let mut labels = vec![0, 0, 8, 1];
        labels.extend((n as u32).to_be_bytes());
        for _ in 0..n {
            let class = (next() % 10) as usize;
            labels.push(class as u8);
            for y in 0..28 {
                for _ in 0..28 {
                    let on = y * 10 / 28 == class;
                    let noise = (next() % 60) as u8;
                    images.push(if on { 190 + noise } else { noise });
                }
            }
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }
}

/// Real datasets: `TREEBP_DATA_DIR`, else `<workspace>/data`, if both datasets are there.
pub fn real_data_root() -> Option<PathBuf> {
    let root = std::env::var_os("TREEBP_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let ok = root.join("mnist/t10k-labels-idx1-ubyte").exists() && root.join("cifar-10-batches-bin/test_batch.bin").exists();
    ok.then_some(root)
}
