//! Download and install the canonical dataset archives.
//!
//! Every archive is checked against its published MD5 before anything is
//! written below the data directory.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use md5::{Digest, Md5};

use super::{DatasetKind, CIFAR_DIR, MNIST_DIR};
use crate::error::{Error, Result};

pub const MNIST_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";
pub const CIFAR_MIRROR: &str = "https://www.cs.toronto.edu/~kriz/";

#[derive(Clone, Copy, Debug)]
pub struct Archive {
    pub file: &'static str,
    pub md5: &'static str,
}

pub const MNIST_ARCHIVES: [Archive; 4] = [
    Archive {
        file: "train-images-idx3-ubyte.gz",
        md5: "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    },
    Archive {
        file: "train-labels-idx1-ubyte.gz",
        md5: "d53e105ee54ea40749a09fcbcd1e9432",
    },
    Archive {
        file: "t10k-images-idx3-ubyte.gz",
        md5: "9fb629c4189551a2d022fa330f9573f3",
    },
    Archive {
        file: "t10k-labels-idx1-ubyte.gz",
        md5: "ec29112dd5afa0611ce80d1b7f02629c",
    },
];

pub const CIFAR_ARCHIVE: Archive = Archive {
    file: "cifar-10-binary.tar.gz",
    md5: "c32a1d4ab5d03f1284b67883e8d87530",
};

/// Where archive bytes come from.
#[derive(Clone, Debug)]
pub enum Source {
    /// Base URL; the archive file name is appended.
    Http(String),
    /// Directory holding previously downloaded archives.
    Local(PathBuf),
}

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn verify(archive: &Archive, bytes: &[u8]) -> Result<()> {
    let got = md5_hex(bytes);
    if got != archive.md5 {
        return Err(Error::Fetch(format!(
            "{}: checksum mismatch (expected md5 {}, got {got})",
            archive.file, archive.md5
        )));
    }
    Ok(())
}

fn obtain(source: &Source, archive: &Archive) -> Result<Vec<u8>> {
    match source {
        Source::Local(dir) => {
            let p = dir.join(archive.file);
            fs::read(&p).map_err(|e| Error::Fetch(format!("{}: {e}", p.display())))
        }
        Source::Http(base) => {
            let url = format!("{}{}", base, archive.file);
            log_line(&format!("downloading {url}"));
            let resp = ureq::get(&url)
                .call()
                .map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
            let mut out = Vec::new();
            resp.into_body()
                .into_reader()
                .read_to_end(&mut out)
                .map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
            Ok(out)
        }
    }
}

fn log_line(msg: &str) {
    eprintln!("fetch: {msg}");
}

/// Verifies a gzipped IDX archive and writes the decompressed file into `dir`.
pub fn install_mnist_archive(archive: &Archive, bytes: &[u8], dir: &Path) -> Result<PathBuf> {
    verify(archive, bytes)?;
    let mut raw = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut raw)
        .map_err(|e| Error::Fetch(format!("{}: gzip: {e}", archive.file)))?;
    fs::create_dir_all(dir)?;
    let out = dir.join(archive.file.trim_end_matches(".gz"));
    fs::write(&out, raw)?;
    Ok(out)
}

/// Verifies the CIFAR-10 tarball and unpacks it below `root`
/// (it carries its own `cifar-10-batches-bin/` directory).
pub fn install_cifar_archive(archive: &Archive, bytes: &[u8], root: &Path) -> Result<PathBuf> {
    verify(archive, bytes)?;
    fs::create_dir_all(root)?;
    tar::Archive::new(GzDecoder::new(bytes))
        .unpack(root)
        .map_err(|e| Error::Fetch(format!("{}: {e}", archive.file)))?;
    Ok(root.join(CIFAR_DIR))
}

/// Fetches one dataset into `root` and returns its directory.
pub fn fetch(kind: DatasetKind, root: &Path, source: Option<&Source>) -> Result<PathBuf> {
    match kind {
        DatasetKind::Mnist => {
            let src = source.cloned().unwrap_or_else(|| Source::Http(MNIST_MIRROR.into()));
            let dir = root.join(MNIST_DIR);
            for a in &MNIST_ARCHIVES {
                let bytes = obtain(&src, a)?;
                install_mnist_archive(a, &bytes, &dir)?;
            }
            Ok(dir)
        }
        DatasetKind::Cifar10 => {
            let src = source.cloned().unwrap_or_else(|| Source::Http(CIFAR_MIRROR.into()));
            let bytes = obtain(&src, &CIFAR_ARCHIVE)?;
            install_cifar_archive(&CIFAR_ARCHIVE, &bytes, root)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::{write::GzEncoder, Compression};
    use std::io::Write;

    fn gz(bytes: &[u8]) -> Vec<u8> {
        let mut e = GzEncoder::new(Vec::new(), Compression::fast());
        e.write_all(bytes).unwrap();
        e.finish().unwrap()
    }

    fn leak(s: String) -> &'static str {
        Box::leak(s.into_boxed_str())
    }

    #[test]
    fn md5_known_vector() {
        assert_eq!(md5_hex(b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(md5_hex(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn mnist_archive_installs_only_when_checksum_matches() {
        let dir = tempfile::tempdir().unwrap();
        let payload = gz(b"idx payload");
        let good = Archive {
            file: "t10k-labels-idx1-ubyte.gz",
            md5: leak(md5_hex(&payload)),
        };
        let out = install_mnist_archive(&good, &payload, dir.path()).unwrap();
        assert_eq!(fs::read(out).unwrap(), b"idx payload");

        let bad = Archive {
            file: "train-labels-idx1-ubyte.gz",
            md5: "00000000000000000000000000000000",
        };
        let err = install_mnist_archive(&bad, &payload, dir.path()).unwrap_err().to_string();
        assert!(err.contains("checksum mismatch"), "{err}");
        assert!(!dir.path().join("train-labels-idx1-ubyte").exists());
    }

    #[test]
    fn cifar_archive_unpacks_batches_dir() {
        let mut builder = tar::Builder::new(Vec::new());
        let data = vec![3u8; 3073];
        let mut header = tar::Header::new_gnu();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        builder
            .append_data(&mut header, "cifar-10-batches-bin/test_batch.bin", &data[..])
            .unwrap();
        let tgz = gz(&builder.into_inner().unwrap());
        let archive = Archive {
            file: "cifar-10-binary.tar.gz",
            md5: leak(md5_hex(&tgz)),
        };
        let root = tempfile::tempdir().unwrap();
        let dir = install_cifar_archive(&archive, &tgz, root.path()).unwrap();
        assert_eq!(fs::read(dir.join("test_batch.bin")).unwrap().len(), 3073);
    }

    #[test]
    fn local_source_reports_missing_archive() {
        let dir = tempfile::tempdir().unwrap();
        let err = fetch(DatasetKind::Mnist, dir.path(), Some(&Source::Local(dir.path().into())))
            .unwrap_err()
            .to_string();
        assert!(err.contains("train-images-idx3-ubyte.gz"), "{err}");
    }
}
