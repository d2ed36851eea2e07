//! Binary checkpoints.
//!
//! Layout (little endian): the magic `TREEBPCK`, a `u32` version, a config
//! record (`u8` arch, geometry, activation, flags; `u32` dimension count and
//! dimensions), a `u32` tensor count, then each tensor as `u32` rank,
//! `u32` extents and raw `f32` data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{
    Geometry, LeNet5Config, LeNet5Params, Model, ModelSpec, Tree3Config, Tree3Params, TreeLayout,
};
use crate::tensor::Activation;

pub const MAGIC: &[u8; 8] = b"TREEBPCK";
pub const VERSION: u32 = 1;

const FLAG_BIAS: u8 = 1;
const FLAG_PER_CLASS: u8 = 2;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
    }
}

fn encode_spec(spec: &ModelSpec, out: &mut Vec<u8>) {
    let (arch, geometry, act, flags, dims): (u8, u8, u8, u8, Vec<usize>) = match spec {
        ModelSpec::Tree3(c) => (
            0,
            match c.geometry {
                Geometry::Cifar => 0,
                Geometry::Mnist => 1,
            },
            activation_code(c.activation),
            if c.layout == TreeLayout::PerClass { FLAG_PER_CLASS } else { 0 },
            vec![c.k, c.m],
        ),
        ModelSpec::LeNet5(c) => (
            1,
            0,
            activation_code(c.activation),
            if c.bias { FLAG_BIAS } else { 0 },
            vec![c.c1, c.c2, c.f1, c.f2],
        ),
    };
    out.extend([arch, geometry, act, flags]);
    out.extend((dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend((d as u32).to_le_bytes());
    }
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * model.num_params());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    encode_spec(&model.spec(), &mut out);
    let tensors = model.tensors();
    out.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend((t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend((e as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode_spec(r: &mut Reader) -> Result<ModelSpec> {
    let arch = r.u8("architecture")?;
    let geometry = r.u8("geometry")?;
    let activation = match r.u8("activation")? {
        0 => Activation::Relu,
        1 => Activation::Sigmoid,
        x => return Err(Error::Checkpoint(format!("unknown activation code {x}"))),
    };
    let flags = r.u8("flags")?;
    let n = r.u32("dimension count")? as usize;
    if n > 16 {
        return Err(Error::Checkpoint(format!("implausible dimension count {n}")));
    }
    let dims = (0..n).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let spec = match (arch, dims.as_slice()) {
        (0, &[k, m]) => ModelSpec::Tree3(Tree3Config {
            k,
            m,
            activation,
            geometry: match geometry {
                0 => Geometry::Cifar,
                1 => Geometry::Mnist,
                x => return Err(Error::Checkpoint(format!("unknown geometry code {x}"))),
            },
            layout: if flags & FLAG_PER_CLASS != 0 { TreeLayout::PerClass } else { TreeLayout::Joint },
        }),
        (1, &[c1, c2, f1, f2]) => ModelSpec::LeNet5(LeNet5Config {
            activation,
            bias: flags & FLAG_BIAS != 0,
            c1,
            c2,
            f1,
            f2,
        }),
        _ => return Err(Error::Checkpoint(format!("unknown architecture record ({arch}, {dims:?})"))),
    };
    match spec {
        ModelSpec::Tree3(c) => c.validate(),
        ModelSpec::LeNet5(c) => c.validate(),
    }
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(spec)
}

pub fn decode(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let spec = decode_spec(&mut r)?;
    let mut model = match spec {
        ModelSpec::Tree3(config) => Model::Tree3 {
            config,
            params: Tree3Params::zeros(&config),
        },
        ModelSpec::LeNet5(config) => Model::LeNet5 {
            config,
            params: LeNet5Params::zeros(&config),
        },
    };
    let count = r.u32("tensor count")? as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", slots.len())));
    }
    for (i, slot) in slots.iter_mut().enumerate() {
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("tensor extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i} has extents {shape:?}, the architecture needs {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(4 * slot.len(), "tensor data")?;
        for (dst, b) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and insists on a particular architecture.
pub fn load_checkpoint_expecting(path: &Path, spec: &ModelSpec) -> Result<Model<f32>> {
    let model = load_checkpoint(path)?;
    if &model.spec() != spec {
        return Err(Error::ConfigMismatch(format!(
            "{} holds `{}`, expected `{}`",
            path.display(),
            model.spec().describe(),
            spec.describe()
        )));
    }
    Ok(model)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::InitScheme;

    fn tree(k: usize) -> Model<f32> {
        Model::init(&ModelSpec::Tree3(Tree3Config::cifar(k, 2, Activation::Relu)), 3, InitScheme::He).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for spec in [
            ModelSpec::Tree3(Tree3Config::mnist(3, 2, Activation::Sigmoid)),
            ModelSpec::Tree3(Tree3Config::ten_tree(2, 2, Activation::Relu)),
            ModelSpec::LeNet5(LeNet5Config::default()),
            ModelSpec::LeNet5(LeNet5Config {
                bias: false,
                ..Default::default()
            }),
        ] {
            let m = Model::<f32>::init(&spec, 5, InitScheme::He).unwrap();
            let back = decode(&encode(&m)).unwrap();
            assert_eq!(back.spec(), spec);
            for (a, b) in m.tensors().iter().zip(back.tensors()) {
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode(&tree(2));
        for cut in [4, 13, 20, bytes.len() - 1] {
            let e = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, Error::Checkpoint(_)), "{e}");
        }
    }

    #[test]
    fn bad_version_and_magic() {
        let mut bytes = encode(&tree(2));
        bytes[8] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version 9"));
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn config_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k6.ckpt");
        save_checkpoint(&tree(6), &path).unwrap();
        let want = ModelSpec::Tree3(Tree3Config::cifar(15, 2, Activation::Relu));
        assert!(matches!(load_checkpoint_expecting(&path, &want), Err(Error::ConfigMismatch(_))));
        assert!(load_checkpoint_expecting(&path, &tree(6).spec()).is_ok());
    }
}
