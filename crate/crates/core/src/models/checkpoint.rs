//! Binary model snapshots.
//!
//! Layout: magic `RSRK`, format version u16, architecture tag, metadata
//! (epoch, validation SNR, seed, config key-value pairs), the named parameter
//! tensors, and a trailing CRC32 over everything after the magic. All
//! integers and floats are little-endian; strings are u32 length + UTF-8.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::discriminator::{build_discriminator, DiscriminatorModel};
use super::fsrcnn::{build_fsrcnn, FsrcnnConfig, FsrcnnModel};
use super::generator::{build_generator, GeneratorModel};
use super::segmenter::{build_segmenter, SegmenterModel};

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"RSRK";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub val_snr: f64,
    pub seed: u64,
    pub config: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: String,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

fn push_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_string(&mut body, &ckpt.arch);
    body.extend_from_slice(&ckpt.meta.epoch.to_le_bytes());
    body.extend_from_slice(&ckpt.meta.val_snr.to_le_bytes());
    body.extend_from_slice(&ckpt.meta.seed.to_le_bytes());
    body.extend_from_slice(&(ckpt.meta.config.len() as u32).to_le_bytes());
    for (k, v) in &ckpt.meta.config {
        push_string(&mut body, k);
        push_string(&mut body, v);
    }
    body.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.tensors {
        push_string(&mut body, name);
        body.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            body.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = Vec::with_capacity(MAGIC.len() + body.len() + 4);
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&body);
    file.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    std::fs::write(path, file).map_err(crate::error::io_err(path))
}

struct CkptReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> CkptReader<'a> {
    fn truncated(&self, what: &str) -> Error {
        Error::CheckpointFormat {
            path: self.path.to_path_buf(),
            detail: format!("truncated while reading {what}"),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.truncated(what));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::CheckpointFormat {
            path: self.path.to_path_buf(),
            detail: format!("{what} is not valid UTF-8"),
        })
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(crate::error::io_err(path))?;
    let format_err = |detail: String| Error::CheckpointFormat {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("missing RSRK magic".into()));
    }
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(format_err("truncated before version and checksum".into()));
    }

    let mut r = CkptReader {
        bytes: &bytes[MAGIC.len()..],
        pos: 0,
        path,
    };
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let arch = r.string("architecture tag")?;
    let epoch = r.u32("epoch")?;
    let val_snr = r.f64("validation snr")?;
    let seed = r.u64("seed")?;
    let config_len = r.u32("config count")? as usize;
    let mut config = Vec::with_capacity(config_len.min(1024));
    for _ in 0..config_len {
        let k = r.string("config key")?;
        let v = r.string("config value")?;
        config.push((k, v));
    }
    let tensor_count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(tensor_count.min(1024));
    for _ in 0..tensor_count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| {
            format_err(format!("tensor {name} extent overflow"))
        })?, "tensor payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| {
            format_err(format!("tensor {name}: {e}"))
        })?;
        tensors.push((name, tensor));
    }

    if r.remaining() != 4 {
        return Err(format_err(format!(
            "expected a 4-byte trailing checksum, found {} bytes",
            r.remaining()
        )));
    }
    let body = &r.bytes[..r.pos];
    let stored = u32::from_le_bytes(r.bytes[r.pos..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CheckpointChecksum {
            path: path.to_path_buf(),
        });
    }

    Ok(Checkpoint {
        arch,
        meta: CheckpointMeta {
            epoch,
            val_snr,
            seed,
            config,
        },
        tensors,
    })
}

/// The stored CRC32 of a checkpoint file, for provenance records.
pub fn checkpoint_crc32(path: &Path) -> Result<u32> {
    let bytes = std::fs::read(path).map_err(crate::error::io_err(path))?;
    if bytes.len() < MAGIC.len() + 2 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CheckpointFormat {
            path: path.to_path_buf(),
            detail: "not a checkpoint file".into(),
        });
    }
    Ok(u32::from_le_bytes(
        bytes[bytes.len() - 4..].try_into().unwrap(),
    ))
}

fn check_arch(ckpt: &Checkpoint, expected: &str, path: &Path) -> Result<()> {
    if ckpt.arch != expected {
        return Err(Error::CheckpointArch {
            path: path.to_path_buf(),
            found: ckpt.arch.clone(),
            expected: expected.into(),
        });
    }
    Ok(())
}

fn owned_tensors(values: Vec<(String, &Tensor)>) -> Vec<(String, Tensor)> {
    values.into_iter().map(|(n, t)| (n, t.clone())).collect()
}

fn config_usize(ckpt: &Checkpoint, key: &str, path: &Path) -> Result<usize> {
    let raw = ckpt.meta.config_value(key).ok_or_else(|| Error::CheckpointFormat {
        path: path.to_path_buf(),
        detail: format!("missing architecture config key {key}"),
    })?;
    raw.parse().map_err(|_| Error::CheckpointFormat {
        path: path.to_path_buf(),
        detail: format!("config key {key} is not a valid size: {raw}"),
    })
}

impl FsrcnnModel {
    pub const ARCH: &'static str = "fsrcnn";

    /// Snapshot with the architecture config folded into the metadata.
    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        let mut meta = meta;
        meta.config.retain(|(k, _)| !matches!(k.as_str(), "d" | "s" | "m" | "n"));
        for (k, v) in [
            ("d", self.config.d),
            ("s", self.config.s),
            ("m", self.config.m),
            ("n", self.config.n),
        ] {
            meta.config.push((k.into(), v.to_string()));
        }
        Checkpoint {
            arch: Self::ARCH.into(),
            meta,
            tensors: owned_tensors(self.net.named_values()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<FsrcnnModel> {
        check_arch(ckpt, Self::ARCH, path)?;
        let config = FsrcnnConfig {
            d: config_usize(ckpt, "d", path)?,
            s: config_usize(ckpt, "s", path)?,
            m: config_usize(ckpt, "m", path)?,
            n: config_usize(ckpt, "n", path)?,
        };
        let mut model = build_fsrcnn(config, 0)?;
        model.net.load_named(&ckpt.tensors, path)?;
        Ok(model)
    }
}

impl GeneratorModel {
    pub const ARCH: &'static str = "generator";

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            arch: Self::ARCH.into(),
            meta,
            tensors: owned_tensors(self.net.named_values()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<GeneratorModel> {
        check_arch(ckpt, Self::ARCH, path)?;
        let mut model = build_generator(0);
        model.net.load_named(&ckpt.tensors, path)?;
        Ok(model)
    }
}

impl DiscriminatorModel {
    pub const ARCH: &'static str = "discriminator";

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            arch: Self::ARCH.into(),
            meta,
            tensors: owned_tensors(self.net.named_values()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<DiscriminatorModel> {
        check_arch(ckpt, Self::ARCH, path)?;
        let mut model = build_discriminator(0);
        model.net.load_named(&ckpt.tensors, path)?;
        Ok(model)
    }
}

impl SegmenterModel {
    pub const ARCH: &'static str = "segmenter";

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            arch: Self::ARCH.into(),
            meta,
            tensors: owned_tensors(self.net.named_values()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<SegmenterModel> {
        check_arch(ckpt, Self::ARCH, path)?;
        let mut model = build_segmenter(0);
        model.net.load_named(&ckpt.tensors, path)?;
        Ok(model)
    }
}
