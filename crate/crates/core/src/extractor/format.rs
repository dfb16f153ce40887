//! UAXM model files.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic        4 bytes  "UAXM"
//! version      u32      1
//! arch         u8       0 = tiny_cnn, 1 = mlp
//! height       u32
//! width        u32
//! channels     u32
//! embed_dim    u32
//! class_count  u32
//! hidden_len   u32, then hidden_len × u32
//! has_meta     u8; when 1:
//!   fingerprint  32 bytes
//!   epochs       u32
//!   accuracy     f64
//!   rng_seed     u64
//! weight_count u32, then per weight in name order:
//!   name_len u32, name bytes (UTF-8)
//!   rank u32, rank × u32 dims
//!   numel × f64 data
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Arch, ExtractorModel, ExtractorSpec, InputShape, ModelError, TrainMeta};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"UAXM";
pub const FORMAT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

fn read_err(e: io::Error) -> ModelError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ModelError::Truncated
    } else {
        ModelError::Corrupt(e.to_string())
    }
}

fn write_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Corrupt(format!("value {v} exceeds u32")))?;
    out.write_u32::<LE>(v).expect("write to Vec");
    Ok(())
}

/// Serializes a model to bytes.
pub fn write_model(model: &ExtractorModel) -> Result<Vec<u8>, ModelError> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(16 + model.parameter_count() * 8);
    out.write_all(&MAGIC).expect("write to Vec");
    out.write_u32::<LE>(FORMAT_VERSION).expect("write to Vec");
    out.write_u8(match spec.arch {
        Arch::TinyCnn => 0,
        Arch::Mlp => 1,
    })
    .expect("write to Vec");
    for v in [
        spec.input.height,
        spec.input.width,
        spec.input.channels,
        spec.embedding_dim,
        spec.class_count,
        spec.hidden.len(),
    ] {
        write_u32(&mut out, v)?;
    }
    for &h in &spec.hidden {
        write_u32(&mut out, h)?;
    }
    match model.train_meta() {
        Some(meta) => {
            out.write_u8(1).expect("write to Vec");
            out.write_all(&meta.dataset_fingerprint).expect("write to Vec");
            out.write_u32::<LE>(meta.epochs).expect("write to Vec");
            out.write_f64::<LE>(meta.final_train_accuracy).expect("write to Vec");
            out.write_u64::<LE>(meta.rng_seed).expect("write to Vec");
        }
        None => out.write_u8(0).expect("write to Vec"),
    }
    write_u32(&mut out, model.weights().len())?;
    for (name, t) in model.weights() {
        write_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes()).expect("write to Vec");
        write_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            write_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.write_f64::<LE>(v).expect("write to Vec");
        }
    }
    Ok(out)
}

fn read_len(r: &mut Cursor<&[u8]>) -> Result<usize, ModelError> {
    Ok(r.read_u32::<LE>().map_err(read_err)? as usize)
}

/// Parses a model from bytes.
pub fn read_model(bytes: &[u8]) -> Result<ExtractorModel, ModelError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(read_err)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let version = r.read_u32::<LE>().map_err(read_err)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let arch = match r.read_u8().map_err(read_err)? {
        0 => Arch::TinyCnn,
        1 => Arch::Mlp,
        other => return Err(ModelError::Corrupt(format!("unknown arch code {other}"))),
    };
    let input = InputShape {
        height: read_len(&mut r)?,
        width: read_len(&mut r)?,
        channels: read_len(&mut r)?,
    };
    let embedding_dim = read_len(&mut r)?;
    let class_count = read_len(&mut r)?;
    let hidden_len = read_len(&mut r)?;
    if hidden_len > 16 {
        return Err(ModelError::Corrupt(format!("implausible hidden layer count {hidden_len}")));
    }
    let hidden = (0..hidden_len).map(|_| read_len(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let train_meta = match r.read_u8().map_err(read_err)? {
        0 => None,
        1 => {
            let mut fingerprint = [0u8; 32];
            r.read_exact(&mut fingerprint).map_err(read_err)?;
            Some(TrainMeta {
                dataset_fingerprint: fingerprint,
                epochs: r.read_u32::<LE>().map_err(read_err)?,
                final_train_accuracy: r.read_f64::<LE>().map_err(read_err)?,
                rng_seed: r.read_u64::<LE>().map_err(read_err)?,
            })
        }
        other => return Err(ModelError::Corrupt(format!("bad metadata flag {other}"))),
    };
    let count = read_len(&mut r)?;
    let mut weights = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_len(&mut r)?;
        if name_len > 256 {
            return Err(ModelError::Corrupt(format!("implausible weight name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(read_err)?;
        let name = String::from_utf8(name).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let rank = r.read_u32::<LE>().map_err(read_err)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(ModelError::Corrupt(format!("weight '{name}' has rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_len(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let remaining = bytes.len() as u64 - r.position();
        let numel = match numel {
            Some(n) if (n as u64).saturating_mul(8) <= remaining => n,
            Some(_) => return Err(ModelError::Truncated),
            None => return Err(ModelError::Corrupt(format!("weight '{name}' shape overflows"))),
        };
        let mut data = vec![0.0; numel];
        r.read_f64_into::<LE>(&mut data).map_err(read_err)?;
        let tensor = Tensor::new(shape, data).map_err(|e| ModelError::Corrupt(format!("weight '{name}': {e}")))?;
        weights.insert(name, Arc::new(tensor));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(ModelError::Corrupt(format!(
            "{} trailing bytes after weights",
            bytes.len() - r.position() as usize
        )));
    }
    let spec = ExtractorSpec {
        arch,
        input,
        embedding_dim,
        hidden,
        class_count,
    };
    ExtractorModel::from_parts(spec, weights, train_meta)
}

pub fn save_model(model: &ExtractorModel, path: &Path) -> Result<(), ModelError> {
    let bytes = write_model(model)?;
    fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ExtractorModel, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_model(&bytes)
}
