use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CompleteConfig, CompleteModel, TensorKind};
use crate::embstore::{read_preamble, ByteReader, MAGIC};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u16 = 1;
/// Kind byte after the version; snapshot files use 0 and 1 for the side.
pub const CHECKPOINT_KIND: u8 = 2;
const FLAG_BN_RUNNING: u8 = 1;

/// Serializes every tensor of `model` as `f32`, BN running statistics flagged.
/// Optimizer moments are not stored.
pub fn encode_checkpoint(model: &CompleteModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(CHECKPOINT_KIND);
    let cfg = model.config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        let name_len =
            u16::try_from(t.name.len()).map_err(|_| Error::config("tensor name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(if t.kind == TensorKind::BnRunning { FLAG_BN_RUNNING } else { 0 });
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &CompleteModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CompleteModel> {
    let mut r = ByteReader::new(bytes);
    let kind = read_preamble(&mut r, CHECKPOINT_VERSION)?;
    if kind != CHECKPOINT_KIND {
        return Err(Error::format(6, format!("kind {kind} is not a checkpoint")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_at = r.offset();
    let cfg = std::str::from_utf8(r.take(cfg_len, "config")?)
        .map_err(|_| Error::format(cfg_at, "config is not UTF-8"))?;
    let config = CompleteConfig::from_text(cfg)?;
    let mut model = CompleteModel::new(config, &mut ChaCha8Rng::seed_from_u64(0));
    let expected = model.layout();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::format(
            r.offset() - 4,
            format!("checkpoint holds {count} tensors, model has {}", expected.len()),
        ));
    }
    let mut slots = model.tensors_mut();
    for ((want_name, want_shape), (_, kind, data)) in expected.iter().zip(slots.iter_mut()) {
        let at = r.offset();
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
        if name != want_name {
            return Err(Error::format(at, format!("expected tensor `{want_name}`, found `{name}`")));
        }
        let flags = r.u8("flags")?;
        if (flags & FLAG_BN_RUNNING != 0) != (*kind == TensorKind::BnRunning) {
            return Err(Error::format(at, format!("tensor `{name}` has wrong flags {flags}")));
        }
        let ndims = r.u8("ndims")? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64("dim")? as usize);
        }
        if &shape != want_shape {
            return Err(Error::format(at, format!("tensor `{name}` has shape {shape:?}, expected {want_shape:?}")));
        }
        for v in data.iter_mut() {
            *v = r.f32("payload")? as f64;
        }
    }
    drop(slots);
    r.expect_end()?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<CompleteModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
