//! Weight file: magic, version, model configuration, then every named
//! parameter with its shape and 32-bit little-endian values.

use std::collections::BTreeMap;

use sonospine_autograd::Tensor;

use super::binary::Reader;
use crate::model::{ShnConfig, ShnWeights};
use crate::Result;

pub const WEIGHTS_MAGIC: [u8; 8] = *b"SONOSHN\0";
pub const WEIGHTS_VERSION: u32 = 1;
const MAX_NAME: usize = 256;

pub fn encode_weights(w: &ShnWeights) -> Vec<u8> {
    let c = &w.config;
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [c.num_stacks, c.feature_channels, c.hourglass_depth, c.num_landmarks, c.input_size, c.heatmap_size] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.batch_norm as u8);
    out.extend_from_slice(&(w.params.len() as u32).to_le_bytes());
    for (name, t) in &w.params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<ShnWeights> {
    let mut r = Reader::new("weights", bytes);
    if r.take(8)? != WEIGHTS_MAGIC {
        return r.fail("bad magic");
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let batch_norm = match r.u8()? {
        0 => false,
        1 => true,
        other => return r.fail(format!("bad normalization flag {other}")),
    };
    let config = ShnConfig {
        num_stacks: dims[0],
        feature_channels: dims[1],
        hourglass_depth: dims[2],
        num_landmarks: dims[3],
        input_size: dims[4],
        heatmap_size: dims[5],
        batch_norm,
    };
    let count = r.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        if len == 0 || len > MAX_NAME {
            return r.fail(format!("parameter name length {len}"));
        }
        let Ok(name) = std::str::from_utf8(r.take(len)?) else {
            return r.fail("parameter name is not UTF-8");
        };
        let name = name.to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return r.fail(format!("{name}: rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let e = r.u32()? as usize;
            numel = numel.saturating_mul(e);
            shape.push(e);
        }
        if numel.saturating_mul(4) > r.remaining() {
            return r.fail(format!("{name}: {numel} values do not fit in the file"));
        }
        let data = r.take(4 * numel)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")) as f64).collect();
        if params.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return r.fail(format!("duplicate parameter {name}"));
        }
    }
    r.finish()?;
    ShnWeights::from_parts(config, params)
}
