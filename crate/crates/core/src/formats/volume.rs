//! Voxel volume: magic, version, grid geometry, one intensity byte and one
//! label byte per voxel in `(z, y, x)` order.

use super::binary::Reader;
use crate::recon::{GridSpec, VoxelGrid};
use crate::Result;

pub const VOLUME_MAGIC: [u8; 8] = *b"SONOVOL\0";
pub const VOLUME_VERSION: u32 = 1;
/// Largest voxel count accepted when decoding.
pub const MAX_VOXELS: usize = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeData {
    pub spec: GridSpec,
    pub intensity: Vec<u8>,
    pub sp_label: Vec<bool>,
}

pub fn encode_volume(grid: &VoxelGrid) -> Vec<u8> {
    let s = &grid.spec;
    let mut out = Vec::with_capacity(64 + 2 * s.len());
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for d in s.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in s.spacing.iter().chain(&s.origin) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&grid.intensity);
    out.extend(grid.sp_label.iter().map(|&b| b as u8));
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<VolumeData> {
    let mut r = Reader::new("volume", bytes);
    if r.take(8)? != VOLUME_MAGIC {
        return r.fail("bad magic");
    }
    let version = r.u32()?;
    if version != VOLUME_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    for v in spacing.iter_mut().chain(origin.iter_mut()) {
        *v = r.f64()?;
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) || origin.iter().any(|o| !o.is_finite()) {
        return r.fail("spacing must be positive and origin finite");
    }
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= MAX_VOXELS);
    let Some(n) = n else {
        return r.fail(format!("grid {dims:?} is too large"));
    };
    if r.remaining() != 2 * n {
        return r.fail(format!("expected {} voxel bytes, found {}", 2 * n, r.remaining()));
    }
    let intensity = r.take(n)?.to_vec();
    let mut sp_label = Vec::with_capacity(n);
    for &b in r.take(n)? {
        match b {
            0 => sp_label.push(false),
            1 => sp_label.push(true),
            other => return r.fail(format!("bad label byte {other}")),
        }
    }
    r.finish()?;
    Ok(VolumeData { spec: GridSpec { dims, spacing, origin }, intensity, sp_label })
}
