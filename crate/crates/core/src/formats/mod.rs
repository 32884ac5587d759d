//! On-disk formats. Every decoder works on a byte slice so it can be fuzzed
//! without touching the filesystem.

use std::path::Path;

use crate::{Error, Result};

pub mod archive;
mod binary;
pub mod csv;
pub mod pgm;
pub mod volume;
pub mod weights;

pub use archive::{decode_manifest, encode_manifest, Manifest, ScanArchive};
pub use csv::*;
pub use pgm::{decode_pgm, encode_pgm};
pub use volume::{decode_volume, encode_volume, VolumeData};
pub use weights::{decode_weights, encode_weights};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
