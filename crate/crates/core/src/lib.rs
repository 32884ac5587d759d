//! Landmark detection on transverse spine ultrasound, freehand volume
//! reconstruction, coronal projection and spinous-process angle measurement,
//! with a synthetic phantom that supplies exact ground truth.

pub mod config;
pub mod error;
pub mod formats;
pub mod image;
pub mod landmarks;
pub mod metrics;
pub mod model;
pub mod train;
pub mod phantom;
pub mod pipeline;
pub mod poly;
pub mod pose;
pub mod recon;
pub mod rng;
pub mod spa;

pub use error::{Error, Result};
