//! Whole-pipeline configuration with a lossless TOML form.

use serde::{Deserialize, Serialize};

use crate::landmarks::DecodeConfig;
use crate::metrics::DEFAULT_PCK_RADIUS;
use crate::model::ShnConfig;
use crate::phantom::SpinePhantom;
use crate::recon::ReconConfig;
use crate::spa::SpaConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub frame_count: usize,
    /// Dwell frames repeated at each end of the sweep.
    pub stacked_head_tail: usize,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { frame_count: 1200, stacked_head_tail: 30, min_frames: 900, max_frames: 2300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingDataConfig {
    pub frames: usize,
    /// Frames drawn from each random spine before a new one is generated.
    pub frames_per_spine: usize,
}

impl Default for TrainingDataConfig {
    fn default() -> Self {
        Self { frames: 500, frames_per_spine: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub pck_radius_px: f64,
    /// Angle differences above this many degrees are counted as failures.
    pub spa_threshold_deg: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { pck_radius_px: DEFAULT_PCK_RADIUS, spa_threshold_deg: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: String,
    pub phantom: SpinePhantom,
    pub scan: ScanConfig,
    pub model: ShnConfig,
    pub train: TrainConfig,
    pub training_data: TrainingDataConfig,
    pub decode: DecodeConfig,
    pub recon: ReconConfig,
    pub spa: SpaConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            phantom: Self::default_phantom(),
            scan: ScanConfig::default(),
            model: ShnConfig::desk(),
            train: TrainConfig::desk(),
            training_data: TrainingDataConfig::default(),
            decode: DecodeConfig::default(),
            recon: ReconConfig::default(),
            spa: SpaConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// A single-bend spine whose one segment measures 20 degrees.
    pub fn default_phantom() -> SpinePhantom {
        SpinePhantom { lateral_offset: vec![-9.26, 0.0, 18.5], ..SpinePhantom::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let s = &self.scan;
        if s.min_frames > s.max_frames || !(s.min_frames..=s.max_frames).contains(&s.frame_count) {
            return Err(Error::Config(format!(
                "frame_count {} outside [{}, {}]",
                s.frame_count, s.min_frames, s.max_frames
            )));
        }
        if 2 * s.stacked_head_tail >= s.frame_count {
            return Err(Error::Config("dwell frames leave no moving frames".into()));
        }
        if self.training_data.frames == 0 || self.training_data.frames_per_spine == 0 {
            return Err(Error::Config("training data needs at least one frame per spine".into()));
        }
        if self.decode.heatmap_size != self.model.heatmap_size {
            return Err(Error::Config("decode and model heatmap sizes differ".into()));
        }
        if !(self.recon.voxel_mm.is_finite() && self.recon.voxel_mm > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        if !(self.metrics.pck_radius_px >= 0.0 && self.metrics.spa_threshold_deg >= 0.0) {
            return Err(Error::Config("metric thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
