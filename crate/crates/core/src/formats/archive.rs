//! Scan archive directory: a TOML manifest naming one P5 graymap per frame,
//! a pose table and optional label and landmark tables.

use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::csv::{decode_labels, decode_landmarks, decode_poses, encode_labels, encode_landmarks, encode_poses};
use super::pgm::{decode_pgm, encode_pgm};
use super::{read_file, write_file};
use crate::image::{GrayImage, TransverseFrame};
use crate::landmarks::{sp_mask_for, LandmarkSet, ProcessedFrame};
use crate::phantom::{FrameLabel, TrackedScan};
use crate::pose::FramePose;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const ARCHIVE_FORMAT: &str = "sonospine-scan";
pub const ARCHIVE_VERSION: u32 = 1;
const POSE_FILE: &str = "poses.csv";
const LABEL_FILE: &str = "labels.csv";
const LANDMARK_FILE: &str = "landmarks.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    /// Millimetres per pixel along columns and rows.
    pub pixel_spacing: [f64; 2],
    pub pose_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_file: Option<String>,
    pub frame_files: Vec<String>,
}

fn check_relative(name: &str) -> Result<()> {
    let path = Path::new(name);
    let plain = !name.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    if !plain {
        return Err(Error::parse("manifest", format!("file name {name:?} must be a plain relative path")));
    }
    Ok(())
}

pub fn encode_manifest(m: &Manifest) -> Vec<u8> {
    toml::to_string(m).expect("manifest is always representable").into_bytes()
}

pub fn decode_manifest(bytes: &[u8]) -> Result<Manifest> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse("manifest", e.to_string()))?;
    let m: Manifest = toml::from_str(text).map_err(|e| Error::parse("manifest", e.message().to_string()))?;
    if m.format != ARCHIVE_FORMAT || m.version != ARCHIVE_VERSION {
        return Err(Error::parse("manifest", format!("unsupported archive {} v{}", m.format, m.version)));
    }
    if m.frame_files.len() != m.frame_count {
        return Err(Error::parse("manifest", format!("{} frame files for frame_count {}", m.frame_files.len(), m.frame_count)));
    }
    if m.width == 0 || m.height == 0 || m.width > super::pgm::MAX_SIDE || m.height > super::pgm::MAX_SIDE {
        return Err(Error::parse("manifest", format!("unsupported frame size {}x{}", m.width, m.height)));
    }
    if m.pixel_spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::parse("manifest", "pixel spacing must be positive"));
    }
    let names = m.frame_files.iter().chain([&m.pose_file]).chain(&m.label_file).chain(&m.landmark_file);
    for name in names {
        check_relative(name)?;
    }
    Ok(m)
}

/// In-memory contents of a scan archive.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanArchive {
    pub frames: Vec<GrayImage>,
    pub poses: Vec<FramePose>,
    pub pixel_spacing: [f64; 2],
    pub labels: Option<Vec<FrameLabel>>,
    /// Decoded landmarks; present on processed archives.
    pub landmarks: Option<Vec<LandmarkSet>>,
}

impl ScanArchive {
    pub fn from_scan(scan: &TrackedScan) -> Self {
        Self {
            frames: scan.frames.iter().map(|f| f.image.clone()).collect(),
            poses: scan.poses.clone(),
            pixel_spacing: scan.pixel_spacing,
            labels: scan.labels.clone(),
            landmarks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn transverse_frames(&self) -> Vec<TransverseFrame> {
        self.frames.iter().enumerate().map(|(index, image)| TransverseFrame { index, image: image.clone() }).collect()
    }

    /// Frames paired with the SP masks implied by the stored landmarks.
    pub fn processed_frames(&self) -> Result<Vec<ProcessedFrame>> {
        let Some(landmarks) = &self.landmarks else {
            return Err(Error::invalid("archive has no landmarks; run inference first"));
        };
        Ok(self
            .frames
            .iter()
            .zip(landmarks)
            .enumerate()
            .map(|(index, (image, lm))| ProcessedFrame {
                sp_mask: sp_mask_for(lm, image.width(), image.height()),
                frame: TransverseFrame { index, image: image.clone() },
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::invalid("archive has no frames"));
        }
        if self.poses.len() != n {
            return Err(Error::invalid(format!("{} poses for {n} frames", self.poses.len())));
        }
        let (w, h) = (self.frames[0].width(), self.frames[0].height());
        if self.frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::invalid("frames differ in size"));
        }
        if self.labels.as_ref().is_some_and(|l| l.len() != n) || self.landmarks.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::invalid("label or landmark count differs from frame count"));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let (w, h) = self.frames.first().map_or((0, 0), |f| (f.width(), f.height()));
        Manifest {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            frame_count: self.frames.len(),
            width: w,
            height: h,
            pixel_spacing: self.pixel_spacing,
            pose_file: POSE_FILE.into(),
            label_file: self.labels.as_ref().map(|_| LABEL_FILE.into()),
            landmark_file: self.landmarks.as_ref().map(|_| LANDMARK_FILE.into()),
            frame_files: (0..self.frames.len()).map(|i| format!("frames/{i:05}.pgm")).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let m = self.manifest();
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (name, image) in m.frame_files.iter().zip(&self.frames) {
            write_file(&dir.join(name), &encode_pgm(image))?;
        }
        write_file(&dir.join(&m.pose_file), &encode_poses(&self.poses))?;
        if let (Some(name), Some(labels)) = (&m.label_file, &self.labels) {
            write_file(&dir.join(name), &encode_labels(labels))?;
        }
        if let (Some(name), Some(landmarks)) = (&m.landmark_file, &self.landmarks) {
            write_file(&dir.join(name), &encode_landmarks(landmarks))?;
        }
        write_file(&dir.join(MANIFEST_NAME), &encode_manifest(&m))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m = decode_manifest(&read_file(&dir.join(MANIFEST_NAME))?)?;
        let frames = m
            .frame_files
            .iter()
            .map(|name| {
                let image = decode_pgm(&read_file(&dir.join(name))?)?;
                if (image.width(), image.height()) != (m.width, m.height) {
                    return Err(Error::parse("archive", format!("{name} is {}x{}", image.width(), image.height())));
                }
                Ok(image)
            })
            .collect::<Result<Vec<_>>>()?;
        let poses = decode_poses(&read_file(&dir.join(&m.pose_file))?)?;
        let labels = m.label_file.as_ref().map(|name| decode_labels(&read_file(&dir.join(name))?)).transpose()?;
        let landmarks = m.landmark_file.as_ref().map(|name| decode_landmarks(&read_file(&dir.join(name))?)).transpose()?;
        let archive = Self { frames, poses, pixel_spacing: m.pixel_spacing, labels, landmarks };
        archive.validate().map_err(|e| Error::parse("archive", e.to_string()))?;
        Ok(archive)
    }
}
