//! The end-to-end workflow as in-memory stages plus `cmd_*` wrappers that
//! read and write the on-disk artifacts.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::formats::{self, read_file, write_file, ScanArchive};
use crate::image::GrayImage;
use crate::landmarks::{decode_frame, postprocess_frame, DecodeConfig, LandmarkSet, ProcessedFrame};
use crate::metrics::{icc_2_1, mad_sd, pck, pearson, PairedMeasurements, PckResult};
use crate::model::ShnWeights;
use crate::phantom::{analytic_spa, random_dataset, SpinePhantom, TrackedScan};
use crate::pose::FramePose;
use crate::recon::{fill_holes, fill_vnn, project_coronal, CoronalImage, GridChoice, ReconConfig, VoxelGrid};
use crate::rng::derive_seed;
use crate::spa::{measure_points, Segment, SpPoint, SpaConfig, SpaReport, SpineCurve};
use crate::train::{predict_heatmaps, train, EpochStats, Trainer, TrainingSample};
use crate::{Error, Result};

const SCAN_STREAM: u64 = 0;
const TRAIN_DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Where each stage keeps its artifacts inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn scan(&self) -> PathBuf {
        self.root.join("scan")
    }

    pub fn truth_landmarks(&self) -> PathBuf {
        self.root.join("truth_landmarks.csv")
    }

    pub fn truth_spa(&self) -> PathBuf {
        self.root.join("truth_spa.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn weights(&self) -> PathBuf {
        self.model().join("weights.bin")
    }

    pub fn processed(&self) -> PathBuf {
        self.root.join("processed")
    }

    pub fn recon(&self) -> PathBuf {
        self.root.join("recon")
    }

    pub fn measure(&self) -> PathBuf {
        self.root.join("measure")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// The phantom scan a configuration describes.
pub fn simulate_scan(cfg: &PipelineConfig) -> Result<TrackedScan> {
    cfg.validate()?;
    let mut scan = cfg.phantom.render_scan(cfg.scan.frame_count, cfg.scan.stacked_head_tail, derive_seed(cfg.seed, SCAN_STREAM))?;
    scan.truth_spa = Some(truth_segments_mm(&cfg.phantom, cfg.spa.merge_below_deg));
    Ok(scan)
}

/// Analytic SPA segments with bounds converted to millimetres along the spine.
pub fn truth_segments_mm(phantom: &SpinePhantom, merge_below: f64) -> Vec<Segment> {
    let half = 0.5 * phantom.length_mm();
    analytic_spa(phantom, merge_below)
        .into_iter()
        .map(|s| Segment { start: (s.start + 1.0) * half, end: (s.end + 1.0) * half, degrees: s.degrees })
        .collect()
}

/// Ground-truth landmarks, valid exactly on vertebra frames.
pub fn truth_landmarks(archive: &ScanArchive) -> Result<Vec<LandmarkSet>> {
    let labels = archive.labels.as_ref().ok_or_else(|| Error::invalid("scan archive has no labels"))?;
    Ok(labels
        .iter()
        .map(|l| LandmarkSet { points: l.landmarks.points, valid: l.on_vertebra, rejection: None })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSummary {
    pub frames: usize,
    pub on_vertebra: usize,
    pub truth_spa: Vec<Segment>,
}

impl fmt::Display for PhantomSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let angles: Vec<String> = self.truth_spa.iter().map(|s| format!("{:.1}", s.degrees)).collect();
        write!(f, "phantom: {} frames ({} on vertebra), truth SPA {}°", self.frames, self.on_vertebra, angles.join("/"))
    }
}

pub fn cmd_phantom(cfg: &PipelineConfig, out: &Path) -> Result<PhantomSummary> {
    let layout = Layout::new(out);
    let scan = simulate_scan(cfg)?;
    let archive = ScanArchive::from_scan(&scan);
    archive.write(&layout.scan())?;
    let truth = truth_landmarks(&archive)?;
    write_file(&layout.truth_landmarks(), &formats::encode_landmarks(&truth))?;
    let truth_spa = scan.truth_spa.unwrap_or_default();
    write_file(&layout.truth_spa(), &formats::encode_segments(&truth_spa))?;
    Ok(PhantomSummary { frames: archive.len(), on_vertebra: truth.iter().filter(|l| l.valid).count(), truth_spa })
}

/// On-vertebra samples from labeled archives, or a generated phantom set when
/// no archive is given.
pub fn training_samples(cfg: &PipelineConfig, datasets: &[PathBuf]) -> Result<Vec<TrainingSample>> {
    if datasets.is_empty() {
        let base = SpinePhantom { lateral_offset: vec![0.0], ..cfg.phantom.clone() };
        let frames = random_dataset(
            &base,
            cfg.training_data.frames,
            cfg.training_data.frames_per_spine,
            derive_seed(cfg.seed, TRAIN_DATA_STREAM),
        )?;
        return Ok(frames.into_iter().map(|f| TrainingSample { image: f.frame.image, landmarks: f.landmarks }).collect());
    }
    let mut samples = Vec::new();
    for dir in datasets {
        let archive = ScanArchive::read(dir)?;
        let labels = archive.labels.ok_or_else(|| Error::invalid(format!("{} has no labels", dir.display())))?;
        for (image, label) in archive.frames.into_iter().zip(labels) {
            if label.on_vertebra {
                samples.push(TrainingSample { image, landmarks: label.landmarks });
            }
        }
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub samples: usize,
    pub log: Vec<EpochStats>,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.log.last().map_or(f64::NAN, |s| s.loss);
        write!(f, "train: {} samples, {} epochs, final loss {last:.6}", self.samples, self.log.len())
    }
}

/// Trains a fresh model; `on_epoch` sees every finished epoch.
pub fn train_model(
    cfg: &PipelineConfig,
    samples: &[TrainingSample],
    mut on_epoch: impl FnMut(&EpochStats, &ShnWeights) -> Result<()>,
) -> Result<(ShnWeights, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(Error::invalid("no on-vertebra frames to train on"));
    }
    let mut trainer = Trainer::new(ShnWeights::build(&cfg.model, derive_seed(cfg.seed, INIT_STREAM))?);
    let log = train(&mut trainer, samples, &cfg.train, &cfg.decode, derive_seed(cfg.seed, TRAIN_STREAM), &mut on_epoch)?;
    Ok((trainer.weights, log))
}

pub fn cmd_train(cfg: &PipelineConfig, datasets: &[PathBuf], out: &Path) -> Result<TrainSummary> {
    let samples = training_samples(cfg, datasets)?;
    let every = cfg.train.checkpoint_every;
    let (weights, log) = train_model(cfg, &samples, |stats, w| {
        if every > 0 && stats.epoch % every == 0 {
            let path = out.join(format!("checkpoint_{:04}.bin", stats.epoch));
            write_file(&path, &formats::encode_weights(w))?;
        }
        Ok(())
    })?;
    write_file(&out.join("weights.bin"), &formats::encode_weights(&weights))?;
    write_file(&out.join("loss.csv"), &formats::encode_loss_log(&log))?;
    Ok(TrainSummary { samples: samples.len(), log })
}

pub fn load_weights(path: &Path, expected: &crate::model::ShnConfig) -> Result<ShnWeights> {
    let w = formats::decode_weights(&read_file(path)?)?;
    if &w.config != expected {
        return Err(Error::Config(format!("{} was trained with a different model configuration", path.display())));
    }
    Ok(w)
}

/// Where landmarks come from during inference.
pub enum LandmarkSource<'a> {
    Model(&'a ShnWeights),
    /// The archive's own labels, bypassing the network.
    Oracle,
}

/// Landmarks and processed frames for every frame of a scan. Frames that fail
/// verification become blank so reconstruction skips them.
pub fn infer_scan(archive: &ScanArchive, source: LandmarkSource<'_>, decode: &DecodeConfig) -> Result<(Vec<LandmarkSet>, Vec<ProcessedFrame>)> {
    archive.validate()?;
    let frames = archive.transverse_frames();
    let landmarks: Vec<LandmarkSet> = match source {
        LandmarkSource::Oracle => truth_landmarks(archive)?,
        LandmarkSource::Model(w) => frames
            .par_iter()
            .map(|f| Ok(decode_frame(&predict_heatmaps(w, &f.image)?, decode)))
            .collect::<Result<_>>()?,
    };
    let processed = frames
        .par_iter()
        .zip(&landmarks)
        .map(|(f, lm)| {
            if lm.valid {
                postprocess_frame(f, lm, decode)
            } else {
                Ok(ProcessedFrame::blank(f.index, f.image.width(), f.image.height()))
            }
        })
        .collect::<Result<_>>()?;
    Ok((landmarks, processed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferSummary {
    pub frames: usize,
    pub valid: usize,
    /// Valid fraction over on-vertebra frames, when the scan is labeled.
    pub on_vertebra_valid_rate: Option<f64>,
}

impl InferSummary {
    fn new(archive: &ScanArchive, landmarks: &[LandmarkSet]) -> Self {
        let on_vertebra_valid_rate = archive.labels.as_ref().and_then(|labels| {
            let on: Vec<bool> = labels.iter().zip(landmarks).filter(|(l, _)| l.on_vertebra).map(|(_, p)| p.valid).collect();
            (!on.is_empty()).then(|| on.iter().filter(|&&v| v).count() as f64 / on.len() as f64)
        });
        Self { frames: landmarks.len(), valid: landmarks.iter().filter(|l| l.valid).count(), on_vertebra_valid_rate }
    }
}

impl fmt::Display for InferSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "infer: {}/{} frames valid ({:.1}%)", self.valid, self.frames, 100.0 * self.valid as f64 / self.frames as f64)?;
        if let Some(r) = self.on_vertebra_valid_rate {
            write!(f, ", {:.1}% of on-vertebra frames", 100.0 * r)?;
        }
        Ok(())
    }
}

pub fn cmd_infer(cfg: &PipelineConfig, weights: Option<&Path>, scan: &Path, out: &Path) -> Result<InferSummary> {
    let archive = ScanArchive::read(scan)?;
    let loaded = weights.map(|p| load_weights(p, &cfg.model)).transpose()?;
    let source = match &loaded {
        Some(w) => LandmarkSource::Model(w),
        None => LandmarkSource::Oracle,
    };
    let (landmarks, processed) = infer_scan(&archive, source, &cfg.decode)?;
    let summary = InferSummary::new(&archive, &landmarks);
    let processed_archive = ScanArchive {
        frames: processed.into_iter().map(|p| p.frame.image).collect(),
        poses: archive.poses,
        pixel_spacing: archive.pixel_spacing,
        labels: None,
        landmarks: Some(landmarks),
    };
    processed_archive.write(out)?;
    Ok(summary)
}

/// Where the coronal image sits in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoronalGeometry {
    pub width: usize,
    pub height: usize,
    /// Millimetres per column and per row.
    pub spacing: [f64; 2],
    /// World `(x, z)` of the centre of pixel `(0, 0)`.
    pub origin: [f64; 2],
}

impl CoronalGeometry {
    fn of(grid: &VoxelGrid, image: &CoronalImage) -> Self {
        let c = grid.spec.center([0, 0, 0]);
        Self { width: image.width, height: image.height, spacing: image.spacing, origin: [c[0], c[2]] }
    }

    pub fn row_to_world(&self, row: f64) -> f64 {
        self.origin[1] + row * self.spacing[1]
    }
}

pub struct Reconstruction {
    pub grid: VoxelGrid,
    pub coronal: CoronalImage,
    pub geometry: CoronalGeometry,
}

pub fn reconstruct(frames: &[ProcessedFrame], poses: &[FramePose], pixel_spacing: [f64; 2], cfg: &ReconConfig) -> Result<Reconstruction> {
    let (grid, _) = fill_vnn(frames, poses, pixel_spacing, GridChoice::Auto { voxel_mm: cfg.voxel_mm })?;
    let grid = fill_holes(&grid, cfg.hole_radius);
    let coronal = project_coronal(&grid, cfg.slab_mm, cfg.projection)?;
    let geometry = CoronalGeometry::of(&grid, &coronal);
    Ok(Reconstruction { grid, coronal, geometry })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconSummary {
    pub dims: [usize; 3],
    pub filled: usize,
    pub sp_points: usize,
}

impl fmt::Display for ReconSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y, z] = self.dims;
        write!(f, "reconstruct: {x}x{y}x{z} voxels, {} filled, {} SP points", self.filled, self.sp_points)
    }
}

pub fn cmd_reconstruct(cfg: &PipelineConfig, processed: &Path, out: &Path) -> Result<ReconSummary> {
    let archive = ScanArchive::read(processed)?;
    let frames = archive.processed_frames()?;
    let r = reconstruct(&frames, &archive.poses, archive.pixel_spacing, &cfg.recon)?;
    write_file(&out.join("volume.bin"), &formats::encode_volume(&r.grid))?;
    let image = GrayImage::from_raw(r.coronal.width, r.coronal.height, r.coronal.pixels.clone())?;
    write_file(&out.join("coronal.pgm"), &formats::encode_pgm(&image))?;
    write_file(&out.join("sp_points.csv"), &formats::encode_sp_points(&r.coronal.sp_points))?;
    let geometry = toml::to_string(&r.geometry).expect("geometry is always representable");
    write_file(&out.join("coronal.toml"), geometry.as_bytes())?;
    Ok(ReconSummary { dims: r.grid.spec.dims, filled: r.grid.filled_count(), sp_points: r.coronal.sp_points.len() })
}

pub fn read_geometry(path: &Path) -> Result<CoronalGeometry> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::parse("coronal geometry", e.to_string()))?;
    toml::from_str(text).map_err(|e| Error::parse("coronal geometry", e.message().to_string()))
}

/// A measured curve with segment bounds in millimetres along the spine.
pub struct Measurement {
    pub curve: SpineCurve,
    pub report: SpaReport,
    pub segments_mm: Vec<Segment>,
}

pub fn measure(points: &[SpPoint], poses: &[FramePose], geometry: &CoronalGeometry, cfg: &SpaConfig) -> Result<Measurement> {
    let (curve, report) = measure_points(points, poses, geometry.spacing[0], geometry.spacing[1], cfg)?;
    let segments_mm = report
        .segments
        .iter()
        .map(|s| Segment {
            start: geometry.row_to_world(curve.z(s.start)),
            end: geometry.row_to_world(curve.z(s.end)),
            degrees: s.degrees,
        })
        .collect();
    Ok(Measurement { curve, report, segments_mm })
}

pub fn spa_text(m: &Measurement) -> String {
    let r = &m.report;
    let mut s = format!("SPA {}\n", r.angles_label());
    s += &format!("{:>8}{:>12}{:>12}{:>10}\n", "segment", "start_mm", "end_mm", "degrees");
    for (i, seg) in m.segments_mm.iter().enumerate() {
        s += &format!("{:>8}{:>12.2}{:>12.2}{:>10.2}\n", i, seg.start, seg.end, seg.degrees);
    }
    s += &format!(
        "points used {}, rejected {} (stacked {}, outliers {}), fit rms {:.3} px\n",
        r.points_used,
        r.points_rejected(),
        r.rejected_stacked,
        r.rejected_outliers,
        m.curve.fit_rms
    );
    s
}

pub fn cmd_measure(cfg: &PipelineConfig, recon: &Path, poses_from: &Path, out: &Path) -> Result<SpaReport> {
    let points = formats::decode_sp_points(&read_file(&recon.join("sp_points.csv"))?)?;
    let geometry = read_geometry(&recon.join("coronal.toml"))?;
    let manifest = formats::decode_manifest(&read_file(&poses_from.join(formats::archive::MANIFEST_NAME))?)?;
    let poses = formats::decode_poses(&read_file(&poses_from.join(&manifest.pose_file))?)?;
    let m = measure(&points, &poses, &geometry, &cfg.spa)?;
    write_file(&out.join("spa.csv"), &formats::encode_segments(&m.segments_mm))?;
    write_file(&out.join("spa.txt"), spa_text(&m).as_bytes())?;
    Ok(m.report)
}

/// Pairs each truth segment with the measured segment overlapping it most.
pub fn pair_segments(truth: &[Segment], measured: &[Segment]) -> Vec<(Segment, Option<Segment>)> {
    truth
        .iter()
        .map(|t| {
            let overlap = |m: &Segment| t.end.min(m.end) - t.start.max(m.start);
            let best = measured.iter().filter(|m| overlap(m) > 0.0).max_by(|a, b| overlap(a).total_cmp(&overlap(b)));
            (*t, best.copied())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaAgreement {
    pub pairs: Vec<(Segment, Option<Segment>)>,
    pub mad: Option<f64>,
    pub sd: Option<f64>,
    pub max_diff: Option<f64>,
    pub over_threshold: usize,
    pub pearson: Option<f64>,
    pub icc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub pck: Option<PckResult>,
    pub valid_rate: Option<f64>,
    pub spa: Option<SpaAgreement>,
}

impl Evaluation {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        if let Some(p) = &self.pck {
            for l in crate::landmarks::Landmark::ALL {
                rows.push((format!("pck_{}", l.name().to_lowercase()), p.get(l)));
            }
            rows.push(("pck_total".into(), p.total));
            rows.push(("pck_all_landmarks".into(), p.all_landmarks));
            rows.push(("pck_frames".into(), p.n_frames as f64));
        }
        if let Some(v) = self.valid_rate {
            rows.push(("valid_rate".into(), v));
        }
        if let Some(s) = &self.spa {
            for (i, (t, m)) in s.pairs.iter().enumerate() {
                rows.push((format!("spa_truth_{i}"), t.degrees));
                rows.push((format!("spa_measured_{i}"), m.map_or(f64::NAN, |m| m.degrees)));
            }
            let opt = [("spa_mad", s.mad), ("spa_sd", s.sd), ("spa_max_diff", s.max_diff), ("spa_pearson", s.pearson), ("spa_icc", s.icc)];
            for (name, v) in opt {
                if let Some(v) = v {
                    rows.push((name.into(), v));
                }
            }
            rows.push(("spa_over_threshold".into(), s.over_threshold as f64));
        }
        rows
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.pck {
            write!(f, "{p}")?;
        }
        if let Some(v) = self.valid_rate {
            writeln!(f, "valid detections on vertebra frames: {:.1}%", 100.0 * v)?;
        }
        if let Some(s) = &self.spa {
            writeln!(f, "{:>8}{:>10}{:>10}{:>10}", "segment", "truth", "measured", "diff")?;
            for (i, (t, m)) in s.pairs.iter().enumerate() {
                match m {
                    Some(m) => writeln!(f, "{i:>8}{:>10.2}{:>10.2}{:>10.2}", t.degrees, m.degrees, (m.degrees - t.degrees).abs())?,
                    None => writeln!(f, "{i:>8}{:>10.2}{:>10}{:>10}", t.degrees, "-", "-")?,
                }
            }
            if let (Some(mad), Some(sd)) = (s.mad, s.sd) {
                writeln!(f, "MAD {mad:.2}° ± {sd:.2}°, {} over threshold", s.over_threshold)?;
            }
            if let Some(r) = s.pearson {
                writeln!(f, "Pearson r {r:.3}")?;
            }
            if let Some(icc) = s.icc {
                writeln!(f, "ICC(2,1) {icc:.3}")?;
            }
        }
        Ok(())
    }
}

/// PCK over frames valid in `truth`, valid rate of `pred` on those frames, and
/// agreement between truth and measured SPA segments.
pub fn evaluate(
    pred: Option<(&[LandmarkSet], &[LandmarkSet])>,
    spa: Option<(&[Segment], &[Segment])>,
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let mut eval = Evaluation { pck: None, valid_rate: None, spa: None };
    if let Some((pred, truth)) = pred {
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!("{} predicted frames for {} truth frames", pred.len(), truth.len())));
        }
        let (p, t): (Vec<LandmarkSet>, Vec<LandmarkSet>) = pred.iter().zip(truth).filter(|(_, t)| t.valid).map(|(p, t)| (*p, *t)).unzip();
        if !t.is_empty() {
            eval.valid_rate = Some(p.iter().filter(|l| l.valid).count() as f64 / p.len() as f64);
            eval.pck = Some(pck(&p, &t, cfg.metrics.pck_radius_px)?);
        }
    }
    if let Some((truth, measured)) = spa {
        let pairs = pair_segments(truth, measured);
        let matched: Vec<(f64, f64)> = pairs.iter().filter_map(|(t, m)| m.map(|m| (t.degrees, m.degrees))).collect();
        let (a, b): (Vec<f64>, Vec<f64>) = matched.iter().copied().unzip();
        let diffs: Vec<f64> = matched.iter().map(|(t, m)| (t - m).abs()).collect();
        let threshold = cfg.metrics.spa_threshold_deg;
        let paired = PairedMeasurements::new(a, b).ok();
        eval.spa = Some(SpaAgreement {
            mad: (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64),
            sd: paired.as_ref().map(|p| mad_sd(p).sd),
            max_diff: diffs.iter().copied().reduce(f64::max),
            over_threshold: pairs.len() - matched.len() + diffs.iter().filter(|&&d| d > threshold).count(),
            pearson: paired.as_ref().and_then(|p| pearson(p).ok()),
            icc: paired.as_ref().and_then(|p| icc_2_1(&p.a.iter().zip(&p.b).map(|(x, y)| vec![*x, *y]).collect::<Vec<_>>()).ok()),
            pairs,
        });
    }
    Ok(eval)
}

pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    landmarks: Option<(&Path, &Path)>,
    spa: Option<(&Path, &Path)>,
    out: &Path,
) -> Result<Evaluation> {
    let lm = landmarks
        .map(|(p, t)| -> Result<_> { Ok((formats::decode_landmarks(&read_file(p)?)?, formats::decode_landmarks(&read_file(t)?)?)) })
        .transpose()?;
    let segs = spa
        .map(|(t, m)| -> Result<_> { Ok((formats::decode_segments(&read_file(t)?)?, formats::decode_segments(&read_file(m)?)?)) })
        .transpose()?;
    let eval = evaluate(
        lm.as_ref().map(|(p, t)| (p.as_slice(), t.as_slice())),
        segs.as_ref().map(|(t, m)| (t.as_slice(), m.as_slice())),
        cfg,
    )?;
    write_file(&out.join("metrics.csv"), &formats::encode_metrics(&eval.rows()))?;
    write_file(&out.join("metrics.txt"), eval.to_string().as_bytes())?;
    Ok(eval)
}

/// How the `pipeline` command obtains landmarks.
pub enum Detector<'a> {
    /// Train a model from the configuration first.
    Train,
    Weights(&'a Path),
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSummary {
    pub phantom: PhantomSummary,
    pub train: Option<TrainSummary>,
    pub infer: InferSummary,
    pub recon: ReconSummary,
    pub spa: SpaReport,
    pub evaluation: Evaluation,
}

impl fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.phantom)?;
        if let Some(t) = &self.train {
            writeln!(f, "{t}")?;
        }
        writeln!(f, "{}", self.infer)?;
        writeln!(f, "{}", self.recon)?;
        writeln!(f, "measure: SPA {}", self.spa.angles_label())?;
        write!(f, "{}", self.evaluation)
    }
}

/// Every stage in order, each reading what the previous one wrote.
pub fn cmd_pipeline(cfg: &PipelineConfig, detector: Detector<'_>, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let layout = Layout::new(out);
    write_file(&layout.config(), cfg.to_toml().as_bytes())?;
    let phantom = cmd_phantom(cfg, out)?;
    let (train, weights) = match detector {
        Detector::Train => (Some(cmd_train(cfg, &[], &layout.model())?), Some(layout.weights())),
        Detector::Weights(p) => (None, Some(p.to_path_buf())),
        Detector::Oracle => (None, None),
    };
    let infer = cmd_infer(cfg, weights.as_deref(), &layout.scan(), &layout.processed())?;
    let recon = cmd_reconstruct(cfg, &layout.processed(), &layout.recon())?;
    let spa = cmd_measure(cfg, &layout.recon(), &layout.scan(), &layout.measure())?;
    let evaluation = cmd_evaluate(
        cfg,
        Some((&layout.processed().join("landmarks.csv"), &layout.truth_landmarks())),
        Some((&layout.truth_spa(), &layout.measure().join("spa.csv"))),
        &layout.eval(),
    )?;
    Ok(PipelineSummary { phantom, train, infer, recon, spa, evaluation })
}
