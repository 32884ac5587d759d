//! Synthetic spine phantom: transverse frames with exactly known landmarks,
//! tracked scans, and the analytic SPA of the phantom's spinous-process line.
//!
//! The spine runs along world `z` over `[0, L]` with
//! `L = n * vertebra + (n - 1) * gap`, starting and ending on a vertebra. The
//! lateral offset of the SP line is a polynomial `g(t)` in millimetres on the
//! normalized axis `t = 2 z / L - 1`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, TransverseFrame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::landmarks::{LandmarkSet, Point};
use crate::poly::{bisect, Polynomial};
use crate::pose::FramePose;
use crate::rng::{child_rng, derive_seed, Rng};
use crate::spa::{build_segments, Segment};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinePhantom {
    /// Coefficients of `g(t)` in mm, ascending; at most six.
    pub lateral_offset: Vec<f64>,
    pub vertebra_count: usize,
    pub vertebra_length_mm: f64,
    pub gap_length_mm: f64,
    /// Lateral distance from the SP to the middle of each lamina arc.
    pub lamina_spacing_mm: f64,
    /// Lateral extent of a lamina arc at mid-vertebra.
    pub lamina_arc_px: f64,
    /// How much deeper the outer lamina endpoint sits than the inner one.
    pub lamina_drop_px: f64,
    pub tissue_band_depths_mm: Vec<f64>,
    pub sp_depth_mm: f64,
    pub lamina_depth_mm: f64,
    pub sp_sigma_px: f64,
    pub lamina_sigma_px: f64,
    pub rib_probability: f64,
    /// Speckle multiplies each pixel by a factor uniform in `[1 - a, 1 + a]`.
    pub speckle: f64,
    /// Lateral and axial pixel size, mm.
    pub pixel_spacing: [f64; 2],
    /// Per-frame probe tilt about the lateral axis is uniform in `±tilt_jitter_deg`.
    pub tilt_jitter_deg: f64,
    pub seed: u64,
}

impl Default for SpinePhantom {
    fn default() -> Self {
        Self {
            lateral_offset: vec![0.0],
            vertebra_count: 17,
            vertebra_length_mm: 20.0,
            gap_length_mm: 5.0,
            lamina_spacing_mm: 9.0,
            lamina_arc_px: 40.0,
            lamina_drop_px: 8.0,
            tissue_band_depths_mm: vec![4.0, 9.0, 14.0],
            sp_depth_mm: 22.0,
            lamina_depth_mm: 30.0,
            sp_sigma_px: 3.0,
            lamina_sigma_px: 2.0,
            rib_probability: 0.15,
            speckle: 0.3,
            pixel_spacing: [0.15, 0.125],
            tilt_jitter_deg: 0.0,
            seed: 0,
        }
    }
}

/// A rendered frame with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub frame: TransverseFrame,
    pub landmarks: LandmarkSet,
    pub on_vertebra: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameLabel {
    pub landmarks: LandmarkSet,
    pub on_vertebra: bool,
}

/// Ordered frames with per-frame probe poses.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedScan {
    pub frames: Vec<TransverseFrame>,
    pub poses: Vec<FramePose>,
    pub pixel_spacing: [f64; 2],
    pub labels: Option<Vec<FrameLabel>>,
    pub truth_spa: Option<Vec<Segment>>,
}

impl TrackedScan {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, frame_range: (usize, usize)) -> Result<()> {
        if self.frames.len() != self.poses.len() {
            return Err(Error::invalid(format!("{} frames but {} poses", self.frames.len(), self.poses.len())));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.frames.len() {
                return Err(Error::invalid(format!("{} frames but {} labels", self.frames.len(), labels.len())));
            }
        }
        let n = self.frames.len();
        if n < frame_range.0 || n > frame_range.1 {
            return Err(Error::invalid(format!(
                "scan has {n} frames, outside the configured range {}..={}",
                frame_range.0, frame_range.1
            )));
        }
        Ok(())
    }
}

impl SpinePhantom {
    pub fn with_offset(lateral_offset: Vec<f64>) -> Self {
        Self { lateral_offset, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("phantom: {m}")));
        if self.lateral_offset.is_empty() || self.lateral_offset.len() > 6 {
            return bad("lateral offset needs 1 to 6 coefficients");
        }
        if self.lateral_offset.iter().any(|c| !c.is_finite()) {
            return bad("lateral offset is not finite");
        }
        if self.vertebra_count == 0 {
            return bad("vertebra_count must be positive");
        }
        if !(self.vertebra_length_mm > 0.0 && self.gap_length_mm >= 0.0) {
            return bad("vertebra length must be positive and gap non-negative");
        }
        if !(self.pixel_spacing[0] > 0.0 && self.pixel_spacing[1] > 0.0) {
            return bad("pixel spacing must be positive");
        }
        if !(0.0..1.0).contains(&self.speckle) {
            return bad("speckle amplitude must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.rib_probability) {
            return bad("rib probability must be in [0, 1]");
        }
        if !(self.sp_sigma_px > 0.0 && self.lamina_sigma_px > 0.0) {
            return bad("structure widths must be positive");
        }
        Ok(())
    }

    pub fn length_mm(&self) -> f64 {
        let n = self.vertebra_count as f64;
        n * self.vertebra_length_mm + (n - 1.0) * self.gap_length_mm
    }

    pub fn offset_polynomial(&self) -> Polynomial {
        Polynomial::new(self.lateral_offset.clone())
    }

    pub fn normalized(&self, z: f64) -> f64 {
        2.0 * z / self.length_mm() - 1.0
    }

    /// Lateral SP offset at `z`, mm.
    pub fn offset_at(&self, z: f64) -> f64 {
        self.offset_polynomial().eval(self.normalized(z))
    }

    /// `dg/dz`, dimensionless.
    pub fn slope_at(&self, z: f64) -> f64 {
        self.offset_polynomial().derivative().eval(self.normalized(z)) * 2.0 / self.length_mm()
    }

    /// Position within the vertebra containing `z` in `[0, 1]`, or `None` in a gap.
    pub fn vertebra_position(&self, z: f64) -> Option<f64> {
        let period = self.vertebra_length_mm + self.gap_length_mm;
        let k = (z / period).floor().clamp(0.0, self.vertebra_count as f64 - 1.0);
        let within = z - k * period;
        (-1e-9..=self.vertebra_length_mm + 1e-9)
            .contains(&within)
            .then(|| (within / self.vertebra_length_mm).clamp(0.0, 1.0))
    }

    /// Frame column of the SP at `z`.
    pub fn sp_column(&self, z: f64) -> f64 {
        self.offset_at(z) / self.pixel_spacing[0] + (FRAME_WIDTH / 2) as f64
    }

    /// Ground-truth landmarks at `z` seen by a probe tilted `tilt` radians.
    /// Off-vertebra frames use the mid-vertebra arc length.
    fn landmarks_at(&self, z: f64, tilt: f64) -> LandmarkSet {
        let [sx, sy] = self.pixel_spacing;
        let row = |depth: f64| depth / (sy * tilt.cos());
        let x_sp = self.sp_column(z);
        let s = self.vertebra_position(z).unwrap_or(0.5);
        let half_arc = 0.5 * self.lamina_arc_px * (0.85 + 0.3 * (std::f64::consts::PI * s).sin());
        let mid = self.lamina_spacing_mm / sx;
        let y_lam = row(self.lamina_depth_mm);
        let y_outer = y_lam + self.lamina_drop_px;
        LandmarkSet::truth([
            Point::new(x_sp - mid - half_arc, y_outer),
            Point::new(x_sp - mid + half_arc, y_lam),
            Point::new(x_sp, row(self.sp_depth_mm)),
            Point::new(x_sp + mid - half_arc, y_lam),
            Point::new(x_sp + mid + half_arc, y_outer),
        ])
    }

    /// Renders the frame a probe at scan position `z` (no tilt) would see.
    pub fn render_frame(&self, z: f64, seed: u64) -> Result<LabeledFrame> {
        self.render_posed(0, z, 0.0, seed)
    }

    /// Renders frame `index` for a probe at scan position `probe_z` tilted
    /// `tilt` radians about the lateral axis. Structures are placed at the
    /// scan position where the tilted beam meets the SP depth.
    pub fn render_posed(&self, index: usize, probe_z: f64, tilt: f64, seed: u64) -> Result<LabeledFrame> {
        let length = self.length_mm();
        let z = probe_z + self.sp_depth_mm * tilt.tan();
        if !(-1e-9..=length + 1e-9).contains(&z) || !probe_z.is_finite() {
            return Err(Error::invalid(format!("scan position {z} mm outside the phantom [0, {length}]")));
        }
        let z = z.clamp(0.0, length);
        let mut rng = child_rng(seed, 0);
        let on_vertebra = self.vertebra_position(z).is_some();
        let landmarks = self.landmarks_at(z, tilt);
        let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
        let sy = self.pixel_spacing[1] * tilt.cos();
        let mut canvas = Canvas::new(w, h, 6.0);

        let band_gains = [70.0, 50.0, 40.0];
        for (i, depth) in self.tissue_band_depths_mm.iter().enumerate() {
            let amp = band_gains[i % band_gains.len()] * rng.gen_range(0.85..1.15);
            canvas.add_band(depth / sy, 4.0, amp);
        }
        if on_vertebra {
            let sp = landmarks.sp();
            canvas.add_blob(sp.x, sp.y, self.sp_sigma_px, 230.0 * rng.gen_range(0.9..1.1));
            let p = landmarks.points;
            for (a, b) in [(p[0], p[1]), (p[3], p[4])] {
                canvas.add_segment(a, b, self.lamina_sigma_px, 190.0 * rng.gen_range(0.85..1.15));
            }
        }
        if rng.gen_bool(self.rib_probability) {
            let x_sp = landmarks.sp().x;
            let depth = rng.gen_range(300.0..380.0);
            let offset = rng.gen_range(170.0..230.0);
            for side in [-1.0, 1.0] {
                canvas.add_blob(x_sp + side * offset, depth, 6.0, 160.0 * rng.gen_range(0.8..1.0));
            }
        }
        let image = canvas.finish(self.speckle, &mut rng);
        Ok(LabeledFrame { frame: TransverseFrame { index, image }, landmarks, on_vertebra })
    }

    /// A freehand sweep along the spine. The first and last `stacked` frames
    /// repeat the adjacent frame's pose, as when the probe dwells at the
    /// start and end of a scan.
    pub fn render_scan(&self, frame_count: usize, stacked: usize, seed: u64) -> Result<TrackedScan> {
        self.validate()?;
        if frame_count < 10 {
            return Err(Error::invalid(format!("a scan needs at least 10 frames, got {frame_count}")));
        }
        if frame_count < 2 * stacked + 2 {
            return Err(Error::invalid(format!("{frame_count} frames cannot hold {stacked} stacked frames at each end")));
        }
        let moving = frame_count - 2 * stacked;
        let length = self.length_mm();
        let jitter = self.tilt_jitter_deg.to_radians();
        let sweep: Vec<(f64, f64)> = (0..moving)
            .map(|i| {
                let z = length * i as f64 / (moving - 1) as f64;
                let tilt = if jitter > 0.0 {
                    let mut r = child_rng(seed, 1 << 40 | i as u64);
                    let t: f64 = r.gen_range(-jitter..=jitter);
                    // keep the SP line inside the phantom
                    let d = self.sp_depth_mm;
                    t.clamp((-z / d).atan(), ((length - z) / d).atan())
                } else {
                    0.0
                };
                (z, tilt)
            })
            .collect();
        let placement: Vec<(f64, f64)> = (0..frame_count)
            .map(|i| sweep[i.saturating_sub(stacked).min(moving - 1)])
            .collect();
        let rendered: Vec<LabeledFrame> = placement
            .par_iter()
            .enumerate()
            .map(|(i, &(z, tilt))| self.render_posed(i, z, tilt, derive_seed(seed, i as u64)))
            .collect::<Result<_>>()?;
        let poses = placement
            .iter()
            .map(|&(z, tilt)| FramePose::tilted([0.0, 0.0, z], tilt))
            .collect();
        let mut frames = Vec::with_capacity(frame_count);
        let mut labels = Vec::with_capacity(frame_count);
        for lf in rendered {
            labels.push(FrameLabel { landmarks: lf.landmarks, on_vertebra: lf.on_vertebra });
            frames.push(lf.frame);
        }
        Ok(TrackedScan {
            frames,
            poses,
            pixel_spacing: self.pixel_spacing,
            labels: Some(labels),
            truth_spa: Some(analytic_spa(self, 1.0)),
        })
    }

    /// Labeled on-vertebra frames at random scan positions, for training and
    /// held-out evaluation.
    pub fn random_frames(&self, count: usize, seed: u64) -> Result<Vec<LabeledFrame>> {
        self.validate()?;
        let length = self.length_mm();
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut r = child_rng(seed, i as u64);
                let z = loop {
                    let z: f64 = r.gen_range(0.0..=length);
                    if self.vertebra_position(z).is_some() {
                        break z;
                    }
                };
                self.render_posed(i, z, 0.0, r.gen())
            })
            .collect()
    }
}

/// On-vertebra frames from many random spines, a new spine every
/// `frames_per_spine` frames.
pub fn random_dataset(base: &SpinePhantom, count: usize, frames_per_spine: usize, seed: u64) -> Result<Vec<LabeledFrame>> {
    let per = frames_per_spine.max(1);
    let mut out = Vec::with_capacity(count);
    for (group, start) in (0..count).step_by(per).enumerate() {
        let mut r = child_rng(seed, group as u64);
        let phantom = SpinePhantom { seed: r.gen(), ..random_spine(base, CurveLimits::default(), &mut r) };
        let n = per.min(count - start);
        for mut f in phantom.random_frames(n, r.gen())? {
            f.frame.index += start;
            out.push(f);
        }
    }
    Ok(out)
}

/// Inflection points of the phantom's SP line, located by a dense sign sweep
/// of `g''` refined by bisection, in normalized `t`.
pub fn inflection_points(phantom: &SpinePhantom) -> Vec<f64> {
    const SAMPLES: usize = 4096;
    let second = phantom.offset_polynomial().derivative().derivative();
    if second.degree().is_none() {
        return Vec::new();
    }
    let f = |t: f64| second.eval(t);
    let ts: Vec<f64> = (0..=SAMPLES).map(|i| -1.0 + 2.0 * i as f64 / SAMPLES as f64).collect();
    let mut roots = Vec::new();
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            if a > -1.0 {
                roots.push(a);
            }
        } else if fb != 0.0 && fa.signum() != fb.signum() {
            roots.push(bisect(f, a, b, fa));
        }
    }
    roots
}

/// Segment angles of the phantom's SP line in degrees, segments bounded by
/// the domain ends and the inflection points, with flat segments merged
/// below `merge_below` degrees. Bounds are in normalized `t`.
pub fn analytic_spa(phantom: &SpinePhantom, merge_below: f64) -> Vec<Segment> {
    let mut bounds = vec![-1.0];
    bounds.extend(inflection_points(phantom));
    bounds.push(1.0);
    let first = phantom.offset_polynomial().derivative();
    let scale = 2.0 / phantom.length_mm();
    build_segments(bounds, |t| (scale * first.eval(t)).atan().to_degrees(), merge_below)
}

/// Limits for [`random_spine`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveLimits {
    pub max_angle_deg: (f64, f64),
    pub min_segment_deg: f64,
    pub max_offset_mm: f64,
}

impl Default for CurveLimits {
    fn default() -> Self {
        Self { max_angle_deg: (10.0, 35.0), min_segment_deg: 4.0, max_offset_mm: 25.0 }
    }
}

/// A random SP line of degree at most five: `g''` is a product of up to three
/// linear factors with roots inside the scan, integrated twice with a random
/// slope, scaled so its steepest segment hits a random target angle.
pub fn random_spine(base: &SpinePhantom, limits: CurveLimits, rng: &mut Rng) -> SpinePhantom {
    loop {
        let n_roots = rng.gen_range(0..=3usize);
        let mut second = vec![1.0];
        for _ in 0..n_roots {
            let r: f64 = rng.gen_range(-0.7..0.7);
            let mut next = vec![0.0; second.len() + 1];
            for (k, c) in second.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= r * c;
            }
            second = next;
        }
        let mut g = vec![0.0, 0.0];
        g.extend(second.iter().enumerate().map(|(k, c)| c / ((k + 1) * (k + 2)) as f64));
        let tilt: f64 = rng.gen_range(-0.3..0.3);
        let target = rng.gen_range(limits.max_angle_deg.0..limits.max_angle_deg.1);
        let shape = |scale: f64| {
            let mut coeffs: Vec<f64> = g.iter().map(|c| c * scale).collect();
            coeffs[1] = tilt * scale;
            SpinePhantom { lateral_offset: coeffs, ..base.clone() }
        };
        let steepest = |scale: f64| analytic_spa(&shape(scale), 1.0).iter().map(|s| s.degrees).fold(0.0, f64::max);
        let (mut lo, mut hi) = (0.0, 1.0);
        while steepest(hi) < target && hi < 1e6 {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if steepest(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut phantom = shape(hi);
        let p = phantom.offset_polynomial();
        let (min, max) = (0..=400).map(|i| p.eval(-1.0 + i as f64 / 200.0)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        phantom.lateral_offset[0] -= 0.5 * (min + max);
        let segments = analytic_spa(&phantom, 1.0);
        if 0.5 * (max - min) > limits.max_offset_mm || segments.iter().any(|s| s.degrees < limits.min_segment_deg) {
            continue;
        }
        phantom.lateral_offset.truncate(6);
        return phantom;
    }
}

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize, background: f64) -> Self {
        Self { w, h, data: vec![background; w * h] }
    }

    fn rows(&self, center: f64, reach: f64) -> std::ops::Range<usize> {
        let lo = (center - reach).floor().max(0.0) as usize;
        let hi = ((center + reach).ceil() + 1.0).clamp(0.0, self.h as f64) as usize;
        lo.min(hi)..hi
    }

    fn cols(&self, center: f64, reach: f64) -> std::ops::Range<usize> {
        let lo = (center - reach).floor().max(0.0) as usize;
        let hi = ((center + reach).ceil() + 1.0).clamp(0.0, self.w as f64) as usize;
        lo.min(hi)..hi
    }

    fn add_band(&mut self, row: f64, sigma: f64, amp: f64) {
        for y in self.rows(row, 4.0 * sigma) {
            let v = amp * (-0.5 * ((y as f64 - row) / sigma).powi(2)).exp();
            self.data[y * self.w..(y + 1) * self.w].iter_mut().for_each(|p| *p += v);
        }
    }

    fn add_blob(&mut self, x: f64, y: f64, sigma: f64, amp: f64) {
        let reach = 4.0 * sigma;
        for r in self.rows(y, reach) {
            for c in self.cols(x, reach) {
                let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
                self.data[r * self.w + c] += amp * (-0.5 * d2 / (sigma * sigma)).exp();
            }
        }
    }

    fn add_segment(&mut self, a: Point, b: Point, sigma: f64, amp: f64) {
        let reach = 4.0 * sigma;
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        for r in self.rows(0.5 * (a.y + b.y), 0.5 * (a.y - b.y).abs() + reach) {
            for c in self.cols(0.5 * (a.x + b.x), 0.5 * (a.x - b.x).abs() + reach) {
                let (px, py) = (c as f64 - a.x, r as f64 - a.y);
                let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
                let d2 = (px - t * dx).powi(2) + (py - t * dy).powi(2);
                self.data[r * self.w + c] += amp * (-0.5 * d2 / (sigma * sigma)).exp();
            }
        }
    }

    fn finish(self, speckle: f64, rng: &mut Rng) -> GrayImage {
        let pixels = self
            .data
            .into_iter()
            .map(|v| {
                let factor = if speckle > 0.0 { rng.gen_range(1.0 - speckle..=1.0 + speckle) } else { 1.0 };
                (v * factor).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayImage::from_raw(self.w, self.h, pixels).expect("canvas size matches")
    }
}
