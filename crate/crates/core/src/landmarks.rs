//! Heatmap decoding, landmark verification and frame post-processing.

use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, TransverseFrame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::{Error, Result};

/// The five vertebral keypoints in left-to-right anatomical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Landmark {
    La0,
    La1,
    Sp,
    La2,
    La3,
}

impl Landmark {
    /// Order used by [`LandmarkSet`] and all CSV files.
    pub const ALL: [Landmark; 5] = [Landmark::La0, Landmark::La1, Landmark::Sp, Landmark::La2, Landmark::La3];
    /// Channel order of network heatmaps.
    pub const HEATMAP_ORDER: [Landmark; 5] = [Landmark::Sp, Landmark::La0, Landmark::La1, Landmark::La2, Landmark::La3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn channel(self) -> usize {
        Self::HEATMAP_ORDER.iter().position(|&l| l == self).expect("every landmark has a channel")
    }

    pub fn name(self) -> &'static str {
        match self {
            Landmark::La0 => "LA0",
            Landmark::La1 => "LA1",
            Landmark::Sp => "SP",
            Landmark::La2 => "LA2",
            Landmark::La3 => "LA3",
        }
    }

    /// The landmark that takes this one's place after a left-right mirror.
    pub fn mirrored(self) -> Landmark {
        match self {
            Landmark::La0 => Landmark::La3,
            Landmark::La1 => Landmark::La2,
            Landmark::Sp => Landmark::Sp,
            Landmark::La2 => Landmark::La1,
            Landmark::La3 => Landmark::La0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rejection {
    OrderViolation,
    LaminaDistance,
    /// A heatmap had no unique maximum.
    NoPeak,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::OrderViolation => "order_violation",
            Rejection::LaminaDistance => "lamina_distance",
            Rejection::NoPeak => "no_peak",
        }
    }

    pub fn parse(s: &str) -> Option<Rejection> {
        match s {
            "order_violation" => Some(Rejection::OrderViolation),
            "lamina_distance" => Some(Rejection::LaminaDistance),
            "no_peak" => Some(Rejection::NoPeak),
            _ => None,
        }
    }
}

/// Five keypoints in frame pixel coordinates, ordered LA0, LA1, SP, LA2, LA3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: [Point; 5],
    pub valid: bool,
    pub rejection: Option<Rejection>,
}

impl LandmarkSet {
    /// A ground-truth set, taken as valid without verification.
    pub fn truth(points: [Point; 5]) -> Self {
        Self { points, valid: true, rejection: None }
    }

    pub fn invalid(points: [Point; 5], reason: Rejection) -> Self {
        Self { points, valid: false, rejection: Some(reason) }
    }

    pub fn get(&self, l: Landmark) -> Point {
        self.points[l.index()]
    }

    pub fn sp(&self) -> Point {
        self.get(Landmark::Sp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUnits {
    Heatmap,
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    pub heatmap_size: usize,
    /// Standard deviation of the target Gaussians.
    pub target_sigma: f64,
    pub sigma_units: SigmaUnits,
    pub lamina_distance_min: f64,
    pub lamina_distance_max: f64,
    /// Padding around the lamina bounding box kept by post-processing, px.
    pub crop_margin: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            frame_width: FRAME_WIDTH,
            frame_height: FRAME_HEIGHT,
            heatmap_size: 64,
            target_sigma: 4.0,
            sigma_units: SigmaUnits::Heatmap,
            lamina_distance_min: 10.0,
            lamina_distance_max: 80.0,
            crop_margin: 10.0,
        }
    }
}

impl DecodeConfig {
    /// Heatmap-to-frame ratios (640/64, 480/64 by default).
    pub fn gamma(&self) -> (f64, f64) {
        (
            self.frame_width as f64 / self.heatmap_size as f64,
            self.frame_height as f64 / self.heatmap_size as f64,
        )
    }
}

/// `K` heatmaps of `size x size`, channel order [`Landmark::HEATMAP_ORDER`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    size: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 5 * size * size {
            return Err(Error::invalid(format!("heatmap stack of side {size} needs {} values", 5 * size * size)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("heatmap contains non-finite values"));
        }
        Ok(Self { size, data })
    }

    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0.0; 5 * size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.size * self.size;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map_for(&self, l: Landmark) -> &[f64] {
        self.channel(l.channel())
    }
}

/// Sub-pixel peak of one `side x side` map: the argmax moved a quarter pixel
/// toward the second-highest activation.
pub fn decode_peak(map: &[f64], side: usize) -> Result<(f64, f64)> {
    if map.len() != side * side || map.len() < 2 {
        return Err(Error::invalid(format!("expected a {side}x{side} map, got {} values", map.len())));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("heatmap contains non-finite values"));
    }
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    let mut second: Option<usize> = None;
    for (i, &v) in map.iter().enumerate() {
        if i != best && second.is_none_or(|s| v > map[s]) {
            second = Some(i);
        }
    }
    let second = second.expect("map has at least two pixels");
    if map[second] == map[best] && map.iter().all(|&v| v == map[best]) {
        return Err(Error::invalid("constant heatmap has no unique maximum"));
    }
    let m1 = ((best % side) as f64, (best / side) as f64);
    let m2 = ((second % side) as f64, (second / side) as f64);
    let (dx, dy) = (m2.0 - m1.0, m2.1 - m1.1);
    let norm = dx.hypot(dy);
    Ok((m1.0 + 0.25 * dx / norm, m1.1 + 0.25 * dy / norm))
}

/// Heatmap coordinates to frame pixels.
pub fn to_image_coords(p: (f64, f64), config: &DecodeConfig) -> Point {
    let (g1, g2) = config.gamma();
    Point::new(g1 * p.0, g2 * p.1)
}

/// Checks left-to-right ordering and the lamina endpoint distance band.
pub fn verify(points: [Point; 5], config: &DecodeConfig) -> LandmarkSet {
    if points.windows(2).any(|w| w[0].x > w[1].x) {
        return LandmarkSet::invalid(points, Rejection::OrderViolation);
    }
    let band = config.lamina_distance_min..=config.lamina_distance_max;
    let left = points[0].distance(&points[1]);
    let right = points[3].distance(&points[4]);
    if !band.contains(&left) || !band.contains(&right) {
        return LandmarkSet::invalid(points, Rejection::LaminaDistance);
    }
    LandmarkSet::truth(points)
}

pub fn decode_frame(stack: &HeatmapStack, config: &DecodeConfig) -> LandmarkSet {
    let mut points = [Point::default(); 5];
    for l in Landmark::ALL {
        match decode_peak(stack.map_for(l), stack.size()) {
            Ok(p) => points[l.index()] = to_image_coords(p, config),
            Err(_) => return LandmarkSet::invalid(points, Rejection::NoPeak),
        }
    }
    verify(points, config)
}

/// A post-processed frame plus the mask of its highlighted SP pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessedFrame {
    pub frame: TransverseFrame,
    pub sp_mask: Vec<bool>,
}

impl ProcessedFrame {
    pub fn blank(index: usize, width: usize, height: usize) -> Self {
        Self {
            frame: TransverseFrame { index, image: GrayImage::new(width, height) },
            sp_mask: vec![false; width * height],
        }
    }
}

/// Keeps the padded lamina rectangle, zeroes the rest, and burns the SP and
/// its 8-neighbourhood to 255.
pub fn postprocess_frame(frame: &TransverseFrame, lm: &LandmarkSet, config: &DecodeConfig) -> Result<ProcessedFrame> {
    if !lm.valid {
        return Err(Error::invalid("post-processing needs a verified landmark set"));
    }
    let img = &frame.image;
    let (w, h) = (img.width(), img.height());
    let laminae = [lm.get(Landmark::La0), lm.get(Landmark::La1), lm.get(Landmark::La2), lm.get(Landmark::La3)];
    let min_x = laminae.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - config.crop_margin;
    let max_x = laminae.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + config.crop_margin;
    let min_y = laminae.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - config.crop_margin;
    let max_y = laminae.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + config.crop_margin;
    let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64 - 1.0) as usize;
    let (x0, x1) = (clamp(min_x.floor(), w), clamp(max_x.ceil(), w));
    let (y0, y1) = (clamp(min_y.floor(), h), clamp(max_y.ceil(), h));

    let mut out = GrayImage::new(w, h);
    if min_x.ceil() < w as f64 && max_x.floor() >= 0.0 && min_y.ceil() < h as f64 && max_y.floor() >= 0.0 {
        for y in y0..=y1 {
            for x in x0..=x1 {
                out.set(x, y, img.get(x, y));
            }
        }
    }

    let sp_mask = sp_mask_for(lm, w, h);
    for (px, _) in out.pixels_mut().iter_mut().zip(&sp_mask).filter(|(_, &m)| m) {
        *px = 255;
    }
    Ok(ProcessedFrame { frame: TransverseFrame { index: frame.index, image: out }, sp_mask })
}

/// The SP pixel and its 8-neighbourhood, clipped to the frame; empty for an
/// invalid set.
pub fn sp_mask_for(lm: &LandmarkSet, w: usize, h: usize) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    if !lm.valid || !lm.sp().x.is_finite() || !lm.sp().y.is_finite() {
        return mask;
    }
    let sp = lm.sp();
    let (cx, cy) = (sp.x.round() as i64, sp.y.round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                mask[y as usize * w + x as usize] = true;
            }
        }
    }
    mask
}

/// Unnormalized Gaussian targets (peak 1.0) truncated at three sigma.
pub fn make_target(lm: &LandmarkSet, config: &DecodeConfig) -> HeatmapStack {
    let side = config.heatmap_size;
    let (g1, g2) = config.gamma();
    let (sx, sy) = match config.sigma_units {
        SigmaUnits::Heatmap => (config.target_sigma, config.target_sigma),
        SigmaUnits::Image => (config.target_sigma / g1, config.target_sigma / g2),
    };
    let mut stack = HeatmapStack::zeros(side);
    for l in Landmark::ALL {
        let p = lm.get(l);
        let (cx, cy) = (p.x / g1, p.y / g2);
        let map = stack.channel_mut(l.channel());
        for y in 0..side {
            let ny = (y as f64 - cy) / sy;
            for x in 0..side {
                let nx = (x as f64 - cx) / sx;
                let r2 = nx * nx + ny * ny;
                if r2 <= 9.0 {
                    map[y * side + x] = (-0.5 * r2).exp();
                }
            }
        }
    }
    stack
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike_map(side: usize, m1: (usize, usize), m2: (usize, usize)) -> Vec<f64> {
        let mut map = vec![0.0; side * side];
        map[m1.1 * side + m1.0] = 1.0;
        map[m2.1 * side + m2.0] = 0.5;
        map
    }

    #[test]
    fn quarter_step_toward_second_peak() {
        let (x, y) = decode_peak(&spike_map(64, (10, 10), (13, 14)), 64).unwrap();
        assert!((x - 10.15).abs() < 1e-12 && (y - 10.20).abs() < 1e-12);
        let (x, y) = decode_peak(&spike_map(64, (20, 5), (21, 5)), 64).unwrap();
        assert_eq!((x, y), (20.25, 5.0));
    }

    #[test]
    fn constant_map_is_rejected() {
        assert!(decode_peak(&vec![0.3; 64 * 64], 64).is_err());
        assert!(decode_peak(&[1.0, f64::NAN, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn heatmap_to_frame_ratios() {
        let c = DecodeConfig::default();
        assert_eq!(to_image_coords((0.0, 0.0), &c), Point::new(0.0, 0.0));
        assert_eq!(to_image_coords((32.0, 32.0), &c), Point::new(320.0, 240.0));
        let p = to_image_coords((10.15, 10.20), &c);
        assert!((p.x - 101.5).abs() < 1e-12 && (p.y - 76.5).abs() < 1e-12);
    }

    fn good_points() -> [Point; 5] {
        [
            Point::new(240.0, 250.0),
            Point::new(280.0, 240.0),
            Point::new(320.0, 180.0),
            Point::new(360.0, 240.0),
            Point::new(400.0, 250.0),
        ]
    }

    #[test]
    fn verification_rules() {
        let c = DecodeConfig::default();
        assert!(verify(good_points(), &c).valid);

        let mut p = good_points();
        p[2].x = 230.0;
        let lm = verify(p, &c);
        assert!(!lm.valid);
        assert_eq!(lm.rejection, Some(Rejection::OrderViolation));
        assert_eq!(lm.points, p);

        let mut p = good_points();
        p[0] = Point::new(275.0, 240.0);
        let lm = verify(p, &c);
        assert_eq!(lm.rejection, Some(Rejection::LaminaDistance));

        let mut p = good_points();
        p[4] = Point::new(430.0, 250.0);
        assert!(verify(p, &c).valid);
        p[4] = Point::new(441.0, 250.0 + 70.0);
        assert_eq!(verify(p, &c).rejection, Some(Rejection::LaminaDistance));
    }

    #[test]
    fn target_peak_and_falloff() {
        let c = DecodeConfig::default();
        let mut pts = good_points();
        pts[2] = Point::new(300.0, 150.0); // heatmap (30, 20)
        let t = make_target(&LandmarkSet::truth(pts), &c);
        let sp = t.map_for(Landmark::Sp);
        assert_eq!(sp[20 * 64 + 30], 1.0);
        assert!((sp[20 * 64 + 34] - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(sp[20 * 64 + 43], 0.0);
        assert!(sp[20 * 64 + 42] > 0.0);
    }

    #[test]
    fn postprocess_burns_sp_neighbourhood() {
        let c = DecodeConfig::default();
        let mut img = GrayImage::new(640, 480);
        img.pixels_mut().fill(50);
        let frame = TransverseFrame { index: 3, image: img };
        let mut pts = good_points();
        pts[2] = Point::new(320.0, 100.0);
        let out = postprocess_frame(&frame, &LandmarkSet::truth(pts), &c).unwrap();
        for y in 99..=101 {
            for x in 319..=321 {
                assert_eq!(out.frame.image.get(x, y), 255);
                assert!(out.sp_mask[y * 640 + x]);
            }
        }
        assert_eq!(out.sp_mask.iter().filter(|&&m| m).count(), 9);
        for y in 0..480 {
            for x in 0..640 {
                let inside = (230..=410).contains(&x) && (230..=260).contains(&y);
                let sp = (319..=321).contains(&x) && (99..=101).contains(&y);
                let v = out.frame.image.get(x, y);
                if sp {
                    continue;
                }
                assert_eq!(v, if inside { 50 } else { 0 }, "pixel {x},{y}");
            }
        }
        let again = postprocess_frame(&out.frame, &LandmarkSet::truth(pts), &c).unwrap();
        assert_eq!(again.sp_mask, out.sp_mask);
        assert_eq!(again.frame, out.frame);
    }

    #[test]
    fn postprocess_rejects_invalid_sets() {
        let frame = TransverseFrame { index: 0, image: GrayImage::new(640, 480) };
        let lm = LandmarkSet::invalid(good_points(), Rejection::OrderViolation);
        assert!(postprocess_frame(&frame, &lm, &DecodeConfig::default()).is_err());
    }
}
