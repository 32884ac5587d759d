//! 8-bit grayscale frames and the intensity/geometry transforms applied
//! before they reach the network.

use crate::{Error, Result};

pub const FRAME_WIDTH: usize = 640;
pub const FRAME_HEIGHT: usize = 480;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// One transverse ultrasound frame with its position in the scan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransverseFrame {
    pub index: usize,
    pub image: GrayImage,
}

/// `I' = 255 ln(1 + I) / ln(256)`, lifting dark soft tissue.
pub fn log_transform(image: &GrayImage) -> Vec<f64> {
    let scale = 255.0 / 256f64.ln();
    let lut: Vec<f64> = (0..256).map(|i| scale * (1.0 + i as f64).ln()).collect();
    image.pixels().iter().map(|&v| lut[v as usize]).collect()
}

/// 2-D affine map `p -> A p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] };

    pub fn scale(sx: f64, sy: f64) -> Self {
        Affine2 { m: [[sx, 0.0], [0.0, sy]], t: [0.0, 0.0] }
    }

    /// Rotation by `radians` about `center` (image axes, y pointing down).
    pub fn rotation_about(radians: f64, center: [f64; 2]) -> Self {
        let (s, c) = radians.sin_cos();
        let m = [[c, -s], [s, c]];
        let t = [
            center[0] - (m[0][0] * center[0] + m[0][1] * center[1]),
            center[1] - (m[1][0] * center[0] + m[1][1] * center[1]),
        ];
        Affine2 { m, t }
    }

    /// Mirror about the vertical axis of an image `width` pixels wide:
    /// column `x` goes to `width - 1 - x`.
    pub fn horizontal_flip(width: usize) -> Self {
        Affine2 { m: [[-1.0, 0.0], [0.0, 1.0]], t: [(width - 1) as f64, 0.0] }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }

    /// `self` after `first`.
    pub fn then_after(&self, first: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &first.m;
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = self.apply(first.t);
        Affine2 { m, t }
    }

    pub fn inverse(&self) -> Affine2 {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        assert!(det.abs() > 1e-12, "singular affine map");
        let m = [[d / det, -b / det], [-c / det, a / det]];
        let t = [-(m[0][0] * self.t[0] + m[0][1] * self.t[1]), -(m[1][0] * self.t[0] + m[1][1] * self.t[1])];
        Affine2 { m, t }
    }
}

/// Bilinear sample with zero outside the image.
fn sample(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    if !(x > -1.0 && y > -1.0 && x < w as f64 && y < h as f64) {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |xi: isize, yi: isize| {
        if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `src` (`w x h`) onto an `out_w x out_h` grid; output pixel `q`
/// reads the source at `out_to_src(q)`.
pub fn warp_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize, out_to_src: &Affine2) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for v in 0..out_h {
        for u in 0..out_w {
            let p = out_to_src.apply([u as f64, v as f64]);
            out.push(sample(src, w, h, p[0], p[1]));
        }
    }
    out
}

/// Frame coordinates to network-input coordinates: index 0 maps to index 0 and
/// each axis scales by `input / frame`, matching the heatmap ratios.
pub fn frame_to_input(frame_w: usize, frame_h: usize, input_w: usize, input_h: usize) -> Affine2 {
    Affine2::scale(input_w as f64 / frame_w as f64, input_h as f64 / frame_h as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_transform_fixes_endpoints() {
        let img = GrayImage::from_raw(3, 1, vec![0, 15, 255]).unwrap();
        let out = log_transform(&img);
        assert_eq!(out[0], 0.0);
        assert!((out[2] - 255.0).abs() < 1e-12);
        assert!((out[1] - 255.0 * 16f64.ln() / 256f64.ln()).abs() < 1e-12);
        assert!(out[1] > 15.0);
    }

    #[test]
    fn flip_mirrors_columns() {
        let f = Affine2::horizontal_flip(640);
        assert_eq!(f.apply([100.0, 7.0]), [539.0, 7.0]);
        assert_eq!(f.then_after(&f).apply([12.5, 3.0]), [12.5, 3.0]);
    }

    #[test]
    fn inverse_round_trips() {
        let a = Affine2::rotation_about(0.3, [320.0, 240.0]).then_after(&Affine2::horizontal_flip(640));
        let p = [123.4, 56.7];
        let q = a.inverse().apply(a.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        assert_eq!(Affine2::rotation_about(0.3, [5.0, 6.0]).apply([5.0, 6.0]), [5.0, 6.0]);
    }

    #[test]
    fn identity_warp_copies() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(warp_bilinear(&src, 4, 3, 4, 3, &Affine2::IDENTITY), src);
    }

    #[test]
    fn bilinear_midpoint_averages() {
        let src = vec![0.0, 10.0, 20.0, 30.0];
        let out = warp_bilinear(&src, 2, 2, 1, 1, &Affine2 { m: [[0.0; 2]; 2], t: [0.5, 0.5] });
        assert!((out[0] - 15.0).abs() < 1e-12);
    }
}
