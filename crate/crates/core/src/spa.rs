//! Spinous-process curve fitting and spinous-process angle (SPA) measurement.
//!
//! The SP trace on the coronal image is fitted with a degree-5 polynomial
//! `x = f(u)` on the normalized axis `u in [-1, 1]`. Inflection points
//! (real roots of `f''`) split the curve into segments; each segment's angle
//! is the difference of the tangent directions at its two ends.

use serde::{Deserialize, Serialize};

use crate::pose::FramePose;
use crate::poly::Polynomial;
use crate::{Error, Result};

pub const FIT_DEGREE: usize = 5;
const NCOEF: usize = FIT_DEGREE + 1;

/// One SP mark on the coronal image, in coronal pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpPoint {
    pub x: f64,
    pub z: f64,
    pub source_frame: usize,
}

/// Angle between the tangents at `start` and `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub degrees: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaConfig {
    /// Segments flatter than this are folded into a neighbour, degrees.
    pub merge_below_deg: f64,
    /// Frames that moved less than this toward the scan interior are probe dwell, mm.
    pub dwell_epsilon_mm: f64,
    pub outlier_factor: f64,
    /// Residuals under this never count as outliers, coronal px.
    pub outlier_floor_px: f64,
    pub min_points: usize,
}

impl Default for SpaConfig {
    fn default() -> Self {
        Self {
            merge_below_deg: 1.0,
            dwell_epsilon_mm: 0.01,
            outlier_factor: 3.0,
            outlier_floor_px: 2.0,
            min_points: 2 * NCOEF,
        }
    }
}

/// Degree-5 fit of lateral position against the normalized scan axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpineCurve {
    pub coeffs: [f64; NCOEF],
    pub z_min: f64,
    pub z_max: f64,
    /// Coronal pixel size along x and z, mm.
    pub x_spacing: f64,
    pub z_spacing: f64,
    pub fit_rms: f64,
}

impl SpineCurve {
    pub fn u(&self, z: f64) -> f64 {
        2.0 * (z - self.z_min) / (self.z_max - self.z_min) - 1.0
    }

    pub fn z(&self, u: f64) -> f64 {
        self.z_min + (u + 1.0) * 0.5 * (self.z_max - self.z_min)
    }

    pub fn polynomial(&self) -> Polynomial {
        Polynomial::new(self.coeffs.to_vec())
    }

    pub fn eval_u(&self, u: f64) -> f64 {
        self.polynomial().eval(u)
    }

    pub fn eval_z(&self, z: f64) -> f64 {
        self.eval_u(self.u(z))
    }

    /// Converts `df/du` (coronal px per unit u) to a physical mm/mm slope.
    pub fn slope_scale(&self) -> f64 {
        self.x_spacing / (0.5 * (self.z_max - self.z_min) * self.z_spacing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaReport {
    /// Segment bounds are in normalized `u`.
    pub segments: Vec<Segment>,
    pub z_min: f64,
    pub z_max: f64,
    pub points_used: usize,
    pub rejected_stacked: usize,
    pub rejected_outliers: usize,
}

impl SpaReport {
    pub fn points_rejected(&self) -> usize {
        self.rejected_stacked + self.rejected_outliers
    }

    /// Angles joined the way they are usually quoted, e.g. `14/23°`.
    pub fn angles_label(&self) -> String {
        let parts: Vec<String> = self.segments.iter().map(|s| format!("{:.0}", s.degrees)).collect();
        format!("{}°", parts.join("/"))
    }
}

/// Builds segments between consecutive boundaries, then repeatedly folds the
/// flattest segment below `merge_below` into its flatter neighbour.
/// Neighbours left bending the same way are joined, since no inflection
/// separates them. `tangent_deg` gives the tangent direction at a boundary.
pub fn build_segments(mut bounds: Vec<f64>, tangent_deg: impl Fn(f64) -> f64, merge_below: f64) -> Vec<Segment> {
    assert!(bounds.len() >= 2, "need at least the two domain ends");
    let bend = |a: f64, b: f64| tangent_deg(b) - tangent_deg(a);
    let mut bends: Vec<f64> = bounds.windows(2).map(|w| bend(w[0], w[1])).collect();
    let remove_boundary = |bounds: &mut Vec<f64>, bends: &mut Vec<f64>, boundary: usize| {
        bounds.remove(boundary);
        bends.remove(boundary - 1);
        bends[boundary - 1] = bend(bounds[boundary - 1], bounds[boundary]);
    };
    loop {
        if let Some(i) = bends.windows(2).position(|w| w[0] * w[1] > 0.0) {
            remove_boundary(&mut bounds, &mut bends, i + 1);
            continue;
        }
        if bends.len() == 1 {
            break;
        }
        let (i, smallest) = bends
            .iter()
            .map(|b| b.abs())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if smallest >= merge_below {
            break;
        }
        // Drop the interior boundary shared with the flatter neighbour.
        let drop_left = if i == 0 {
            false
        } else if i == bends.len() - 1 {
            true
        } else {
            bends[i - 1].abs() <= bends[i + 1].abs()
        };
        remove_boundary(&mut bounds, &mut bends, if drop_left { i } else { i + 1 });
    }
    bounds
        .windows(2)
        .zip(bends)
        .map(|(w, b)| Segment { start: w[0], end: w[1], degrees: b.abs() })
        .collect()
}

/// Least-squares degree-5 fit using the points' own z extent as the domain.
pub fn fit_curve(points: &[SpPoint], x_spacing: f64, z_spacing: f64) -> Result<SpineCurve> {
    let z_min = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_max = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    fit_curve_in(points, (z_min, z_max), x_spacing, z_spacing)
}

/// Fit over an explicit z domain; the points must cover at least half of it.
pub fn fit_curve_in(points: &[SpPoint], domain: (f64, f64), x_spacing: f64, z_spacing: f64) -> Result<SpineCurve> {
    if points.len() < 2 * NCOEF {
        return Err(Error::invalid(format!("curve fit needs at least {} points, got {}", 2 * NCOEF, points.len())));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.z.is_finite()) {
        return Err(Error::invalid("non-finite SP point"));
    }
    let (z_min, z_max) = domain;
    if !(z_max > z_min) {
        return Err(Error::invalid("rank-deficient fit: all points share one z"));
    }
    let lo = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 0.5 * (z_max - z_min) {
        return Err(Error::invalid("points span less than half of the z domain"));
    }
    let mut curve = SpineCurve { coeffs: [0.0; NCOEF], z_min, z_max, x_spacing, z_spacing, fit_rms: 0.0 };
    let rows: Vec<[f64; NCOEF]> = points
        .iter()
        .map(|p| {
            let u = curve.u(p.z);
            let mut row = [1.0; NCOEF];
            for k in 1..NCOEF {
                row[k] = row[k - 1] * u;
            }
            row
        })
        .collect();
    let rhs: Vec<f64> = points.iter().map(|p| p.x).collect();
    curve.coeffs = householder_lstsq(rows, rhs)?;
    let sse: f64 = points.iter().map(|p| (p.x - curve.eval_z(p.z)).powi(2)).sum();
    curve.fit_rms = (sse / points.len() as f64).sqrt();
    Ok(curve)
}

/// Solves `min ||A c - b||` by Householder QR of the tall matrix `A`.
fn householder_lstsq(mut a: Vec<[f64; NCOEF]>, mut b: Vec<f64>) -> Result<[f64; NCOEF]> {
    let m = a.len();
    let mut diag = [0.0; NCOEF];
    for k in 0..NCOEF {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("rank-deficient fit"));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = a_k - alpha e_k, stored in place below the diagonal
        a[k][k] -= alpha;
        let vnorm2: f64 = (k..m).map(|i| a[i][k] * a[i][k]).sum();
        for j in k + 1..NCOEF {
            let dot: f64 = (k..m).map(|i| a[i][k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[i][j] -= f * a[i][k];
            }
        }
        let dot: f64 = (k..m).map(|i| a[i][k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            b[i] -= f * a[i][k];
        }
        diag[k] = alpha;
    }
    let scale = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-10 * scale) {
        return Err(Error::invalid("rank-deficient fit"));
    }
    let mut c = [0.0; NCOEF];
    for k in (0..NCOEF).rev() {
        let mut s = b[k];
        for j in k + 1..NCOEF {
            s -= a[k][j] * c[j];
        }
        c[k] = s / diag[k];
    }
    Ok(c)
}

/// Tangents, inflection points and segment angles of a fitted curve.
pub fn measure_spa(curve: &SpineCurve, config: &SpaConfig) -> Vec<Segment> {
    let first = curve.polynomial().derivative();
    let second = first.derivative();
    let mut bounds = vec![-1.0];
    bounds.extend(second.real_roots_in(-1.0, 1.0));
    bounds.push(1.0);
    let s = curve.slope_scale();
    build_segments(bounds, |u| (s * first.eval(u)).atan().to_degrees(), config.merge_below_deg)
}

/// Indices of frames that did not move toward the scan interior: the first
/// half compares with the next frame, the second half with the previous one.
pub fn dwell_frames(poses: &[FramePose], epsilon_mm: f64) -> Vec<bool> {
    let n = poses.len();
    (0..n)
        .map(|i| {
            let neighbour = if i < n / 2 { i + 1 } else { i.wrapping_sub(1) };
            neighbour < n && poses[i].displacement(&poses[neighbour]) < epsilon_mm
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<SpPoint>,
    pub curve: SpineCurve,
    pub rejected_stacked: usize,
    pub rejected_outliers: usize,
    pub fits: usize,
}

/// Drops probe-dwell frames, then residual outliers of a provisional fit, and
/// refits once.
pub fn filter_points(points: &[SpPoint], poses: &[FramePose], x_spacing: f64, z_spacing: f64, config: &SpaConfig) -> Result<FilterOutcome> {
    let dwell = dwell_frames(poses, config.dwell_epsilon_mm);
    if let Some(p) = points.iter().find(|p| p.source_frame >= poses.len()) {
        return Err(Error::invalid(format!("SP point from frame {} but only {} poses", p.source_frame, poses.len())));
    }
    let moving: Vec<SpPoint> = points.iter().copied().filter(|p| !dwell[p.source_frame]).collect();
    let rejected_stacked = points.len() - moving.len();
    let enough = |n: usize| {
        if n < config.min_points {
            Err(Error::invalid(format!("only {n} SP points survive filtering, need {}", config.min_points)))
        } else {
            Ok(())
        }
    };
    enough(moving.len())?;
    let provisional = fit_curve(&moving, x_spacing, z_spacing)?;
    let residuals: Vec<f64> = moving.iter().map(|p| (p.x - provisional.eval_z(p.z)).abs()).collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let threshold = (config.outlier_factor * median).max(config.outlier_floor_px);
    let kept: Vec<SpPoint> = moving.iter().zip(&residuals).filter(|(_, &r)| r <= threshold).map(|(p, _)| *p).collect();
    let rejected_outliers = moving.len() - kept.len();
    if rejected_outliers == 0 {
        return Ok(FilterOutcome { kept, curve: provisional, rejected_stacked, rejected_outliers, fits: 1 });
    }
    enough(kept.len())?;
    let curve = fit_curve(&kept, x_spacing, z_spacing)?;
    Ok(FilterOutcome { kept, curve, rejected_stacked, rejected_outliers, fits: 2 })
}

/// Filter, fit and measure in one go.
pub fn measure_points(points: &[SpPoint], poses: &[FramePose], x_spacing: f64, z_spacing: f64, config: &SpaConfig) -> Result<(SpineCurve, SpaReport)> {
    let outcome = filter_points(points, poses, x_spacing, z_spacing, config)?;
    let segments = measure_spa(&outcome.curve, config);
    let report = SpaReport {
        segments,
        z_min: outcome.curve.z_min,
        z_max: outcome.curve.z_max,
        points_used: outcome.kept.len(),
        rejected_stacked: outcome.rejected_stacked,
        rejected_outliers: outcome.rejected_outliers,
    };
    Ok((outcome.curve, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(coeffs: [f64; 6], n: usize, z0: f64, z1: f64) -> Vec<SpPoint> {
        let p = Polynomial::new(coeffs.to_vec());
        (0..n)
            .map(|i| {
                let z = z0 + (z1 - z0) * i as f64 / (n - 1) as f64;
                let u = 2.0 * (z - z0) / (z1 - z0) - 1.0;
                SpPoint { x: p.eval(u), z, source_frame: i }
            })
            .collect()
    }

    #[test]
    fn recovers_exact_quintic() {
        let c = [3.0, -1.5, 2.0, 0.7, -4.0, 1.25];
        let curve = fit_curve(&sample(c, 40, 10.0, 300.0), 0.5, 0.5).unwrap();
        for (got, want) in curve.coeffs.iter().zip(c) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
        assert!(curve.fit_rms < 1e-9);
    }

    #[test]
    fn straight_line_has_one_flat_segment() {
        let pts = sample([5.0, 0.0, 0.0, 0.0, 0.0, 0.0], 30, 0.0, 100.0);
        let curve = fit_curve(&pts, 1.0, 1.0).unwrap();
        let segs = measure_spa(&curve, &SpaConfig::default());
        assert_eq!(segs.len(), 1);
        assert!(segs[0].degrees.abs() < 1e-9);
    }

    #[test]
    fn collinear_points_leave_no_curvature() {
        let pts: Vec<SpPoint> = (0..20).map(|i| SpPoint { x: 2.0 + 0.3 * i as f64, z: i as f64 * 5.0, source_frame: i }).collect();
        let curve = fit_curve(&pts, 1.0, 1.0).unwrap();
        assert!(curve.coeffs[2..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn offset_moves_only_constant_term() {
        let base = sample([1.0, 2.0, -1.0, 0.5, 0.3, -0.2], 25, 0.0, 50.0);
        let shifted: Vec<SpPoint> = base.iter().map(|p| SpPoint { x: p.x + 7.5, ..*p }).collect();
        let a = fit_curve(&base, 1.0, 1.0).unwrap();
        let b = fit_curve(&shifted, 1.0, 1.0).unwrap();
        assert!((b.coeffs[0] - a.coeffs[0] - 7.5).abs() < 1e-9);
        for k in 1..6 {
            assert!((b.coeffs[k] - a.coeffs[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficiency_and_point_count_are_rejected() {
        let same_z: Vec<SpPoint> = (0..20).map(|i| SpPoint { x: i as f64, z: 3.0, source_frame: i }).collect();
        assert!(fit_curve(&same_z, 1.0, 1.0).is_err());
        let few_z: Vec<SpPoint> = (0..20).map(|i| SpPoint { x: i as f64, z: (i % 3) as f64, source_frame: i }).collect();
        assert!(fit_curve(&few_z, 1.0, 1.0).is_err());
        assert!(fit_curve(&sample([0.0; 6], 11, 0.0, 1.0), 1.0, 1.0).is_err());
        let narrow = sample([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 20, 0.0, 10.0);
        assert!(fit_curve_in(&narrow, (0.0, 30.0), 1.0, 1.0).is_err());
        assert!(fit_curve_in(&narrow, (0.0, 18.0), 1.0, 1.0).is_ok());
    }

    #[test]
    fn symmetric_s_curve_gives_equal_segments() {
        // f(u) = u^3 - 0.75 u  is odd, inflection at 0
        let curve = SpineCurve {
            coeffs: [0.0, -30.0, 0.0, 40.0, 0.0, 0.0],
            z_min: 0.0,
            z_max: 400.0,
            x_spacing: 0.5,
            z_spacing: 0.5,
            fit_rms: 0.0,
        };
        let segs = measure_spa(&curve, &SpaConfig::default());
        assert_eq!(segs.len(), 2);
        assert!((segs[0].degrees - segs[1].degrees).abs() < 0.1);
        assert!(segs[0].degrees > 1.0);
    }

    #[test]
    fn sliver_between_same_way_bends_is_absorbed() {
        // bends: -4.6, +0.0003, -31.8; the sliver is no inflection
        let t = [0.0, -4.6, -4.5997, -36.3997];
        let segs = build_segments(vec![0.0, 1.0, 2.0, 3.0], |b| t[b as usize], 1.0);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start, segs[0].end), (0.0, 3.0));
        assert!((segs[0].degrees - 36.3997).abs() < 1e-12);
    }

    #[test]
    fn merge_folds_flat_segments() {
        // bends: +10, -0.5, +15.5, -30
        let t = [0.0, 10.0, 9.5, 25.0, -5.0];
        let bounds = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let segs = build_segments(bounds.clone(), |b| t[b as usize], 1.0);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end), (0.0, 3.0));
        assert_eq!((segs[1].start, segs[1].end), (3.0, 4.0));
        assert!((segs[0].degrees - 25.0).abs() < 1e-12);
        assert!((segs[1].degrees - 30.0).abs() < 1e-12);
        assert_eq!(build_segments(bounds, |b| t[b as usize], 0.0).len(), 4);

        let t = [0.0, 0.4, -10.0];
        let segs = build_segments(vec![0.0, 1.0, 2.0], |b| t[b as usize], 1.0);
        assert_eq!(segs.len(), 1);
        assert!((segs[0].degrees - 10.0).abs() < 1e-12);
    }

    #[test]
    fn dwell_frames_toward_interior() {
        let mut poses: Vec<FramePose> = (0..10).map(|i| FramePose::translation([0.0, 0.0, i as f64])).collect();
        poses[0] = poses[2];
        poses[1] = poses[2];
        poses[9] = poses[7];
        poses[8] = poses[7];
        let d = dwell_frames(&poses, 0.01);
        assert_eq!(d, vec![true, true, false, false, false, false, false, false, true, true]);
    }

    #[test]
    fn outlier_loop_fits_at_most_twice() {
        let mut pts = sample([10.0, 5.0, -3.0, 1.0, 0.0, 0.0], 100, 0.0, 200.0);
        for p in pts.iter_mut().step_by(20) {
            p.x += 50.0;
        }
        let poses: Vec<FramePose> = (0..100).map(|i| FramePose::translation([0.0, 0.0, i as f64])).collect();
        let out = filter_points(&pts, &poses, 1.0, 1.0, &SpaConfig::default()).unwrap();
        assert_eq!(out.fits, 2);
        assert!(out.rejected_outliers >= 5);
        assert!(out.kept.iter().all(|p| p.source_frame % 20 != 0));
        assert!(out.curve.fit_rms < 1e-9);
    }
}
