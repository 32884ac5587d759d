//! Keypoint and agreement statistics: PCK, MAD/SD, Pearson correlation and
//! the two-way random, absolute-agreement, single-measure ICC(2,1).

use std::fmt;

use crate::landmarks::{Landmark, LandmarkSet};
use crate::{Error, Result};

pub const DEFAULT_PCK_RADIUS: f64 = 15.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PckResult {
    /// Indexed like [`Landmark::ALL`].
    pub per_landmark: [f64; 5],
    /// Mean of the five per-landmark fractions.
    pub total: f64,
    /// Fraction of frames with all five landmarks inside the radius.
    pub all_landmarks: f64,
    pub radius: f64,
    pub n_frames: usize,
}

impl PckResult {
    pub fn get(&self, l: Landmark) -> f64 {
        self.per_landmark[l.index()]
    }
}

impl fmt::Display for PckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PCK@{}px over {} frames", self.radius, self.n_frames)?;
        write!(f, "{:>6}", "")?;
        for l in Landmark::HEATMAP_ORDER {
            write!(f, "{:>8}", l.name())?;
        }
        writeln!(f, "{:>8}{:>8}", "Total", "All5")?;
        write!(f, "{:>6}", "%")?;
        for l in Landmark::HEATMAP_ORDER {
            write!(f, "{:>8.1}", 100.0 * self.get(l))?;
        }
        writeln!(f, "{:>8.1}{:>8.1}", 100.0 * self.total, 100.0 * self.all_landmarks)
    }
}

/// Fraction of frames whose prediction lies within `radius` px of truth,
/// boundary inclusive. Invalid predictions count as misses.
pub fn pck(pred: &[LandmarkSet], truth: &[LandmarkSet], radius: f64) -> Result<PckResult> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!("{} predictions for {} truth frames", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("PCK over zero frames"));
    }
    let mut hits = [0usize; 5];
    let mut all = 0;
    for (p, t) in pred.iter().zip(truth) {
        let mut every = true;
        for (k, l) in Landmark::ALL.into_iter().enumerate() {
            let hit = p.valid && p.get(l).distance(&t.get(l)) <= radius;
            hits[k] += hit as usize;
            every &= hit;
        }
        all += every as usize;
    }
    let n = pred.len() as f64;
    let per_landmark = hits.map(|h| h as f64 / n);
    Ok(PckResult {
        per_landmark,
        total: per_landmark.iter().sum::<f64>() / 5.0,
        all_landmarks: all as f64 / n,
        radius,
        n_frames: pred.len(),
    })
}

/// Paired angle measurements from two raters or modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedMeasurements {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedMeasurements {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!("{} vs {} measurements", a.len(), b.len())));
        }
        if a.len() < 2 {
            return Err(Error::invalid("need at least two pairs"));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite measurement"));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn abs_diffs(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| (x - y).abs()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MadSd {
    pub mad: f64,
    /// Sample standard deviation of the absolute differences.
    pub sd: f64,
    pub max_diff: f64,
    diffs: Vec<f64>,
}

impl MadSd {
    pub fn count_over(&self, threshold: f64) -> usize {
        self.diffs.iter().filter(|&&d| d > threshold).count()
    }
}

pub fn mad_sd(pairs: &PairedMeasurements) -> MadSd {
    let diffs = pairs.abs_diffs();
    let n = diffs.len() as f64;
    let mad = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mad).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let max_diff = diffs.iter().copied().fold(0.0, f64::max);
    MadSd { mad, sd, max_diff, diffs }
}

pub fn pearson(pairs: &PairedMeasurements) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::invalid("correlation needs at least three pairs"));
    }
    let n = pairs.len() as f64;
    let ma = pairs.a.iter().sum::<f64>() / n;
    let mb = pairs.b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs.a.iter().zip(&pairs.b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant variable"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// ICC(2,1) of an `n targets x k raters` matrix given as rows.
pub fn icc_2_1(ratings: &[Vec<f64>]) -> Result<f64> {
    let n = ratings.len();
    if n < 2 {
        return Err(Error::invalid("ICC needs at least two targets"));
    }
    let k = ratings[0].len();
    if k < 2 {
        return Err(Error::invalid("ICC needs at least two raters"));
    }
    if ratings.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("ICC needs a complete, finite ratings matrix"));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = ratings.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_error = ss_total - ss_rows - ss_cols;
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_rows + (kf - 1.0) * ms_error + kf / nf * (ms_cols - ms_error);
    if denom == 0.0 {
        return Err(Error::invalid("ICC undefined when all ratings are equal"));
    }
    Ok((ms_rows - ms_error) / denom)
}
