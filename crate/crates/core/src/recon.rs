//! Freehand volume reconstruction by voxel nearest-neighbour filling, hole
//! filling, and coronal slab projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::landmarks::ProcessedFrame;
use crate::pose::FramePose;
use crate::spa::SpPoint;
use crate::{Error, Result};

/// Axis-aligned voxel lattice. Voxel `i` along an axis covers
/// `[origin + i * spacing, origin + (i + 1) * spacing)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// `(nx, ny, nz)`
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear(&self, [x, y, z]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.spacing[a])
    }

    /// The voxel enclosing a world point, if inside the grid.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.spacing[a]).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Max,
    Mean,
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Projection::Max),
            "mean" => Ok(Projection::Mean),
            other => Err(Error::parse("projection", format!("expected max or mean, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub voxel_mm: f64,
    pub hole_radius: usize,
    pub projection: Projection,
    /// World depth range `[y_min, y_max]` in mm; the whole grid when absent.
    pub slab_mm: Option<[f64; 2]>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { voxel_mm: 0.5, hole_radius: 1, projection: Projection::Max, slab_mm: None }
    }
}

/// The pixel currently owning a voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    /// Squared distance from the pixel's world position to the voxel centre, mm².
    pub distance2: f64,
    pub frame: usize,
    /// Row-major pixel index within the frame.
    pub pixel: usize,
}

impl Contributor {
    pub fn distance(&self) -> f64 {
        self.distance2.sqrt()
    }

    fn beats(&self, other: &Contributor) -> bool {
        (self.distance2, self.frame, self.pixel) < (other.distance2, other.frame, other.pixel)
    }
}

const EMPTY: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub intensity: Vec<u8>,
    pub sp_label: Vec<bool>,
    slots: Vec<u32>,
    contributors: Vec<Contributor>,
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.len();
        Self { spec, intensity: vec![0; n], sp_label: vec![false; n], slots: vec![EMPTY; n], contributors: Vec::new() }
    }

    pub fn contributor(&self, voxel: usize) -> Option<&Contributor> {
        match self.slots[voxel] {
            EMPTY => None,
            s => Some(&self.contributors[s as usize]),
        }
    }

    pub fn filled_count(&self) -> usize {
        self.contributors.len()
    }

    pub fn at(&self, idx: [usize; 3]) -> u8 {
        self.intensity[self.spec.linear(idx)]
    }

    fn offer(&mut self, voxel: usize, candidate: Contributor, value: u8, sp: bool) {
        match self.slots[voxel] {
            EMPTY => {
                self.slots[voxel] = self.contributors.len() as u32;
                self.contributors.push(candidate);
            }
            s => {
                let current = &mut self.contributors[s as usize];
                if !candidate.beats(current) {
                    return;
                }
                *current = candidate;
            }
        }
        self.intensity[voxel] = value;
        self.sp_label[voxel] = sp;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridChoice {
    /// Fit the grid to every frame's corners at this isotropic spacing.
    Auto { voxel_mm: f64 },
    Explicit(GridSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FillReport {
    pub frames: usize,
    pub pixels_binned: usize,
    pub pixels_outside: usize,
    /// Every pose is identical, so the volume is a single slice.
    pub degenerate_poses: bool,
}

/// Pixel `(c, r)` of a frame sits at `origin + c * ax + r * ay` in world mm.
struct PixelMap {
    origin: [f64; 3],
    ax: [f64; 3],
    ay: [f64; 3],
}

impl PixelMap {
    fn new(pose: &FramePose, spacing: [f64; 2]) -> Self {
        let m = pose.matrix();
        Self {
            origin: pose.translation,
            ax: std::array::from_fn(|i| m[i][0] * spacing[0]),
            ay: std::array::from_fn(|i| m[i][1] * spacing[1]),
        }
    }

    fn world(&self, c: usize, r: usize) -> [f64; 3] {
        let (c, r) = (c as f64, r as f64);
        std::array::from_fn(|i| self.origin[i] + c * self.ax[i] + r * self.ay[i])
    }
}

/// World position of a frame pixel under a pose.
pub fn pixel_to_world(pose: &FramePose, pixel_spacing: [f64; 2], column: f64, row: f64) -> [f64; 3] {
    pose.transform([column * pixel_spacing[0], row * pixel_spacing[1], 0.0])
}

fn auto_grid(frames: &[ProcessedFrame], poses: &[FramePose], pixel_spacing: [f64; 2], voxel_mm: f64) -> Result<GridSpec> {
    if !(voxel_mm > 0.0) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_mm}")));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (frame, pose) in frames.iter().zip(poses) {
        let (w, h) = (frame.frame.image.width(), frame.frame.image.height());
        let map = PixelMap::new(pose, pixel_spacing);
        for (c, r) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
            let p = map.world(c, r);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let origin: [f64; 3] = std::array::from_fn(|a| lo[a] - 0.5 * voxel_mm);
    let dims: [usize; 3] = std::array::from_fn(|a| ((hi[a] - lo[a]) / voxel_mm).ceil() as usize + 1);
    let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    match total {
        Some(n) if n < u32::MAX as usize => Ok(GridSpec { dims, spacing: [voxel_mm; 3], origin }),
        _ => Err(Error::invalid(format!("volume of {dims:?} voxels is too large"))),
    }
}

/// Bins every nonzero pixel into its enclosing voxel; the pixel nearest the
/// voxel centre wins, ties going to the lower frame index and then the lower
/// pixel index, so the result does not depend on processing order.
pub fn fill_vnn(frames: &[ProcessedFrame], poses: &[FramePose], pixel_spacing: [f64; 2], grid: GridChoice) -> Result<(VoxelGrid, FillReport)> {
    if frames.is_empty() {
        return Err(Error::invalid("reconstruction needs at least one frame"));
    }
    if frames.len() != poses.len() {
        return Err(Error::invalid(format!("{} frames but {} poses", frames.len(), poses.len())));
    }
    for f in frames {
        let img = &f.frame.image;
        if f.sp_mask.len() != img.width() * img.height() {
            return Err(Error::invalid(format!("frame {} has a mask of the wrong size", f.frame.index)));
        }
    }
    let spec = match grid {
        GridChoice::Auto { voxel_mm } => auto_grid(frames, poses, pixel_spacing, voxel_mm)?,
        GridChoice::Explicit(spec) => spec,
    };
    let mut volume = VoxelGrid::empty(spec);
    let mut report = FillReport {
        frames: frames.len(),
        pixels_binned: 0,
        pixels_outside: 0,
        degenerate_poses: poses.len() > 1 && poses.iter().all(|p| p.same_as(&poses[0])),
    };

    struct Hit {
        voxel: usize,
        who: Contributor,
        value: u8,
        sp: bool,
    }
    const CHUNK: usize = 64;
    for (chunk_no, chunk) in frames.chunks(CHUNK).enumerate() {
        let per_frame: Vec<(Vec<Hit>, usize)> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, f)| {
                let frame = chunk_no * CHUNK + k;
                let map = PixelMap::new(&poses[frame], pixel_spacing);
                let img = &f.frame.image;
                let w = img.width();
                let mut hits = Vec::new();
                let mut outside = 0;
                for (pixel, &value) in img.pixels().iter().enumerate() {
                    if value == 0 {
                        continue;
                    }
                    let p = map.world(pixel % w, pixel / w);
                    let Some(idx) = spec.voxel_of(p) else {
                        outside += 1;
                        continue;
                    };
                    let c = spec.center(idx);
                    let distance2 = (0..3).map(|a| (p[a] - c[a]) * (p[a] - c[a])).sum();
                    hits.push(Hit {
                        voxel: spec.linear(idx),
                        who: Contributor { distance2, frame, pixel },
                        value,
                        sp: f.sp_mask[pixel],
                    });
                }
                (hits, outside)
            })
            .collect();
        for (hits, outside) in per_frame {
            report.pixels_outside += outside;
            report.pixels_binned += hits.len();
            for h in hits {
                volume.offer(h.voxel, h.who, h.value, h.sp);
            }
        }
    }
    Ok((volume, report))
}

/// Gives each empty voxel the intensity of the nearest filled voxel within a
/// Chebyshev `radius`, nearest by Euclidean index distance with ties to the
/// lowest `(z, y, x)`. Labels are not copied and filled voxels gain no
/// contributor.
pub fn fill_holes(grid: &VoxelGrid, radius: usize) -> VoxelGrid {
    let mut out = grid.clone();
    if radius == 0 {
        return out;
    }
    let spec = grid.spec;
    let [nx, ny, nz] = spec.dims;
    let r = radius as isize;
    let plane = nx * ny;
    out.intensity.par_chunks_mut(plane).enumerate().for_each(|(z, slice)| {
        for y in 0..ny {
            for x in 0..nx {
                let here = spec.linear([x, y, z]);
                if grid.slots[here] != EMPTY {
                    continue;
                }
                let mut best: Option<(isize, usize)> = None;
                for dz in -r..=r {
                    let zz = z as isize + dz;
                    if zz < 0 || zz >= nz as isize {
                        continue;
                    }
                    for dy in -r..=r {
                        let yy = y as isize + dy;
                        if yy < 0 || yy >= ny as isize {
                            continue;
                        }
                        for dx in -r..=r {
                            let xx = x as isize + dx;
                            if xx < 0 || xx >= nx as isize {
                                continue;
                            }
                            let there = spec.linear([xx as usize, yy as usize, zz as usize]);
                            if grid.slots[there] == EMPTY {
                                continue;
                            }
                            let key = (dx * dx + dy * dy + dz * dz, there);
                            if best.is_none_or(|b| key < b) {
                                best = Some(key);
                            }
                        }
                    }
                }
                if let Some((_, src)) = best {
                    slice[y * nx + x] = grid.intensity[src];
                }
            }
        }
    });
    out
}

/// Front view of the volume: `width = nx` columns, `height = nz` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CoronalImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Per-frame SP centroids in image pixels (column, row), sorted by frame.
    pub sp_points: Vec<SpPoint>,
    /// Pixel size along columns and rows, mm.
    pub spacing: [f64; 2],
}

/// Projects the voxels whose centres fall inside the depth slab onto the
/// `(x, z)` plane and collects per-frame SP label centroids.
pub fn project_coronal(grid: &VoxelGrid, slab_mm: Option<[f64; 2]>, mode: Projection) -> Result<CoronalImage> {
    let spec = grid.spec;
    let [nx, ny, nz] = spec.dims;
    let (y0, y1) = match slab_mm {
        None => (0, ny),
        Some([lo, hi]) => {
            let ys: Vec<usize> = (0..ny).filter(|&y| (lo..=hi).contains(&spec.center([0, y, 0])[1])).collect();
            match (ys.first(), ys.last()) {
                (Some(&a), Some(&b)) => (a, b + 1),
                _ => return Err(Error::invalid(format!("depth slab [{lo}, {hi}] mm misses the volume"))),
            }
        }
    };
    if y0 >= y1 || nx == 0 || nz == 0 {
        return Err(Error::invalid("empty projection slab"));
    }
    let mut pixels = vec![0u8; nx * nz];
    pixels.par_chunks_mut(nx).enumerate().for_each(|(z, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let column = (y0..y1).map(|y| grid.intensity[spec.linear([x, y, z])]);
            *out = match mode {
                Projection::Max => column.max().unwrap_or(0),
                Projection::Mean => {
                    let (sum, n) = column.filter(|&v| v > 0).fold((0u64, 0u64), |(s, n), v| (s + v as u64, n + 1));
                    if n == 0 {
                        0
                    } else {
                        ((sum as f64 / n as f64).round()) as u8
                    }
                }
            };
        }
    });

    let mut sums: std::collections::BTreeMap<usize, (f64, f64, usize)> = std::collections::BTreeMap::new();
    for z in 0..nz {
        for y in y0..y1 {
            for x in 0..nx {
                let i = spec.linear([x, y, z]);
                if !grid.sp_label[i] {
                    continue;
                }
                let frame = grid.contributor(i).expect("labeled voxels have a contributor").frame;
                let e = sums.entry(frame).or_insert((0.0, 0.0, 0));
                e.0 += x as f64;
                e.1 += z as f64;
                e.2 += 1;
            }
        }
    }
    let sp_points = sums
        .into_iter()
        .map(|(source_frame, (sx, sz, n))| SpPoint { x: sx / n as f64, z: sz / n as f64, source_frame })
        .collect();
    Ok(CoronalImage { width: nx, height: nz, pixels, sp_points, spacing: [spec.spacing[0], spec.spacing[2]] })
}
