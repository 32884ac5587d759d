use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonospine::image::{GrayImage, TransverseFrame};
use sonospine::landmarks::{decode_peak, LandmarkSet, Point, ProcessedFrame};
use sonospine::metrics::{icc_2_1, mad_sd, pck, pearson, PairedMeasurements};
use sonospine::model::{ShnConfig, ShnWeights};
use sonospine::pose::FramePose;
use sonospine::recon::{fill_holes, fill_vnn, GridChoice, GridSpec, VoxelGrid};
use sonospine::spa::{measure_points, SpPoint, SpaConfig};

fn conv(cout: usize, cin: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn residual(cin: usize, cout: usize, bn: bool) -> usize {
    let m = cout / 2;
    let mut n = conv(m, cin, 1) + conv(m, m, 3) + conv(cout, m, 1);
    if bn {
        n += 2 * (m + m + cout);
    }
    if cin != cout {
        n += conv(cout, cin, 1);
    }
    n
}

/// Closed form: stem, then per stack `3 depth + 1` residuals in the
/// hourglass, one after it, two 1x1 heads and, between stacks, two remaps.
fn expected_parameters(cfg: &ShnConfig) -> usize {
    let (c, k, bn) = (cfg.feature_channels, cfg.num_landmarks, cfg.batch_norm);
    let stem = conv(c / 4, 1, 7) + residual(c / 4, c / 2, bn) + residual(c / 2, c / 2, bn) + residual(c / 2, c, bn);
    let stack = (3 * cfg.hourglass_depth + 2) * residual(c, c, bn) + conv(c, c, 1) + conv(k, c, 1);
    let remap = conv(c, c, 1) + conv(c, k, 1);
    stem + cfg.num_stacks * stack + (cfg.num_stacks - 1) * remap
}

#[test]
fn parameter_count_matches_closed_form() {
    for (stacks, c, depth, bn) in [(1, 8, 1, false), (2, 8, 2, true), (4, 32, 4, false), (8, 256, 4, true)] {
        let cfg = ShnConfig {
            num_stacks: stacks,
            feature_channels: c,
            hourglass_depth: depth,
            batch_norm: bn,
            ..ShnConfig::default()
        };
        assert_eq!(cfg.parameter_count(), expected_parameters(&cfg), "{cfg:?}");
        if c <= 32 {
            let built = ShnWeights::build(&cfg, 1).unwrap();
            assert_eq!(built.parameter_count(), expected_parameters(&cfg));
        }
    }
}

fn random_grid(seed: u64) -> VoxelGrid {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let spec = GridSpec { dims: [9, 7, 8], spacing: [1.0; 3], origin: [0.0; 3] };
    let (w, h) = (5, 5);
    let frames: Vec<ProcessedFrame> = (0..3)
        .map(|index| ProcessedFrame {
            frame: TransverseFrame { index, image: GrayImage::from_raw(w, h, (0..w * h).map(|_| r.gen_range(1..=255)).collect()).unwrap() },
            sp_mask: vec![false; w * h],
        })
        .collect();
    let poses: Vec<FramePose> = (0..3)
        .map(|_| {
            let t = [r.gen_range(0.0..5.0), r.gen_range(0.0..4.0), r.gen_range(0.0..7.0)];
            FramePose::from_axis_angle(t, [r.gen_range(-1.0..1.0), 1.0, r.gen_range(-1.0..1.0)], r.gen_range(-2.0..2.0))
        })
        .collect();
    fill_vnn(&frames, &poses, [0.7, 0.9], GridChoice::Explicit(spec)).unwrap().0
}

#[test]
fn hole_filling_matches_exhaustive_search() {
    for seed in 0..8 {
        let grid = random_grid(seed);
        let spec = grid.spec;
        let filled: Vec<bool> = (0..spec.len()).map(|v| grid.contributor(v).is_some()).collect();
        assert!(filled.iter().any(|&f| f) && filled.iter().any(|&f| !f));
        for radius in [1, 2] {
            let out = fill_holes(&grid, radius);
            for v in 0..spec.len() {
                let want = if filled[v] {
                    grid.intensity[v]
                } else {
                    let here = spec.unlinear(v).map(|i| i as isize);
                    (0..spec.len())
                        .filter(|&u| filled[u])
                        .map(|u| (u, spec.unlinear(u).map(|i| i as isize)))
                        .filter(|(_, p)| (0..3).all(|a| (p[a] - here[a]).abs() <= radius as isize))
                        .map(|(u, p)| ((0..3).map(|a| (p[a] - here[a]).pow(2)).sum::<isize>(), u))
                        .min()
                        .map_or(0, |(_, u)| grid.intensity[u])
                };
                assert_eq!(out.intensity[v], want, "seed {seed} radius {radius} voxel {v}");
                assert_eq!(out.sp_label[v], grid.sp_label[v]);
            }
        }
    }
}

fn distinct_map(side: usize) -> impl Strategy<Value = Vec<f64>> {
    Just((0..side * side).map(|i| i as f64).collect::<Vec<f64>>()).prop_shuffle()
}

fn landmark_sets(n: usize) -> impl Strategy<Value = Vec<(LandmarkSet, LandmarkSet)>> {
    let point = (0.0..640.0f64, 0.0..480.0f64).prop_map(|(x, y)| Point::new(x, y));
    let set = (prop::array::uniform5(point), any::<bool>()).prop_map(|(p, valid)| LandmarkSet { valid, ..LandmarkSet::truth(p) });
    prop::collection::vec((set.clone(), set), 1..n)
}

fn curve_points(coeffs: [f64; 4], n: usize) -> (Vec<SpPoint>, Vec<FramePose>) {
    let points = (0..n)
        .map(|i| {
            let z = i as f64 * 2.0;
            let u = 2.0 * z / (2.0 * (n - 1) as f64) - 1.0;
            let x = coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c);
            SpPoint { x, z, source_frame: i }
        })
        .collect();
    let poses = (0..n).map(|i| FramePose::translation([0.0, 0.0, i as f64])).collect();
    (points, poses)
}

proptest! {
    #[test]
    fn decode_commutes_with_horizontal_flip(map in distinct_map(8)) {
        let side = 8;
        let flipped: Vec<f64> = (0..side * side).map(|i| map[(i / side) * side + side - 1 - i % side]).collect();
        let (x, y) = decode_peak(&map, side).unwrap();
        let (fx, fy) = decode_peak(&flipped, side).unwrap();
        prop_assert!((fx - (side as f64 - 1.0 - x)).abs() < 1e-12);
        prop_assert!((fy - y).abs() < 1e-12);
    }

    #[test]
    fn pck_ignores_frame_order(pairs in landmark_sets(12), rot in 0usize..12) {
        let (pred, truth): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let k = rot % pred.len();
        let (mut p2, mut t2) = (pred.clone(), truth.clone());
        p2.rotate_left(k);
        t2.rotate_left(k);
        let a = pck(&pred, &truth, 40.0).unwrap();
        let b = pck(&p2, &t2, 40.0).unwrap();
        prop_assert_eq!(a.per_landmark, b.per_landmark);
        prop_assert_eq!(a.all_landmarks, b.all_landmarks);
    }

    #[test]
    fn agreement_statistics_are_order_and_role_invariant(
        rows in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..20),
        scale in 0.1..10.0f64,
        shift in -100.0..100.0f64,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
        let fwd = PairedMeasurements::new(a.clone(), b.clone()).unwrap();
        let swapped = PairedMeasurements::new(b.clone(), a.clone()).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        let (ra, rb): (Vec<f64>, Vec<f64>) = rev.iter().copied().unzip();
        let reversed = PairedMeasurements::new(ra, rb).unwrap();

        let (m1, m2) = (mad_sd(&fwd), mad_sd(&swapped));
        prop_assert!((m1.mad - m2.mad).abs() < 1e-9 && (m1.sd - m2.sd).abs() < 1e-9);
        if let (Ok(r1), Ok(r2), Ok(r3)) = (pearson(&fwd), pearson(&swapped), pearson(&reversed)) {
            prop_assert!((r1 - r2).abs() < 1e-9 && (r1 - r3).abs() < 1e-9);
            let affine = PairedMeasurements::new(a.iter().map(|v| scale * v + shift).collect(), b.clone()).unwrap();
            prop_assert!((pearson(&affine).unwrap() - r1).abs() < 1e-9);
        }
        let ratings: Vec<Vec<f64>> = rows.iter().map(|&(x, y)| vec![x, y]).collect();
        let shuffled: Vec<Vec<f64>> = rev.iter().map(|&(x, y)| vec![x, y]).collect();
        if let (Ok(i1), Ok(i2)) = (icc_2_1(&ratings), icc_2_1(&shuffled)) {
            prop_assert!((i1 - i2).abs() < 1e-9);
        }
    }

    #[test]
    fn spa_is_invariant_to_shift_and_mirror(
        coeffs in prop::array::uniform4(-30.0..30.0f64),
        shift in -200.0..200.0f64,
    ) {
        let cfg = SpaConfig::default();
        let (points, poses) = curve_points(coeffs, 120);
        let (_, base) = measure_points(&points, &poses, 0.5, 0.5, &cfg).unwrap();
        let moved: Vec<SpPoint> = points.iter().map(|p| SpPoint { x: p.x + shift, ..*p }).collect();
        let mirrored: Vec<SpPoint> = points.iter().map(|p| SpPoint { x: -p.x, ..*p }).collect();
        let raised: Vec<SpPoint> = points.iter().map(|p| SpPoint { z: p.z + shift.abs(), ..*p }).collect();
        for variant in [moved, mirrored, raised] {
            let (_, r) = measure_points(&variant, &poses, 0.5, 0.5, &cfg).unwrap();
            prop_assert_eq!(r.segments.len(), base.segments.len());
            for (s, t) in r.segments.iter().zip(&base.segments) {
                prop_assert!((s.degrees - t.degrees).abs() < 1e-6, "{:?} vs {:?}", r.segments, base.segments);
                prop_assert!((s.start - t.start).abs() < 1e-6 && (s.end - t.end).abs() < 1e-6);
            }
        }
    }
}
