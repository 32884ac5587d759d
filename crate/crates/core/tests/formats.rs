use proptest::prelude::*;
use sonospine::config::PipelineConfig;
use sonospine::formats::*;
use sonospine::image::GrayImage;
use sonospine::landmarks::{LandmarkSet, Point, Rejection};
use sonospine::model::{ShnConfig, ShnWeights};
use sonospine::phantom::{FrameLabel, SpinePhantom};
use sonospine::pose::FramePose;
use sonospine::recon::{GridSpec, VoxelGrid};
use sonospine::spa::{Segment, SpPoint};
use sonospine::train::EpochStats;
use sonospine_autograd::Tensor;

fn tiny_model() -> ShnConfig {
    ShnConfig { num_stacks: 2, feature_channels: 8, hourglass_depth: 2, num_landmarks: 5, input_size: 64, heatmap_size: 16, batch_norm: false }
}

#[test]
fn pgm_header_forms() {
    let img = decode_pgm(b"P5 # comment\n3\t2 #more\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
    assert_eq!((img.width(), img.height()), (3, 2));
    assert_eq!(img.pixels(), &[1, 2, 3, 4, 5, 6]);
    assert_eq!(encode_pgm(&img), b"P5\n3 2\n255\n\x01\x02\x03\x04\x05\x06");
}

#[test]
fn pgm_rejects_malformed() {
    for bad in [
        &b"P2\n1 1\n255\n\x00"[..],
        b"P5\n1 1\n65535\n\x00\x00",
        b"P5\n2 1\n255\n\x00",
        b"P5\n1 1\n255\n\x00\x00",
        b"P5\n0 1\n255\n",
        b"P51 1\n255\n\x00",
        b"P5\n99999999999 1\n255\n",
        b"P5\n1 1\n255",
    ] {
        assert!(decode_pgm(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
    }
}

proptest! {
    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let img = GrayImage::from_raw(w, h, data).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn pose_table_round_trip(raw in prop::collection::vec((prop::array::uniform3(-500.0f64..500.0), prop::array::uniform3(-1.0f64..1.0), -3.0f64..3.0), 0..20)) {
        let poses: Vec<FramePose> = raw.iter().map(|(t, axis, a)| FramePose::from_axis_angle(*t, [axis[0], axis[1], axis[2] + 2.0], *a)).collect();
        let bytes = encode_poses(&poses);
        let back = decode_poses(&bytes).unwrap();
        prop_assert_eq!(&back, &poses);
        prop_assert_eq!(encode_poses(&back), bytes);
    }

    #[test]
    fn landmark_table_round_trip(raw in prop::collection::vec((prop::array::uniform10(-1e3f64..1e3), 0u8..5), 0..20)) {
        let sets: Vec<LandmarkSet> = raw.iter().map(|(v, kind)| {
            let points = std::array::from_fn(|k| Point::new(v[2 * k], v[2 * k + 1]));
            match kind {
                0 => LandmarkSet::invalid(points, Rejection::OrderViolation),
                1 => LandmarkSet::invalid(points, Rejection::LaminaDistance),
                2 => LandmarkSet::invalid(points, Rejection::NoPeak),
                3 => LandmarkSet { points, valid: false, rejection: None },
                _ => LandmarkSet::truth(points),
            }
        }).collect();
        prop_assert_eq!(decode_landmarks(&encode_landmarks(&sets)).unwrap(), sets);
    }

    #[test]
    fn small_tables_round_trip(xs in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4, 0usize..5000), 0..30)) {
        let pts: Vec<SpPoint> = xs.iter().map(|&(x, z, f)| SpPoint { x, z, source_frame: f }).collect();
        prop_assert_eq!(decode_sp_points(&encode_sp_points(&pts)).unwrap(), pts);
        let segs: Vec<Segment> = xs.iter().map(|&(a, b, _)| Segment { start: a, end: b, degrees: a.abs() / 100.0 }).collect();
        prop_assert_eq!(decode_segments(&encode_segments(&segs)).unwrap(), segs);
        let log: Vec<EpochStats> = xs.iter().enumerate().map(|(i, &(a, _, n))| EpochStats { epoch: i + 1, lr: a.abs(), loss: a * a, steps: n }).collect();
        prop_assert_eq!(decode_loss_log(&encode_loss_log(&log)).unwrap(), log);
    }
}

#[test]
fn label_table_round_trip() {
    let labels: Vec<FrameLabel> = (0..4)
        .map(|i| FrameLabel {
            landmarks: LandmarkSet::truth(std::array::from_fn(|k| Point::new(100.0 * k as f64 + 0.1 * i as f64, 240.5))),
            on_vertebra: i % 2 == 0,
        })
        .collect();
    let bytes = encode_labels(&labels);
    assert!(bytes.starts_with(b"frame_index,on_vertebra,la0_x,la0_y,la1_x,la1_y,sp_x,sp_y,la2_x,la2_y,la3_x,la3_y\n0,true,0.0,240.5,"));
    assert_eq!(decode_labels(&bytes).unwrap(), labels);
}

#[test]
fn tables_reject_bad_rows() {
    assert!(decode_poses(b"frame_index,tx,ty,tz,qw,qx,qy,qz\n1,0,0,0,1,0,0,0\n").is_err());
    assert!(decode_poses(b"frame_index,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,2,0,0,0\n").is_err());
    assert!(decode_poses(b"frame,tx,ty,tz,qw,qx,qy,qz\n").is_err());
    let header = "frame_index,valid,reason,la0_x,la0_y,la1_x,la1_y,sp_x,sp_y,la2_x,la2_y,la3_x,la3_y\n";
    assert!(decode_landmarks(format!("{header}0,false,bogus,0,0,0,0,0,0,0,0,0,0\n").as_bytes()).is_err());
    assert!(decode_landmarks(format!("{header}0,true,no_peak,0,0,0,0,0,0,0,0,0,0\n").as_bytes()).is_err());
    assert!(decode_landmarks(format!("{header}0,true,,0,0,0,0,0,0,0,0,0\n").as_bytes()).is_err());
    assert_eq!(decode_metrics(b"metric,value\npck_total,0.5\n").unwrap(), vec![("pck_total".to_string(), 0.5)]);
}

#[test]
fn weights_round_trip_preserves_predictions() {
    let w = ShnWeights::build(&tiny_model(), 5).unwrap();
    let bytes = encode_weights(&w);
    assert_eq!(&bytes[..8], b"SONOSHN\0");
    let back = decode_weights(&bytes).unwrap();
    assert_eq!(back.config, w.config);
    assert_eq!(encode_weights(&back), bytes);
    let input = Tensor::new(&[1, 1, 64, 64], (0..4096).map(|i| ((i * 37) % 101) as f64 / 101.0).collect()).unwrap();
    let (a, b) = (w.predict(&input).unwrap(), back.predict(&input).unwrap());
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() <= 1e-5 * p.abs().max(1e-3), "{p} vs {q}");
        }
    }
}

#[test]
fn weights_reject_corruption() {
    let bytes = encode_weights(&ShnWeights::build(&tiny_model(), 5).unwrap());
    assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_weights(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_weights(&magic).is_err());
    let mut channels = bytes.clone();
    channels[16] = 16;
    assert!(decode_weights(&channels).is_err());
}

#[test]
fn volume_round_trip() {
    let spec = GridSpec { dims: [3, 2, 4], spacing: [0.5, 0.5, 0.25], origin: [-1.0, 2.0, 0.125] };
    let mut grid = VoxelGrid::empty(spec);
    for (i, v) in grid.intensity.iter_mut().enumerate() {
        *v = (i * 11) as u8;
    }
    grid.sp_label[5] = true;
    let bytes = encode_volume(&grid);
    let back = decode_volume(&bytes).unwrap();
    assert_eq!(back.spec, spec);
    assert_eq!(back.intensity, grid.intensity);
    assert_eq!(back.sp_label, grid.sp_label);
    let mut bad = bytes.clone();
    *bad.last_mut().unwrap() = 2;
    assert!(decode_volume(&bad).is_err());
    assert!(decode_volume(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn manifest_rejects_escaping_paths() {
    let good = "format = \"sonospine-scan\"\nversion = 1\nframe_count = 1\nwidth = 4\nheight = 3\npixel_spacing = [0.15, 0.125]\npose_file = \"poses.csv\"\nframe_files = [\"frames/0.pgm\"]\n";
    let m = decode_manifest(good.as_bytes()).unwrap();
    assert_eq!(decode_manifest(&encode_manifest(&m)).unwrap(), m);
    for (from, to) in [("frames/0.pgm", "../0.pgm"), ("frames/0.pgm", "/etc/passwd"), ("frame_count = 1", "frame_count = 2"), ("version = 1", "version = 9")] {
        assert!(decode_manifest(good.replace(from, to).as_bytes()).is_err(), "{to}");
    }
    assert!(decode_manifest(format!("{good}extra = 1\n").as_bytes()).is_err());
}

#[test]
fn archive_write_read_write_is_byte_identical() {
    let phantom = SpinePhantom { lateral_offset: vec![0.0, 5.0], ..SpinePhantom::default() };
    let scan = phantom.render_scan(12, 2, 9).unwrap();
    let archive = ScanArchive::from_scan(&scan);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    archive.write(a.path()).unwrap();
    let back = ScanArchive::read(a.path()).unwrap();
    assert_eq!(back, archive);
    back.write(b.path()).unwrap();
    let files = |root: &std::path::Path| {
        let mut out = Vec::new();
        for dir in [root.to_path_buf(), root.join("frames")] {
            for e in std::fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    };
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(files(a.path()).len(), 12 + 3);
}

#[test]
fn archive_detects_missing_frames() {
    let scan = SpinePhantom::default().render_scan(10, 0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ScanArchive::from_scan(&scan).write(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("frames/00003.pgm")).unwrap();
    assert!(ScanArchive::read(dir.path()).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = PipelineConfig::default();
    let text = cfg.to_toml();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    let mut other = cfg.clone();
    other.recon.slab_mm = Some([18.0, 35.5]);
    other.train.single_phase(60, 1e-3);
    other.seed = u64::MAX >> 1;
    assert_eq!(PipelineConfig::from_toml(&other.to_toml()).unwrap(), other);
    assert_eq!(PipelineConfig::from_toml("seed = 4\n[scan]\nframe_count = 900\n").unwrap().scan.frame_count, 900);
    assert!(PipelineConfig::from_toml("[scan]\nframe_count = 800\n").is_err());
    assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
}

#[test]
fn fuzz_seeds_decode() {
    let corpus = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let seed = |target: &str, name: &str| std::fs::read(corpus.join(target).join(format!("seed_{name}"))).unwrap();
    let decoders: [(&str, fn(&[u8]) -> bool); 11] = [
        ("pgm", |b| decode_pgm(b).is_ok()),
        ("poses", |b| decode_poses(b).is_ok()),
        ("labels", |b| decode_labels(b).is_ok()),
        ("landmarks", |b| decode_landmarks(b).is_ok()),
        ("sp_points", |b| decode_sp_points(b).is_ok()),
        ("segments", |b| decode_segments(b).is_ok()),
        ("loss_log", |b| decode_loss_log(b).is_ok()),
        ("metrics", |b| decode_metrics(b).is_ok()),
        ("manifest", |b| decode_manifest(b).is_ok()),
        ("weights", |b| decode_weights(b).is_ok()),
        ("volume", |b| decode_volume(b).is_ok()),
    ];
    for (target, decodes) in decoders {
        assert!(decodes(&seed(target, "valid")), "{target}");
    }
    assert!(decode_pgm(&seed("pgm", "comment")).is_ok());
    for name in ["default", "partial", "modified"] {
        PipelineConfig::from_toml(std::str::from_utf8(&seed("config", name)).unwrap()).unwrap();
    }
    assert!(PipelineConfig::from_toml(std::str::from_utf8(&seed("config", "unknown_key")).unwrap()).is_err());
}
