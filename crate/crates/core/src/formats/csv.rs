//! Comma-separated tables. Every table has a fixed header, period decimals
//! in shortest round-trip form and `\n` row terminators.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::landmarks::{LandmarkSet, Point, Rejection};
use crate::phantom::FrameLabel;
use crate::pose::FramePose;
use crate::spa::{Segment, SpPoint};
use crate::train::EpochStats;
use crate::{Error, Result};

const POINT_COLUMNS: [&str; 10] =
    ["la0_x", "la0_y", "la1_x", "la1_y", "sp_x", "sp_y", "la2_x", "la2_y", "la3_x", "la3_y"];

fn write_table<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.serialize(row).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

fn read_table<T: DeserializeOwned>(what: &'static str, header: &[&str], bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let found = r.headers().map_err(|e| Error::parse(what, e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::parse(what, format!("expected header {}", header.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(what, format!("row {}: {e}", i + 1))))
        .collect()
}

fn check_index(what: &'static str, row: usize, index: usize) -> Result<()> {
    if row != index {
        return Err(Error::parse(what, format!("row {index} has frame_index {row}")));
    }
    Ok(())
}

fn flatten(points: &[Point; 5]) -> [f64; 10] {
    let mut out = [0.0; 10];
    for (k, p) in points.iter().enumerate() {
        out[2 * k] = p.x;
        out[2 * k + 1] = p.y;
    }
    out
}

fn unflatten(v: [f64; 10]) -> [Point; 5] {
    std::array::from_fn(|k| Point::new(v[2 * k], v[2 * k + 1]))
}

#[derive(Serialize, Deserialize)]
struct PoseRow {
    frame_index: usize,
    tx: f64,
    ty: f64,
    tz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

const POSE_HEADER: [&str; 8] = ["frame_index", "tx", "ty", "tz", "qw", "qx", "qy", "qz"];

pub fn encode_poses(poses: &[FramePose]) -> Vec<u8> {
    write_table(
        &POSE_HEADER,
        poses.iter().enumerate().map(|(i, p)| {
            let ([tx, ty, tz], [qw, qx, qy, qz]) = (p.translation, p.rotation);
            PoseRow { frame_index: i, tx, ty, tz, qw, qx, qy, qz }
        }),
    )
}

pub fn decode_poses(bytes: &[u8]) -> Result<Vec<FramePose>> {
    let rows: Vec<PoseRow> = read_table("poses", &POSE_HEADER, bytes)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            check_index("poses", r.frame_index, i)?;
            FramePose::new([r.tx, r.ty, r.tz], [r.qw, r.qx, r.qy, r.qz])
        })
        .collect()
}

macro_rules! point_row {
    ($name:ident { $($field:ident: $ty:ty),* }) => {
        #[derive(Serialize, Deserialize)]
        struct $name {
            $($field: $ty,)*
            la0_x: f64,
            la0_y: f64,
            la1_x: f64,
            la1_y: f64,
            sp_x: f64,
            sp_y: f64,
            la2_x: f64,
            la2_y: f64,
            la3_x: f64,
            la3_y: f64,
        }

        impl $name {
            fn new($($field: $ty,)* p: &[Point; 5]) -> Self {
                let [la0_x, la0_y, la1_x, la1_y, sp_x, sp_y, la2_x, la2_y, la3_x, la3_y] = flatten(p);
                Self { $($field,)* la0_x, la0_y, la1_x, la1_y, sp_x, sp_y, la2_x, la2_y, la3_x, la3_y }
            }

            fn points(&self) -> [Point; 5] {
                unflatten([
                    self.la0_x, self.la0_y, self.la1_x, self.la1_y, self.sp_x, self.sp_y,
                    self.la2_x, self.la2_y, self.la3_x, self.la3_y,
                ])
            }
        }
    };
}

point_row!(LabelRow { frame_index: usize, on_vertebra: bool });
point_row!(LandmarkRow { frame_index: usize, valid: bool, reason: String });

fn header_with(prefix: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().copied().chain(POINT_COLUMNS).collect()
}

pub fn encode_labels(labels: &[FrameLabel]) -> Vec<u8> {
    let header = header_with(&["frame_index", "on_vertebra"]);
    write_table(&header, labels.iter().enumerate().map(|(i, l)| LabelRow::new(i, l.on_vertebra, &l.landmarks.points)))
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<FrameLabel>> {
    let header = header_with(&["frame_index", "on_vertebra"]);
    let rows: Vec<LabelRow> = read_table("labels", &header, bytes)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            check_index("labels", r.frame_index, i)?;
            Ok(FrameLabel { landmarks: LandmarkSet::truth(r.points()), on_vertebra: r.on_vertebra })
        })
        .collect()
}

pub fn encode_landmarks(sets: &[LandmarkSet]) -> Vec<u8> {
    let header = header_with(&["frame_index", "valid", "reason"]);
    write_table(
        &header,
        sets.iter().enumerate().map(|(i, s)| {
            let reason = s.rejection.map_or("", Rejection::as_str).to_string();
            LandmarkRow::new(i, s.valid, reason, &s.points)
        }),
    )
}

pub fn decode_landmarks(bytes: &[u8]) -> Result<Vec<LandmarkSet>> {
    let header = header_with(&["frame_index", "valid", "reason"]);
    let rows: Vec<LandmarkRow> = read_table("landmarks", &header, bytes)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            check_index("landmarks", r.frame_index, i)?;
            let points = r.points();
            match (r.valid, r.reason.as_str()) {
                (true, "") => Ok(LandmarkSet::truth(points)),
                (false, "") => Ok(LandmarkSet { points, valid: false, rejection: None }),
                (false, reason) => match Rejection::parse(reason) {
                    Some(rej) => Ok(LandmarkSet::invalid(points, rej)),
                    None => Err(Error::parse("landmarks", format!("row {i}: unknown reason {reason:?}"))),
                },
                (true, reason) => Err(Error::parse("landmarks", format!("row {i}: valid frame with reason {reason:?}"))),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SpPointRow {
    x_px: f64,
    z_px: f64,
    source_frame: usize,
}

const SP_HEADER: [&str; 3] = ["x_px", "z_px", "source_frame"];

pub fn encode_sp_points(points: &[SpPoint]) -> Vec<u8> {
    write_table(&SP_HEADER, points.iter().map(|p| SpPointRow { x_px: p.x, z_px: p.z, source_frame: p.source_frame }))
}

pub fn decode_sp_points(bytes: &[u8]) -> Result<Vec<SpPoint>> {
    let rows: Vec<SpPointRow> = read_table("sp points", &SP_HEADER, bytes)?;
    rows.into_iter()
        .map(|r| {
            if !(r.x_px.is_finite() && r.z_px.is_finite()) {
                return Err(Error::parse("sp points", "non-finite coordinate"));
            }
            Ok(SpPoint { x: r.x_px, z: r.z_px, source_frame: r.source_frame })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SegmentRow {
    segment: usize,
    start: f64,
    end: f64,
    degrees: f64,
}

const SEGMENT_HEADER: [&str; 4] = ["segment", "start", "end", "degrees"];

pub fn encode_segments(segments: &[Segment]) -> Vec<u8> {
    write_table(
        &SEGMENT_HEADER,
        segments.iter().enumerate().map(|(i, s)| SegmentRow { segment: i, start: s.start, end: s.end, degrees: s.degrees }),
    )
}

pub fn decode_segments(bytes: &[u8]) -> Result<Vec<Segment>> {
    let rows: Vec<SegmentRow> = read_table("segments", &SEGMENT_HEADER, bytes)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            check_index("segments", r.segment, i)?;
            Ok(Segment { start: r.start, end: r.end, degrees: r.degrees })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    epoch: usize,
    lr: f64,
    loss: f64,
    steps: usize,
}

const LOSS_HEADER: [&str; 4] = ["epoch", "lr", "loss", "steps"];

pub fn encode_loss_log(stats: &[EpochStats]) -> Vec<u8> {
    write_table(&LOSS_HEADER, stats.iter().map(|s| LossRow { epoch: s.epoch, lr: s.lr, loss: s.loss, steps: s.steps }))
}

pub fn decode_loss_log(bytes: &[u8]) -> Result<Vec<EpochStats>> {
    let rows: Vec<LossRow> = read_table("loss log", &LOSS_HEADER, bytes)?;
    Ok(rows.into_iter().map(|r| EpochStats { epoch: r.epoch, lr: r.lr, loss: r.loss, steps: r.steps }).collect())
}

/// Named scalar results, one per row.
pub fn encode_metrics(rows: &[(String, f64)]) -> Vec<u8> {
    write_table(&["metric", "value"], rows.iter())
}

pub fn decode_metrics(bytes: &[u8]) -> Result<Vec<(String, f64)>> {
    read_table("metrics", &["metric", "value"], bytes)
}
