//! Point (`.rad`) and label (`.lbl`) files.
//!
//! A point file is a sequence of little-endian `f32` records with six fields
//! in the order `x y z rcs v_r v`. A label file holds one box per line:
//! `class cx cy cz l w h yaw`; blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mvfan_core::{Box3D, ClassId, RadarFrame, RadarPoint};

use crate::error::{Error, Result};

pub const POINT_EXT: &str = "rad";
pub const LABEL_EXT: &str = "lbl";
pub const FIELDS: usize = 6;
pub const RECORD_BYTES: usize = FIELDS * 4;

pub fn encode_points(points: &[RadarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.rcs, p.v_r, p.v] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes point records. A trailing partial record is a format error at
/// its byte offset; a non-finite field is a validation error naming the
/// point.
pub fn decode_points(bytes: &[u8], path: &Path) -> Result<Vec<RadarPoint>> {
    if bytes.len() % RECORD_BYTES != 0 {
        let offset = (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64;
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset,
            detail: format!("truncated record ({} of {RECORD_BYTES} bytes)", bytes.len() % RECORD_BYTES),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (n, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let p = RadarPoint {
            x: f(0),
            y: f(1),
            z: f(2),
            rcs: f(3),
            v_r: f(4),
            v: f(5),
        };
        if !p.is_finite() {
            return Err(Error::Validation(format!("{}: point {n} has a non-finite field", path.display())));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn read_points(path: &Path) -> Result<Vec<RadarPoint>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_points(&bytes, path)
}

pub fn write_points(path: &Path, points: &[RadarPoint]) -> Result<()> {
    fs::write(path, encode_points(points)).map_err(|e| Error::io(path, e))
}

/// One line per box with shortest round-trip decimal formatting.
pub fn format_labels(boxes: &[Box3D]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{} {} {} {} {} {} {} {}", b.class_id, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw);
    }
    s
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Box3D>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let class: ClassId = fields[0].parse().map_err(|_| err(format!("unknown class `{}`", fields[0])))?;
        let mut v = [0.0; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
        }
        let b = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], class).map_err(|e| err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn read_labels(path: &Path) -> Result<Vec<Box3D>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels(path: &Path, boxes: &[Box3D]) -> Result<()> {
    fs::write(path, format_labels(boxes)).map_err(|e| Error::io(path, e))
}

/// Label file sitting next to a point file.
pub fn sidecar_label(points: &Path) -> PathBuf {
    points.with_extension(LABEL_EXT)
}

/// Reads a point file and its label sidecar. The frame id is the file stem.
pub fn load_frame(path: &Path) -> Result<RadarFrame> {
    load_frame_from(path, &sidecar_label(path))
}

pub fn load_frame_from(points: &Path, labels: &Path) -> Result<RadarFrame> {
    let id = points
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("{}: no usable file stem", points.display())))?;
    Ok(RadarFrame::new(id, read_points(points)?, read_labels(labels)?))
}

/// Writes `<dir>/<frame_id>.rad` and its sidecar; returns the point path.
pub fn write_frame(dir: &Path, frame: &RadarFrame) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(format!("{}.{POINT_EXT}", frame.frame_id));
    write_points(&p, &frame.points)?;
    write_labels(&sidecar_label(&p), &frame.boxes)?;
    Ok(p)
}

/// Rounds every point field to `f32`, the on-disk precision.
pub fn quantize(frame: &RadarFrame) -> RadarFrame {
    let mut f = frame.clone();
    for p in &mut f.points {
        for v in [&mut p.x, &mut p.y, &mut p.z, &mut p.v, &mut p.v_r, &mut p.rcs] {
            *v = *v as f32 as f64;
        }
    }
    f
}
