//! Predictions file: one detection per line,
//! `frame_id class score cx cy cz l w h yaw`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mvfan_core::head::Detection;
use mvfan_core::{Box3D, ClassId};

use crate::error::{Error, Result};

/// Detections grouped by frame id, in file order within a frame.
pub type Predictions = BTreeMap<String, Vec<Detection>>;

pub fn format_predictions(preds: &Predictions) -> String {
    let mut s = String::new();
    for (id, dets) in preds {
        if dets.is_empty() {
            let _ = writeln!(s, "{id}");
        }
        for d in dets {
            let b = &d.box3d;
            let _ = writeln!(
                s,
                "{id} {} {} {} {} {} {} {} {} {}",
                b.class_id, d.score, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw
            );
        }
    }
    s
}

/// Parses a predictions file. Frames with no detections can be declared
/// with a bare `frame_id` line.
pub fn parse_predictions(text: &str, path: &Path) -> Result<Predictions> {
    let mut out = Predictions::new();
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
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() == 1 {
            out.entry(f[0].to_string()).or_default();
            continue;
        }
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let class: ClassId = f[1].parse().map_err(|_| err(format!("unknown class `{}`", f[1])))?;
        let mut v = [0.0f64; 8];
        for (k, s) in f[2..].iter().enumerate() {
            v[k] = s.parse().map_err(|_| err(format!("bad number `{s}`")))?;
        }
        if !v[0].is_finite() {
            return Err(err("non-finite score".into()));
        }
        let box3d = Box3D::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7], class).map_err(|e| err(e.to_string()))?;
        out.entry(f[0].to_string()).or_default().push(Detection { box3d, score: v[0] });
    }
    Ok(out)
}

/// Writes every frame, listing empty frames as bare ids so re-reading
/// keeps the frame set.
pub fn write_predictions(path: &Path, preds: &Predictions) -> Result<()> {
    let mut s = String::new();
    for (id, dets) in preds {
        if dets.is_empty() {
            let _ = writeln!(s, "{id}");
        }
    }
    s.push_str(&format_predictions(preds));
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}
