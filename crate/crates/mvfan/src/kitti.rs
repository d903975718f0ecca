//! Import of KITTI-style labels and raw point records.
//!
//! A KITTI label line carries the class and, in its last seven fields,
//! `h w l x y z ry` in the camera frame: `(x, y, z)` is the bottom center of
//! the box, y points down and `ry` rotates about the camera y axis. A 4×4
//! calibration matrix (16 numbers, row-major) maps homogeneous camera
//! coordinates into the radar frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mvfan_core::{wrap_angle, Box3D, ClassId, RadarPoint};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major homogeneous transform from camera to radar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration(pub [[f64; 4]; 4]);

impl Calibration {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Calibration(m)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let vals: Vec<f64> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    detail: format!("bad number `{s}`"),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 16 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: format!("expected 16 numbers, found {}", vals.len()),
            });
        }
        let mut m = [[0.0; 4]; 4];
        for (k, v) in vals.into_iter().enumerate() {
            m[k / 4][k % 4] = v;
        }
        if !m.iter().flatten().all(|v| v.is_finite()) || m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation(format!("{}: last row must be 0 0 0 1", path.display())));
        }
        Ok(Calibration(m))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
        }
        out
    }

    pub fn direction(&self, d: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2];
        }
        out
    }
}

/// Label class names mapped to detector classes; unmapped names (e.g.
/// `DontCare`) are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap(pub BTreeMap<String, ClassId>);

impl Default for ClassMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("Car".into(), ClassId::Car);
        m.insert("Pedestrian".into(), ClassId::Pedestrian);
        m.insert("Cyclist".into(), ClassId::Cyclist);
        ClassMap(m)
    }
}

/// One box from a KITTI label line in the radar frame, or `None` for an
/// unmapped class.
pub fn convert_label_line(line: &str, calib: &Calibration, classes: &ClassMap) -> std::result::Result<Option<Box3D>, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 8 {
        return Err(format!("expected a class and at least 7 numbers, found {} fields", f.len()));
    }
    let Some(&class) = classes.0.get(f[0]) else {
        return Ok(None);
    };
    let tail = &f[f.len() - 7..];
    let mut v = [0.0; 7];
    for (k, s) in tail.iter().enumerate() {
        v[k] = s.parse().map_err(|_| format!("bad number `{s}`"))?;
    }
    let [h, w, l, x, y, z, ry] = v;
    // Bottom center to geometric center: camera y points down.
    let center = calib.point([x, y - h / 2.0, z]);
    let heading = calib.direction([ry.cos(), 0.0, -ry.sin()]);
    let yaw = wrap_angle(heading[1].atan2(heading[0]));
    Box3D::new(center[0], center[1], center[2], l, w, h, yaw, class)
        .map(Some)
        .map_err(|e| e.to_string())
}

pub fn convert_labels(text: &str, path: &Path, calib: &Calibration, classes: &ClassMap) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match convert_label_line(line, calib, classes) {
            Ok(Some(b)) => out.push(b),
            Ok(None) => {}
            Err(detail) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail,
                })
            }
        }
    }
    Ok(out)
}

/// Where each radar field sits inside a raw `f32` record. Which source
/// column is absolute and which is ego-relative Doppler is a property of
/// the dataset, so both are explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    /// Floats per record.
    pub stride: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub rcs: usize,
    pub v_r: usize,
    pub v: usize,
}

impl FieldMap {
    /// VoD radar bins: `x y z rcs v_r v_r_compensated time`.
    pub fn vod() -> Self {
        FieldMap {
            stride: 7,
            x: 0,
            y: 1,
            z: 2,
            rcs: 3,
            v_r: 4,
            v: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let idx = [self.x, self.y, self.z, self.rcs, self.v_r, self.v];
        if idx.iter().any(|&i| i >= self.stride) {
            return Err(Error::Config(format!("field index beyond record stride {}", self.stride)));
        }
        Ok(())
    }
}

/// Decodes raw little-endian `f32` records through a field map. Points
/// are assumed to already be in the radar frame.
pub fn convert_points(bytes: &[u8], path: &Path, map: &FieldMap) -> Result<Vec<RadarPoint>> {
    map.validate()?;
    let rec = map.stride * 4;
    if bytes.len() % rec != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() / rec * rec) as u64,
            detail: format!("truncated record of {} bytes", bytes.len() % rec),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / rec);
    for (n, r) in bytes.chunks_exact(rec).enumerate() {
        let f = |i: usize| f32::from_le_bytes(r[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let p = RadarPoint {
            x: f(map.x),
            y: f(map.y),
            z: f(map.z),
            rcs: f(map.rcs),
            v_r: f(map.v_r),
            v: f(map.v),
        };
        if !p.is_finite() {
            return Err(Error::Validation(format!("{}: point {n} has a non-finite field", path.display())));
        }
        out.push(p);
    }
    Ok(out)
}
