//! Oriented boxes, point-in-box tests and rotated IoU.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::wrap_angle;
#[allow(unused_imports)]
use crate::math::Float;

/// Object classes carried by labels, anchors and detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Car,
    Pedestrian,
    Cyclist,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        ClassId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Car => "car",
            ClassId::Pedestrian => "pedestrian",
            ClassId::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ClassId::Car),
            "pedestrian" | "ped" => Ok(ClassId::Pedestrian),
            "cyclist" | "cyc" => Ok(ClassId::Cyclist),
            other => Err(Error::Validation(alloc::format!("unknown class `{other}`"))),
        }
    }
}

/// Oriented 3D box in the radar/ego frame. `l` runs along the heading `yaw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class_id: ClassId,
}

impl Box3D {
    /// Validating constructor: sizes must be positive and finite; yaw is
    /// wrapped into (-pi, pi].
    #[allow(clippy::too_many_arguments)]
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64, class_id: ClassId) -> Result<Self> {
        let vals = [cx, cy, cz, l, w, h, yaw];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite box field".into()));
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::Validation(alloc::format!("box sizes must be positive: l={l} w={w} h={h}")));
        }
        Ok(Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: wrap_angle(yaw),
            class_id,
        })
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.cx + c * u - s * v, self.cy + s * u + c * v])
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.h / 2.0
    }

    /// Coordinates of `p` in the box frame (origin at the center, u along
    /// the heading).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.cz]
    }

    /// Inclusive containment test.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let [u, v, z] = self.to_local(p);
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0 && z.abs() <= self.h / 2.0
    }

    /// Radius of the BEV circumcircle.
    pub fn bev_radius(&self) -> f64 {
        0.5 * (self.l * self.l + self.w * self.w).sqrt()
    }
}

/// IoU flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouMode {
    Bev,
    ThreeD,
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = core::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let sp = cross(a, b, p);
            let sq = cross(a, b, q);
            let p_in = sp >= 0.0;
            let q_in = sq >= 0.0;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let t = sp / (sp - sq);
                output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    output
}

/// BEV intersection area of two oriented rectangles.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let r = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > r * r {
        return 0.0;
    }
    let pa = a.bev_corners();
    let pb = b.bev_corners();
    polygon_area(&clip_convex(&pa, &pb))
}

/// Rotated IoU in BEV or full 3D. Degenerate boxes give 0.
pub fn rotated_iou(a: &Box3D, b: &Box3D, mode: IouMode) -> f64 {
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let iou = match mode {
        IouMode::Bev => {
            let union = a.bev_area() + b.bev_area() - inter;
            if union <= 0.0 {
                return 0.0;
            }
            inter / union
        }
        IouMode::ThreeD => {
            let zo = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
            let iv = inter * zo;
            let union = a.volume() + b.volume() - iv;
            if union <= 0.0 {
                return 0.0;
            }
            iv / union
        }
    };
    iou.clamp(0.0, 1.0)
}
