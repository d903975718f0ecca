//! Deterministic synthetic radar scenes with labeled boxes.
//!
//! Objects are moving boxes filled with returns whose Doppler follows the
//! object velocity projected on the line of sight and whose RCS sits above
//! the clutter level. Static decoys share object shapes but carry clutter
//! Doppler and RCS, so telling them apart needs the radar channels.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{RadarFrame, RadarPoint};
use crate::geometry::{Box3D, ClassId};
use crate::math::PI;
#[allow(unused_imports)]
use crate::math::Float;
use crate::projection::{GridSpec, View};

/// Nominal `(l, w, h)` per class.
pub const NOMINAL_SIZE: [[f64; 3]; 3] = [[3.9, 1.6, 1.56], [0.8, 0.6, 1.73], [1.76, 0.6, 1.73]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Inclusive object-count range.
    pub objects: [usize; 2],
    /// Relative class frequencies (car, pedestrian, cyclist).
    pub class_mix: [f64; 3],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub clutter: [usize; 2],
    pub decoys: [usize; 2],
    pub ego_speed: [f64; 2],
    /// Speed range per class, m/s.
    pub speed: [[f64; 2]; 3],
    /// Return count range per class.
    pub points_per_object: [[usize; 2]; 3],
    pub ground_z: f64,
    /// Clutter height above ground.
    pub clutter_height: [f64; 2],
    pub clutter_rcs_mean: f64,
    pub rcs_std: f64,
    /// RCS offset above clutter per class, dB.
    pub rcs_offset: [f64; 3],
    pub doppler_noise: f64,
    /// Relative size jitter of planted boxes.
    pub size_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            objects: [2, 5],
            class_mix: [0.5, 0.25, 0.25],
            x_range: [3.0, 40.0],
            y_range: [-15.0, 15.0],
            clutter: [60, 120],
            decoys: [1, 3],
            ego_speed: [0.0, 10.0],
            speed: [[3.0, 12.0], [0.8, 2.0], [2.0, 6.0]],
            points_per_object: [[12, 24], [5, 9], [6, 12]],
            ground_z: -1.6,
            clutter_height: [-0.2, 2.5],
            clutter_rcs_mean: -8.0,
            rcs_std: 2.5,
            rcs_offset: [14.0, 8.0, 10.0],
            doppler_noise: 0.1,
            size_jitter: 0.05,
        }
    }
}

fn ordered<T: PartialOrd + Copy>(r: [T; 2], what: &str) -> Result<()> {
    if r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: lower bound exceeds upper bound")))
    }
}

impl SynthConfig {
    /// Checks internal consistency and that every sampled box fits the VoD
    /// detection range.
    pub fn validate(&self) -> Result<()> {
        ordered(self.objects, "objects")?;
        ordered(self.clutter, "clutter")?;
        ordered(self.decoys, "decoys")?;
        ordered(self.x_range, "x_range")?;
        ordered(self.y_range, "y_range")?;
        ordered(self.ego_speed, "ego_speed")?;
        ordered(self.clutter_height, "clutter_height")?;
        for c in 0..3 {
            ordered(self.speed[c], "speed")?;
            ordered(self.points_per_object[c], "points_per_object")?;
            if self.points_per_object[c][0] < 5 {
                return Err(Error::Config("points_per_object must be at least 5".into()));
            }
        }
        if self.class_mix.iter().any(|w| !(*w >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class_mix needs non-negative weights with a positive sum".into()));
        }
        if !(self.rcs_std >= 0.0 && self.doppler_noise >= 0.0 && (0.0..0.5).contains(&self.size_jitter)) {
            return Err(Error::Config("noise levels out of range".into()));
        }
        let bev = GridSpec::vod(View::Bev);
        let margin = 2.5;
        let (x, y) = (bev.axes[0], bev.axes[1]);
        if self.x_range[0] - margin < x.min || self.x_range[1] + margin > x.max || self.y_range[0] - margin < y.min || self.y_range[1] + margin > y.max {
            return Err(Error::Config(format!(
                "object range x {:?}, y {:?} leaves the detection range (margin {margin} m)",
                self.x_range, self.y_range
            )));
        }
        let z = bev.axes[2];
        if self.ground_z + self.clutter_height[0] < z.min || self.ground_z + self.clutter_height[1].max(2.0) > z.max {
            return Err(Error::Config("heights leave the detection range".into()));
        }
        Ok(())
    }
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn range(&mut self, r: [f64; 2]) -> f64 {
        if r[1] > r[0] {
            self.rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    }

    fn count(&mut self, r: [usize; 2]) -> usize {
        self.rng.random_range(r[0]..=r[1])
    }

    fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        Normal::new(mean, std).expect("finite std").sample(&mut self.rng)
    }

    fn class(&mut self, mix: &[f64; 3]) -> ClassId {
        let total: f64 = mix.iter().sum();
        let mut u = self.rng.random_range(0.0..total);
        for (i, w) in mix.iter().enumerate() {
            if u < *w {
                return ClassId::from_index(i).expect("three classes");
            }
            u -= w;
        }
        ClassId::Cyclist
    }
}

fn unit(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-9);
    [p[0] / n, p[1] / n, p[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn point_in_box(s: &mut Sampler, b: &Box3D) -> [f64; 3] {
    let shrink = 0.9;
    let lx = s.range([-0.5, 0.5]) * b.l * shrink;
    let ly = s.range([-0.5, 0.5]) * b.w * shrink;
    let lz = s.range([-0.5, 0.5]) * b.h * shrink;
    let (sn, cs) = b.yaw.sin_cos();
    [b.cx + cs * lx - sn * ly, b.cy + sn * lx + cs * ly, b.cz + lz]
}

/// Generates one scene. Identical `(seed, config)` pairs give identical
/// frames.
pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<RadarFrame> {
    cfg.validate()?;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let ego = s.range(cfg.ego_speed);
    let ego_vel = [ego, 0.0, 0.0];
    let mut placed: Vec<Box3D> = Vec::new();
    let mut boxes = Vec::new();
    let mut points = Vec::new();

    let place = |s: &mut Sampler, class: ClassId, placed: &mut Vec<Box3D>| -> Option<Box3D> {
        let [l, w, h] = NOMINAL_SIZE[class.index()];
        let j = cfg.size_jitter;
        for _ in 0..100 {
            let (l, w, h) = (l * (1.0 + s.range([-j, j])), w * (1.0 + s.range([-j, j])), h * (1.0 + s.range([-j, j])));
            let b = Box3D::new(
                s.range(cfg.x_range),
                s.range(cfg.y_range),
                cfg.ground_z + h / 2.0,
                l,
                w,
                h,
                s.range([-PI, PI]),
                class,
            )
            .ok()?;
            let clear = placed.iter().all(|o| {
                let (dx, dy) = (o.cx - b.cx, o.cy - b.cy);
                (dx * dx + dy * dy).sqrt() > o.bev_radius() + b.bev_radius() + 0.5
            });
            if clear {
                placed.push(b);
                return Some(b);
            }
        }
        None
    };

    let n_obj = s.count(cfg.objects);
    for _ in 0..n_obj {
        let class = s.class(&cfg.class_mix);
        let Some(b) = place(&mut s, class, &mut placed) else { continue };
        let ci = class.index();
        let speed = s.range(cfg.speed[ci]);
        let vel = [speed * b.yaw.cos(), speed * b.yaw.sin(), 0.0];
        let rel = [vel[0] - ego_vel[0], vel[1] - ego_vel[1], 0.0];
        let n = s.count(cfg.points_per_object[ci]);
        for _ in 0..n {
            let p = point_in_box(&mut s, &b);
            let u = unit(p);
            points.push(RadarPoint {
                x: p[0],
                y: p[1],
                z: p[2],
                v: dot(vel, u) + s.normal(0.0, cfg.doppler_noise),
                v_r: dot(rel, u) + s.normal(0.0, cfg.doppler_noise),
                rcs: s.normal(cfg.clutter_rcs_mean + cfg.rcs_offset[ci], cfg.rcs_std),
            });
        }
        boxes.push(b);
    }

    let static_point = |s: &mut Sampler, p: [f64; 3]| {
        let u = unit(p);
        RadarPoint {
            x: p[0],
            y: p[1],
            z: p[2],
            v: s.normal(0.0, cfg.doppler_noise),
            v_r: -dot(ego_vel, u) + s.normal(0.0, cfg.doppler_noise),
            rcs: s.normal(cfg.clutter_rcs_mean, cfg.rcs_std),
        }
    };

    let n_decoy = s.count(cfg.decoys);
    for _ in 0..n_decoy {
        let class = s.class(&cfg.class_mix);
        let Some(b) = place(&mut s, class, &mut placed) else { continue };
        let n = s.count(cfg.points_per_object[class.index()]);
        for _ in 0..n {
            let p = point_in_box(&mut s, &b);
            points.push(static_point(&mut s, p));
        }
    }

    let n_clutter = s.count(cfg.clutter);
    let mut made = 0;
    let mut attempts = 0;
    while made < n_clutter && attempts < n_clutter * 20 {
        attempts += 1;
        let p = [
            s.range(cfg.x_range),
            s.range(cfg.y_range),
            cfg.ground_z + s.range(cfg.clutter_height),
        ];
        if boxes.iter().any(|b| b.contains(p)) {
            continue;
        }
        points.push(static_point(&mut s, p));
        made += 1;
    }

    // Emission order would otherwise reveal which points are objects.
    points.shuffle(&mut s.rng);
    let mut frame = RadarFrame::new(format!("synth_{seed:08}"), points, boxes);
    frame.ego_speed = ego;
    Ok(frame)
}

/// `count` scenes with consecutive seeds starting at `base_seed`.
pub fn synth_dataset(base_seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<RadarFrame>> {
    (0..count as u64).map(|i| synth_scene(base_seed.wrapping_add(i), cfg)).collect()
}
