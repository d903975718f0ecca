//! Training-time augmentation: reflection about the x axis and uniform
//! world rescaling. No translation or rotation is ever applied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RadarFrame;
use crate::math::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub flip_probability: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip_probability: 0.5,
            scale_min: 0.95,
            scale_max: 1.05,
        }
    }
}

impl AugmentSpec {
    /// Spec that leaves frames untouched.
    pub fn none() -> Self {
        AugmentSpec {
            flip_probability: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config("flip_probability must lie in [0, 1]".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config("need 0 < scale_min <= scale_max".into()));
        }
        Ok(())
    }
}

/// Applies a fixed reflection/scale pair.
pub fn apply(frame: &RadarFrame, flip: bool, scale: f64) -> RadarFrame {
    let mut out = frame.clone();
    let sy = if flip { -1.0 } else { 1.0 };
    for p in &mut out.points {
        p.x *= scale;
        p.y *= sy * scale;
        p.z *= scale;
        p.v *= scale;
        p.v_r *= scale;
    }
    for b in &mut out.boxes {
        b.cx *= scale;
        b.cy *= sy * scale;
        b.cz *= scale;
        b.l *= scale;
        b.w *= scale;
        b.h *= scale;
        if flip {
            b.yaw = wrap_angle(-b.yaw);
        }
    }
    out
}

/// Samples a flip and a scale from `spec` and applies them.
pub fn augment<R: Rng>(frame: &RadarFrame, spec: &AugmentSpec, rng: &mut R) -> RadarFrame {
    let flip = rng.random::<f64>() < spec.flip_probability;
    let scale = if spec.scale_max > spec.scale_min {
        rng.random_range(spec.scale_min..=spec.scale_max)
    } else {
        spec.scale_min
    };
    apply(frame, flip, scale)
}
