//! Radar points and frames.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;

/// One radar return in the sensor/ego frame (x forward, y left, z up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Absolute (ego-compensated) Doppler velocity, m/s.
    pub v: f64,
    /// Doppler velocity relative to the ego vehicle, m/s.
    pub v_r: f64,
    /// Reflectivity, dBsm.
    pub rcs: f64,
}

impl RadarPoint {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.v, self.v_r, self.rcs]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One radar sweep with its ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarFrame {
    pub frame_id: String,
    pub points: Vec<RadarPoint>,
    pub boxes: Vec<Box3D>,
    /// Ego speed along +x, m/s. Only the synthetic generator uses it.
    pub ego_speed: f64,
}

impl RadarFrame {
    pub fn new(frame_id: impl Into<String>, points: Vec<RadarPoint>, boxes: Vec<Box3D>) -> Self {
        RadarFrame {
            frame_id: frame_id.into(),
            points,
            boxes,
            ego_speed: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(RadarPoint::xyz).collect()
    }

    /// Rejects non-finite point fields, naming the first offending point.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(alloc::format!(
                "frame `{}`: point {i} has a non-finite field",
                self.frame_id
            )));
        }
        Ok(())
    }
}
