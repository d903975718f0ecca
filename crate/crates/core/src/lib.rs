//! Allocation-only core of the MVFAN multi-view 4D radar detector.
//!
//! Everything in this crate is a pure function of its inputs: geometry,
//! pillarization, point-set operators, the learned network blocks with their
//! reverse-mode gradients, the detection head and the evaluation protocol.
//! File formats, configuration files and the command line live in the `mvfan`
//! crate.
//!
//! The crate builds without `std` (`--no-default-features`); `alloc` is
//! required.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod autograd;
pub mod backbone;
pub mod config;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod mvfe;
pub mod nn;
pub mod optim;
pub mod pointops;
pub mod projection;
pub mod sparse;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use frame::{RadarFrame, RadarPoint};
pub use geometry::{Box3D, ClassId};
pub use tensor::Matrix;

/// Float helpers that work with and without `std`.
pub(crate) mod math {
    pub use num_traits::Float;

    pub const PI: f64 = core::f64::consts::PI;
    pub const TAU: f64 = core::f64::consts::TAU;

    /// Wraps an angle into (-pi, pi].
    pub fn wrap_angle(a: f64) -> f64 {
        let mut r = a % TAU;
        if r <= -PI {
            r += TAU;
        } else if r > PI {
            r -= TAU;
        }
        r
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }
}

pub use math::wrap_angle;
