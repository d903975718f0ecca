//! Oracles and acceptance checks shared between test targets.
#![allow(dead_code)]

pub mod criteria;
pub mod grad;
pub mod oracles;
