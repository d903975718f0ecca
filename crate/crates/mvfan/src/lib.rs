//! File formats, experiment configuration, training, evaluation and the
//! command line for the MVFAN radar detector.

pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod kitti;
pub mod plot;
pub mod predictions;
pub mod train;

pub use error::{Error, Result};
