//! Multimotion visual odometry.
//!
//! Segments sparse stereo feature tracklets into rigidly moving bodies and
//! estimates the SE(3) trajectory of every body, camera included.

pub mod batch;
pub mod camera;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod labeling;
pub mod pipeline;
pub mod se3;
pub mod sim;
pub mod tracklet;
pub mod trajectory;

pub use error::{Error, Result};
