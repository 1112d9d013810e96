//! Tightly-coupled LiDAR / IMU / UWB / wheel odometry on an iterated
//! error-state Kalman filter, with covariance-based degradation detection
//! and constraint-set switching.

pub mod config;
pub mod degradation;
pub mod error;
pub mod eval;
pub mod ieskf;
pub mod log_io;
pub mod measurements;
pub mod mode;
pub mod pipeline;
pub mod plane_map;
pub mod propagation;
pub mod rotation;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
