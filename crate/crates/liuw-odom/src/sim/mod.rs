//! Deterministic tunnel-world simulator: geometry, ground-truth motion,
//! sensor synthesis, and the UWB positioning solver.

pub mod sensors;
pub mod trajectory;
pub mod trilateration;
pub mod world;

pub use sensors::{synthesize, LidarModel, SimConfig, SimNoise};
pub use trajectory::{Trajectory, TrajectoryConfig};
pub use world::TunnelWorld;
