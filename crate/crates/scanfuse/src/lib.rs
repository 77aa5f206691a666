//! Depth-scan localisation toolkit: point-to-point ICP registration with a
//! Fisher-information error model, fused with gyroscope dead-reckoning by an
//! invariant extended Kalman filter on SE(3).
//!
//! The crate is organised around the data path of the fusion loop:
//!
//! * [`se3`] — rigid-transform and twist arithmetic (rotation exponential,
//!   hat/vee maps, quaternion integration);
//! * [`pointcloud`] — clouds, exact nearest-neighbour index, depth images,
//!   PLY and raw-depth I/O;
//! * [`icp`] — closed-form rigid solve and the two-stage registration loop;
//! * [`covariance`] — Fisher matrix, ICP covariance and observability
//!   analysis of a registration;
//! * [`iekf`] — the invariant filter: prediction, discrete Riccati gain,
//!   correction, observation gating;
//! * [`sim`] — deterministic synthetic scenes, depth rendering and gyro
//!   streams standing in for a depth camera + IMU rig;
//! * [`pipeline`] — the two-rate fusion loop, baselines, map accumulation
//!   and evaluation metrics.
//!
//! Hot inner loops (nearest-neighbour matching, ray casting, Fisher
//! accumulation) run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential execution without it; results are
//! bit-identical either way.

pub mod covariance;
pub mod error;
mod exec;
pub mod icp;
pub mod iekf;
pub mod pipeline;
pub mod pointcloud;
pub mod se3;
pub mod sim;

pub use error::{Error, Result};
pub use se3::{Pose, Twist};

/// 6x6 covariance over twist coordinates; rows/cols 0-2 rotational, 3-5
/// translational.
pub type Cov6 = nalgebra::Matrix6<f64>;
