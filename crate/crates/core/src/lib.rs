//! Cosserat-rod statics for tendon-driven continuum robots, and neural-operator
//! surrogates that learn the map from a robot design vector to its equilibrium
//! shape.
//!
//! The crate is organised bottom-up:
//!
//! - [`rodmodel`]: ground-truth boundary-value solver (RK4 + Newton shooting).
//! - [`dataset`]: design sampling, normalization, generation and the binary
//!   dataset format.
//! - [`neuralops`]: DeepONet and FNO surrogates (tendon and pose variants) with
//!   hand-written reverse-mode gradients.
//! - [`training`]: Adam, the cyclical cosine schedule, stopping rule and
//!   checkpoints.
//! - [`eval`]: metrics and the experiment drivers (convergence, dropout,
//!   out-of-distribution, timing).

pub mod dataset;
pub mod eval;
pub mod format;
pub mod neuralops;
pub mod rng;
pub mod rodmodel;
pub mod training;

/// Number of tendons routed along the backbone.
pub const NUM_TENDONS: usize = 4;
/// Number of scalars in a design vector.
pub const DESIGN_DIM: usize = 3 * NUM_TENDONS + 3;
/// Arclength samples per equilibrium configuration.
pub const NUM_NODES: usize = 42;
/// Output channels of a tendon-space prediction (x, y, z per tendon).
pub const TENDON_CHANNELS: usize = 3 * NUM_TENDONS;
/// Output channels of a pose prediction (backbone position + two frame columns).
pub const POSE_CHANNELS: usize = 9;
