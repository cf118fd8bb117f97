//! Core building blocks for reconstructing highway speed fields from sparse
//! loop-detector and probe-vehicle observations.
//!
//! A speed field is an `S x T` grid of normalized speeds (space is the leading
//! axis). Everything here is plain value-oriented code with explicit, seeded
//! random sources so results are reproducible.

pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod observation;
pub mod physics;
pub mod rng;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use field::{
    denormalize, normalize, validate, GridSpec, ObservationMask, SpeedField, Violation,
};
pub use observation::{
    combine_masks, make_loop_mask, make_probe_mask, observe, rasterize_trajectories,
    visibility_ratio, Observation, ProbeTrajectory, SensorLayout, TrajectorySample,
};
pub use physics::{aas_project, AasProjector, AnisoKernel, PhysicsParams, Projector};
