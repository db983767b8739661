//! Converts raw smartphone multi-sensor logs into featured indoor motion
//! trajectories.
//!
//! The processing chain is:
//!
//! 1. [`logio`] parses TSL sensor logs into a [`logio::SensorLog`].
//! 2. [`stepdetect`] finds footfalls on the accelerometer magnitude with an
//!    adaptive jerk/pace buffer.
//! 3. [`stride`] classifies each step's gait with a two-level linear
//!    classifier and looks up a stride length.
//! 4. [`heading`] tracks gravity, fuses gyroscope and magnetometer into a
//!    phone yaw and extracts the walking direction with PCA.
//! 5. [`pdr`] integrates steps into a 2-D dead-reckoning trajectory.
//! 6. [`floors`] cuts trajectories into per-floor segments (DBSCAN on
//!    pressure) and assigns global floor indices (Jaccard + average-linkage
//!    clustering on WiFi MAC sets).
//! 7. [`featurize`] detects reliable turning points and emits chain graphs.
//!
//! [`synth`] renders ground-truth walks into sensor logs, [`evalkit`] scores
//! results against that ground truth and [`pipeline`] wires everything
//! together for the `trackforge` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod featurize;
pub mod floors;
pub mod heading;
pub mod logio;
pub mod pdr;
pub mod pipeline;
pub mod stepdetect;
pub mod stride;
pub mod synth;

pub use error::{Error, Result};
