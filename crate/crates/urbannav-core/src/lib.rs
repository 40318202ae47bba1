//! urbannav-core: turns egomotion pose logs into imitation-learning datasets,
//! trains a waypoint-goal navigation policy at desk scale, and evaluates it
//! with orientation-error metrics, critical-scenario stratification, and a
//! closed-loop kinematic simulator.

pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod geometry;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod scenario;
pub mod shard;
pub mod sim;
pub mod synth;
pub mod training;

pub use error::Error;
