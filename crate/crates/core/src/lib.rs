//! Design space exploration harness for Jetson-class boards.
//!
//! A host drives a [`search`] algorithm over the Orin [`configspace`],
//! dispatches each proposed configuration to a [`client`] daemon using the
//! framed [`protocol`], and records the measured time, power and memory of
//! every sample to CSV. The [`simdevice`] module provides a deterministic
//! board model so the whole loop runs without hardware, and [`analysis`]
//! extracts the Pareto frontier, power/time correlation and EMC cut-off
//! cluster from a finished run.

pub mod analysis;
pub mod cli;
pub mod client;
pub mod configspace;
pub mod host;
pub mod measurement;
pub mod protocol;
pub mod rng;
pub mod search;
pub mod simdevice;

pub use configspace::{ConfigSpace, Configuration};
pub use host::SampleRecord;
