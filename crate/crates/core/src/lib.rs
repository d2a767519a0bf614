//! Simulation core for an artificial-potential-field collision-avoidance
//! controller on a six-joint arm sharing its workspace with a human hand.

pub mod controller;
pub mod error;
pub mod experiments;
pub mod kinematics;
pub mod logio;
pub mod metrics;
pub mod scenario;
pub mod simulator;
pub mod supervisor;
pub mod tracks;

pub use error::{Error, Result};
