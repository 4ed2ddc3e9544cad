pub mod error;
pub mod ik;
pub mod kinematics;
pub mod manipulability;
pub mod metrics;
pub mod pose;
pub mod runner;
pub mod scene;
pub mod sweep;
pub mod teleop;
pub mod trajectories;

pub use error::{Error, Result};
