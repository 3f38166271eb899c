pub mod control;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod perception;
pub mod planning;
pub mod scene;

pub use error::{Error, Result};
