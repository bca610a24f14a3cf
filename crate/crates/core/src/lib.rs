//! Entropy-guided demonstration selection for learning from demonstration.
//!
//! A task-parameterised Gaussian mixture learner is trained on planar maze
//! demonstrations, evaluated over a test grid, and a guidance rule picks the grid
//! point the next demonstration should start from.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gmm;
pub mod guidance;
pub mod metrics;
pub mod planner;
pub mod task;
pub mod tpgmm;

pub use error::{Error, Result};
