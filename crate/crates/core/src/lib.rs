//! Gaussian belief-space planning with a learned path prior.
//!
//! The crate contains a sampling-based baseline planner, the image encodings
//! of planning problems, a small U-Net trained to predict optimal-path
//! densities, and the reconstruction of collision-free belief paths from a
//! predicted density.

pub mod belief;
pub mod bench;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod neural;
pub mod planner;
pub mod pgm;
pub mod reconstruct;

pub use belief::{BeliefPath, BeliefState, Covariance2, TargetRegion};
pub use dataset::{DatasetConfig, Scenario};
pub use encoding::{Grid, GridStack};
pub use error::{Error, Result};
pub use geometry::{Bounds, Obstacle, Point2};
pub use neural::unet::UNetParams;
pub use planner::{PlannerParams, PlannerResult, PlannerStatus};
pub use reconstruct::ReconstructionParams;
