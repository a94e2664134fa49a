//! Trajectory optimization for automated vehicles under object-existence
//! uncertainty.
//!
//! Two homotopic maneuvers are planned jointly: A ignores an uncertain
//! object, B treats it as real. Their costs are blended with weights derived
//! from the object's existence probability and the detector's confusion
//! rates, while a full-braking fallback stays feasible over the next
//! execution window regardless of that probability.

pub mod cost;
pub mod error;
pub mod optimizer;
pub mod output;
pub mod path;
pub mod prob;
pub mod safety;
pub mod scenario;
pub mod scene;
pub mod sim;
pub mod trajectory;

pub use error::{PlannerError, Result};
