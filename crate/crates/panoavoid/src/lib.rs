//! Closed-loop training and evaluation of panoramic depth avoidance policies.
//!
//! The crate simulates a point-mass UAV in analytic obstacle scenes, renders
//! panoramic depth on board, and trains recurrent policies by backpropagating
//! task losses through the rollout itself. Everything is deterministic given a
//! config and a seed.

pub mod scalar;
pub mod tensor;
pub mod geometry;
pub mod world;
pub mod render;
pub mod dynamics;
pub mod policy;
pub mod objective;
pub mod training;
pub mod evaluation;
pub mod fdcheck;

pub use scalar::Scalar;
pub use tensor::{Tape, TensorId};
