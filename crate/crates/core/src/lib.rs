//! Self-supervised cost-of-transport (COT) mapping.
//!
//! The crate covers the whole offline pipeline: a synthetic world and drive
//! simulator, COT computation from power telemetry, z-buffered label
//! rendering, mask- and confidence-based label augmentation, a small
//! per-pixel COT regressor trained with a masked MAE loss, bird's-eye-view
//! map fusion and energy-optimal A* planning.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod bev;
pub mod cotlabel;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod nn;
pub mod plan;
pub mod regress;
pub mod render;
pub mod simworld;

pub use error::{Error, Result};
