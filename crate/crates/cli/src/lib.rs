//! Run configuration, artifact formats and the staged pipeline behind the
//! `cotmap` binary.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{PipelineError, PipelineResult};
