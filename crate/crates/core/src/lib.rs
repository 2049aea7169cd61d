#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod neighbors;
pub mod optimize;
pub mod simulate;
mod stats;
pub mod train;

pub use data::{Points, SpatialDataset};
pub use error::{GpError, Result};
pub use gp::PosteriorSummary;
pub use kernel::{Matern, MaternParams};
pub use loss::{LossKind, LossSpec};
pub use metrics::EvalReport;
pub use neighbors::{Batch, NeighborIndex, NeighborSet};
pub use stats::median;
pub use train::{FittedModel, Regime, TrainConfig};
