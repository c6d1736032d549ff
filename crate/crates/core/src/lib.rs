//! Next-interval origin-destination demand forecasting for metro networks.
//!
//! The crate covers the whole pipeline: smart-card (AFC) records are binned
//! into OD tensors and inflow/outflow series, per-interval attraction degrees
//! drive a sparsity mask, and a channel-wise attentive split CNN with an
//! inflow/outflow gate is trained under a masked loss and evaluated with
//! masked RMSE/MAE/WMAPE.

pub mod afc;
pub mod error;
pub mod eval;
pub mod model;
pub mod odad;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamSet, Parameter, Tape, Tensor, Var};
