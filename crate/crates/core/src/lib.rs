//! Feature-flow estimation for video object detection: bilinear feature
//! warping, a correlation layer, basic and advanced in-network flow modules,
//! a transformation residual loss, adaptive temporal aggregation and the
//! Seq-NMS+ box-sequence post-processor.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod harness;
pub mod iff;
pub mod io;
pub mod seqnms;
pub mod tensor;
pub mod trl;

pub use error::{Error, Result, Shape};
pub use flow::FlowMap;
pub use iff::{IffConfig, IffModule, Variant};
pub use tensor::{Param, Tensor};
