//! From-scratch hybrid CNN–Transformer classifier for five-class skin-lesion
//! images: dense tensor kernels with reverse-mode autodiff, the staged
//! backbone with lightweight attention blocks, two auxiliary CNN branches,
//! channel/spatial attention fusion, a deterministic training engine, the
//! data pipeline, and evaluation metrics.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod parallel;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, Mode, Value};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
