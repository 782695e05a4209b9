//! Pure tensor kernels: every op is a function of its inputs with a matching
//! hand-written backward, safe to call from multiple threads.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod shape;

pub use activation::{activation, softmax, Activation};
pub use attention::AttnGeom;
pub use conv::{conv2d, ConvCfg};
pub use linear::matmul;
pub use pool::{adaptive_avg_pool, global_avg_pool, pool2d, PoolCfg, PoolMode};
pub use shape::{concat_channels, slice_channels};
