pub mod bitstream;
pub mod cloud;
pub mod codec;
pub mod coder;
pub mod error;
pub mod metrics;
pub mod octree;
pub mod predict;
pub mod raht;
pub mod rdoskip;
pub mod synth;

pub use error::{Error, PlyError, Result};
