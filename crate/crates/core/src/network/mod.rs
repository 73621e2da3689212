//! Multiscale refinement network.

mod config;
mod model;

pub use config::{BackboneConfig, NetworkConfig, RefinementMode, StageConfig, Task};
pub use model::{fuse, scaled_dims, BackboneOutput, MsrNet, MsrOutput, Prediction, StreamOutput};

#[cfg(test)]
mod tests;
