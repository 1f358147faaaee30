//! Spatial feature reconstruction (SFR) for alignment-free matching of
//! partial observations.
//!
//! An encoder turns an input into a `C x H x W` spatial feature map. Two
//! descriptors are pooled from the map: a global feature (per-channel mean)
//! and a multi-scale set of spatial features (sliding average windows of
//! several sizes). Two inputs are compared by reconstructing every spatial
//! feature of one from the spatial features of the other with a ridge
//! regression, and averaging the residual norms.
//!
//! Module map:
//! - [`features`]: feature maps, the SFRF container, pooling and normalization.
//! - [`reconstruction`]: ridge coefficients, the reconstruction distance and its gradients.
//! - [`encoder`]: a small convolutional encoder with manual backpropagation.
//! - [`metric`]: batch-hard mining, the SFR triplet loss and the alternating training step.
//! - [`retrieval`]: gallery matching with global/SFR fusion, CMC and mAP.
//! - [`oracle`]: brute-force reference routines used to validate the fast paths.
//! - [`toy`]: seeded synthetic identities for desk-scale training runs.

pub mod encoder;
pub mod error;
pub mod features;
pub mod metric;
pub mod oracle;
pub mod reconstruction;
pub mod retrieval;
pub mod toy;

pub use error::{Result, SfrError};
pub use features::{FeatureMatrix, GlobalFeature, PyramidSpec, SpatialFeatureMap};
pub use reconstruction::{Dictionary, ReconstructionCoefficients, ReconstructionResult};

/// Default ridge regularization.
pub const DEFAULT_BETA: f64 = 0.001;
/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.3;
/// Default weight of the global distance in the fused score.
pub const DEFAULT_ALPHA: f64 = 0.7;
