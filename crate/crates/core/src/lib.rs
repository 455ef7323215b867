//! Bayesian approximate kernel regression.
//!
//! Random Fourier features approximate a Gaussian kernel, a truncated
//! eigendecomposition gives a low-rank factor model, and a Gibbs sampler
//! draws the factor coefficients. Each draw maps linearly back onto the
//! covariates as an effect size analog, which drives variable selection.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the common double precision case.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod stats;

pub use data::{DesignMatrix, SimulatedDataset, SimulationTruth};
pub use error::{BakrError, Result};
pub use kernel::{KernelFactorization, KernelFamily, KernelMatrix, KernelSpec};
pub use model::{HyperParams, PosteriorChain, ProjectionMode, SamplerConfig};
pub use pipeline::{fit, prepare, FittedModel, ModelConfig, PreparedKernel, Preprocessing};
pub use scalar::Real;
pub use selection::AssociationResult;

pub type KernelMatrix64 = kernel::KernelMatrix<f64>;
pub type FeatureMap64 = kernel::FourierFeatureMap<f64>;
pub type FeatureMatrix64 = kernel::FeatureMatrix<f64>;
pub type Factorization64 = kernel::KernelFactorization<f64>;
pub type Projection64 = model::ProjectionOperator<f64>;
pub type Chain64 = model::PosteriorChain<f64>;
pub type Prediction64 = model::Prediction<f64>;
pub type FittedModel64 = pipeline::FittedModel<f64>;
pub type PreparedKernel64 = pipeline::PreparedKernel<f64>;
