//! The hierarchical kernel factor model: effect size projection, Gibbs
//! sampler, posterior summaries and prediction.

mod chain;
mod gibbs;
mod projection;

pub use chain::{
    posterior_summary, predict, ChainMeta, PosteriorChain, PosteriorSummary, Prediction, PredictiveInterval, BETA_BLOCK,
};
pub use gibbs::{draw_scaled_inv_chi2, gibbs_fit, GibbsSampler, HyperParams, SamplerConfig};
pub use projection::{build_projection, projection_from_pinv, pseudo_inverse, ProjectionMode, ProjectionOperator};
