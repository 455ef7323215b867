use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gibbs::{HyperParams, SamplerConfig};
use super::projection::ProjectionMode;
use crate::error::{BakrError, Result};
use crate::kernel::KernelSpec;
use crate::scalar::Real;
use crate::stats::quantile_sorted_linear;

/// Draws per block when effect size analogs are materialized.
pub const BETA_BLOCK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub hyper: HyperParams,
    pub sampler: SamplerConfig,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub projection_mode: ProjectionMode,
    pub kernel: Option<KernelSpec>,
    pub variance_threshold: f64,
    pub variance_explained: f64,
}

/// Retained posterior draws. Effect size analogs are the deterministic image
/// `beta_t = P theta_t` and are produced on demand from `theta` and
/// `projection`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorChain<T: Real> {
    /// `T x q`, one draw per row.
    pub theta: DMatrix<T>,
    pub sigma2: Vec<T>,
    pub tau2: Vec<T>,
    /// `p x q`.
    pub projection: DMatrix<T>,
    pub meta: ChainMeta,
}

impl<T: Real> PosteriorChain<T> {
    pub fn len(&self) -> usize {
        self.theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn p(&self) -> usize {
        self.projection.nrows()
    }

    pub fn q(&self) -> usize {
        self.projection.ncols()
    }

    pub fn beta_draw(&self, t: usize) -> DVector<T> {
        &self.projection * self.theta.row(t).transpose()
    }

    /// Effect size analogs for draws `start..start + len`, one draw per row.
    pub fn beta_block(&self, start: usize, len: usize) -> DMatrix<T> {
        self.theta.rows(start, len) * self.projection.transpose()
    }

    /// All effect size analog draws (`T x p`). Memory heavy for long chains;
    /// prefer [`Self::for_each_beta_block`].
    pub fn beta_draws(&self) -> DMatrix<T> {
        self.beta_block(0, self.len())
    }

    pub fn for_each_beta_block<F: FnMut(usize, &DMatrix<T>)>(&self, mut f: F) {
        let mut start = 0;
        while start < self.len() {
            let len = BETA_BLOCK.min(self.len() - start);
            f(start, &self.beta_block(start, len));
            start += len;
        }
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(BakrError::EmptyChain)
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub beta_mean: Vec<f64>,
    pub beta_sd: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub sigma2_mean: f64,
    pub tau2_mean: f64,
}

/// Means and standard deviations (divisor `T`) over retained draws.
///
/// Because `beta` is linear in `theta`, its moments come from the `q x q`
/// sample covariance of `theta`: `var(beta_j) = (P S P^T)_jj`.
pub fn posterior_summary<T: Real>(chain: &PosteriorChain<T>) -> Result<PosteriorSummary> {
    chain.ensure_nonempty()?;
    let t = chain.len() as f64;
    let theta = chain.theta.map(|v| v.as_f64());
    let p_mat = chain.projection.map(|v| v.as_f64());
    let theta_mean = DVector::from_fn(chain.q(), |j, _| theta.column(j).sum() / t);
    let mut centered = theta.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-theta_mean[j]);
    }
    let cov = centered.tr_mul(&centered) / t;
    let p_cov = &p_mat * cov;
    let beta_sd = (0..chain.p())
        .map(|j| p_cov.row(j).dot(&p_mat.row(j)).max(0.0).sqrt())
        .collect();
    let beta_mean = (&p_mat * &theta_mean).iter().copied().collect();
    let avg = |v: &[T]| v.iter().map(|x| x.as_f64()).sum::<f64>() / t;
    Ok(PosteriorSummary {
        beta_mean,
        beta_sd,
        theta_mean: theta_mean.iter().copied().collect(),
        sigma2_mean: avg(&chain.sigma2),
        tau2_mean: avg(&chain.tau2),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveInterval {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Real> {
    /// `T x n*`, draw `t` is `X* beta_t`.
    pub draws: DMatrix<T>,
    pub mean: DVector<T>,
    pub intervals: Vec<PredictiveInterval>,
}

/// Posterior predictive draws `X* beta_t` with equal-tailed intervals.
///
/// `x_star` must already be on the training scale.
pub fn predict<T: Real>(x_star: &DMatrix<T>, chain: &PosteriorChain<T>, levels: &[f64]) -> Result<Prediction<T>> {
    chain.ensure_nonempty()?;
    if x_star.ncols() != chain.p() {
        return Err(BakrError::shape(
            "predict",
            format!("{} columns", chain.p()),
            format!("{} columns", x_star.ncols()),
        ));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(BakrError::InvalidArgument(format!("interval level {l} outside (0, 1)")));
    }
    // X* P is n* x q, so each draw costs O(n* q)
    let xp = x_star * &chain.projection;
    let draws = &chain.theta * xp.transpose();
    let t = T::lit(chain.len() as f64);
    let mean = DVector::from_fn(x_star.nrows(), |i, _| draws.column(i).sum() / t);
    let mut intervals: Vec<PredictiveInterval> = levels
        .iter()
        .map(|&level| PredictiveInterval {
            level,
            lower: Vec::new(),
            upper: Vec::new(),
        })
        .collect();
    let mut sorted = Vec::with_capacity(chain.len());
    for col in draws.column_iter() {
        sorted.clear();
        sorted.extend(col.iter().map(|v| v.as_f64()));
        sorted.sort_by(f64::total_cmp);
        for iv in intervals.iter_mut() {
            let tail = (1.0 - iv.level) / 2.0;
            iv.lower.push(quantile_sorted_linear(&sorted, tail));
            iv.upper.push(quantile_sorted_linear(&sorted, 1.0 - tail));
        }
    }
    Ok(Prediction { draws, mean, intervals })
}
