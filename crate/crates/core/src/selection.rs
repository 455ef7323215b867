//! Variable selection from effect size analog draws.
//!
//! A covariate's PPAA is the fraction of draws in which `|beta_j| >= z`.
//! Covariates with PPAA strictly above the inclusion cutoff `r` are selected.
//! `z` is either a quantile of the pooled magnitudes or supplied by the
//! caller; `r` is either fixed (0.5 by default) or calibrated by permuting
//! the response.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BakrError, Result};
use crate::kernel::KernelFactorization;
use crate::model::{gibbs_fit, HyperParams, PosteriorChain, ProjectionOperator, SamplerConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Real;
use crate::stats::inverse_cdf_rank;

pub const DEFAULT_KAPPA: f64 = 0.05;
pub const DEFAULT_INCLUSION: f64 = 0.5;
pub const DEFAULT_PERMUTATIONS: usize = 20;
pub const DEFAULT_FWER: f64 = 0.05;

/// `ppaa_j = (1/T) #{t : |beta_j^(t)| >= z}`.
pub fn ppaa<T: Real>(chain: &PosteriorChain<T>, z: f64) -> Result<Vec<f64>> {
    if chain.is_empty() {
        return Err(BakrError::EmptyChain);
    }
    if z.is_nan() || z <= 0.0 {
        return Err(BakrError::InvalidArgument(format!(
            "threshold z must be positive, got {z}"
        )));
    }
    let mut counts = vec![0usize; chain.p()];
    chain.for_each_beta_block(|_, block| {
        for (j, col) in block.column_iter().enumerate() {
            counts[j] += col.iter().filter(|v| v.abs().as_f64() >= z).count();
        }
    });
    let t = chain.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / t).collect())
}

const HISTOGRAM_BINS: usize = 1 << 16;

/// Exact inverse-CDF quantile of the pooled `|beta_j^(t)|` over all draws and
/// covariates, computed in bounded memory: one pass for the range, one for
/// a histogram, one to collect the bin holding the target rank.
pub fn pooled_magnitude_quantile<T: Real>(chain: &PosteriorChain<T>, prob: f64) -> Result<f64> {
    if chain.is_empty() || chain.p() == 0 {
        return Err(BakrError::EmptyChain);
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    chain.for_each_beta_block(|_, block| {
        for v in block.iter() {
            let a = v.abs().as_f64();
            lo = lo.min(a);
            hi = hi.max(a);
        }
    });
    let total = chain.len() * chain.p();
    let rank = inverse_cdf_rank(total, prob);
    if lo == hi {
        return Ok(hi);
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let bin_of = |a: f64| (((a - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
    let mut hist = vec![0usize; HISTOGRAM_BINS];
    chain.for_each_beta_block(|_, block| {
        for v in block.iter() {
            hist[bin_of(v.abs().as_f64())] += 1;
        }
    });
    let mut below = 0;
    let mut target = 0;
    for (b, &c) in hist.iter().enumerate() {
        if below + c >= rank {
            target = b;
            break;
        }
        below += c;
    }
    let mut members = Vec::with_capacity(hist[target]);
    chain.for_each_beta_block(|_, block| {
        members.extend(block.iter().map(|v| v.abs().as_f64()).filter(|&a| bin_of(a) == target));
    });
    let (_, v, _) = members.select_nth_unstable_by(rank - below - 1, f64::total_cmp);
    Ok(*v)
}

/// `z` as the `(1 - kappa)` quantile of pooled effect magnitudes.
pub fn default_threshold<T: Real>(chain: &PosteriorChain<T>, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "kappa must lie in (0, 1), got {kappa}"
        )));
    }
    let z = pooled_magnitude_quantile(chain, 1.0 - kappa)?;
    if z <= 0.0 {
        return Err(BakrError::ZeroScale);
    }
    Ok(z)
}

/// Zero-based indices with `ppaa_j > r`.
pub fn select(ppaa: &[f64], r: f64) -> Vec<usize> {
    ppaa.iter()
        .enumerate()
        .filter(|(_, &v)| v > r)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Calibration {
    DefaultQuantile {
        kappa: f64,
    },
    Fixed,
    Permutation {
        n_perm: usize,
        fwer: f64,
        /// Per-permutation maximum PPAA, in permutation order.
        maxima: Vec<f64>,
        warning: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub ppaa: Vec<f64>,
    pub threshold_z: f64,
    pub inclusion_r: f64,
    pub selected: Vec<usize>,
    /// How `z` was obtained.
    pub z_calibration: Calibration,
    /// How `r` was obtained.
    pub r_calibration: Calibration,
}

impl AssociationResult {
    pub fn new(ppaa: Vec<f64>, z: f64, z_calibration: Calibration, r: f64, r_calibration: Calibration) -> Self {
        let selected = select(&ppaa, r);
        AssociationResult {
            ppaa,
            threshold_z: z,
            inclusion_r: r,
            selected,
            z_calibration,
            r_calibration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationCalibration {
    pub inclusion_r: f64,
    pub threshold_z: f64,
    pub n_perm: usize,
    pub fwer: f64,
    pub maxima: Vec<f64>,
    pub warning: Option<String>,
}

impl PermutationCalibration {
    pub fn calibration(&self) -> Calibration {
        Calibration::Permutation {
            n_perm: self.n_perm,
            fwer: self.fwer,
            maxima: self.maxima.clone(),
            warning: self.warning.clone(),
        }
    }
}

/// Upper `fwer` cutoff of the permutation null for the maximum PPAA.
///
/// Uses the order statistic of rank `ceil((1 - fwer)(N + 1))` among the `N`
/// permutation maxima, so that the observed maximum exceeds it with null
/// probability at most `fwer`. When that rank exceeds `N` the largest
/// maximum is used and a warning is recorded.
pub fn permutation_cutoff(maxima: &[f64], fwer: f64) -> Result<(f64, Option<String>)> {
    if maxima.is_empty() {
        return Err(BakrError::InvalidArgument(
            "at least one permutation is required".into(),
        ));
    }
    if !(fwer > 0.0 && fwer < 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "fwer must lie in (0, 1), got {fwer}"
        )));
    }
    let n = maxima.len();
    let raw = (1.0 - fwer) * (n + 1) as f64;
    let rank = (raw - 1e-9 * n as f64).ceil() as usize;
    let mut sorted = maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    if rank > n {
        let warning = format!(
            "{n} permutations cannot resolve a {fwer} family-wise error rate; using the maximum (need at least {})",
            ((1.0 - fwer) / fwer).ceil() as usize
        );
        log::warn!("{warning}");
        Ok((sorted[n - 1], Some(warning)))
    } else {
        Ok((sorted[rank.max(1) - 1], None))
    }
}

/// Calibrates the inclusion cutoff `r` at a fixed `z` by refitting the
/// sampler on permuted responses. The kernel factorization and projection
/// are reused since they depend on the covariates only.
#[allow(clippy::too_many_arguments)]
pub fn permutation_threshold<T: Real>(
    y: &[T],
    fact: &KernelFactorization<T>,
    proj: &ProjectionOperator<T>,
    hyper: &HyperParams,
    sampler: &SamplerConfig,
    z: f64,
    n_perm: usize,
    fwer: f64,
    seed: u64,
) -> Result<PermutationCalibration> {
    if n_perm == 0 {
        return Err(BakrError::InvalidArgument("n_perm must be at least 1".into()));
    }
    let maxima = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let perm_seed = derive_seed(seed, &[k as u64]);
            let mut rng = rng_from_seed(perm_seed);
            let mut permuted = y.to_vec();
            rand::seq::SliceRandom::shuffle(permuted.as_mut_slice(), &mut rng);
            let cfg = SamplerConfig {
                seed: derive_seed(perm_seed, &[1]),
                ..*sampler
            };
            let chain = gibbs_fit(&permuted, fact, proj, hyper, &cfg)?;
            let scores = ppaa(&chain, z)?;
            Ok(scores.into_iter().fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (inclusion_r, warning) = permutation_cutoff(&maxima, fwer)?;
    Ok(PermutationCalibration {
        inclusion_r,
        threshold_z: z,
        n_perm,
        fwer,
        maxima,
        warning,
    })
}
