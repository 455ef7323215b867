//! Prediction metrics, power curves and the run-to-run variance
//! decomposition of R^2 into kernel-resampling and chain components.

use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrix, SimulatedDataset};
use crate::error::{BakrError, Result};
use crate::pipeline::{prepare_with_pinv, CovariateTransform, ModelConfig};
use crate::rng::derive_seed;
use crate::scalar::Real;

fn check_lengths<T>(y: &[T], y_hat: &[T]) -> Result<()> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(BakrError::shape(
            "metric",
            format!("{} predictions", y.len()),
            y_hat.len(),
        ));
    }
    Ok(())
}

/// Mean squared prediction error.
pub fn mspe<T: Real>(y: &[T], y_hat: &[T]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let sse: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sse / y.len() as f64)
}

/// `1 - SSE / SST`; negative when worse than the mean.
pub fn r_squared<T: Real>(y: &[T], y_hat: &[T]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v.as_f64() - mean).powi(2)).sum();
    if sst.is_nan() || sst <= 0.0 {
        return Err(BakrError::InvalidArgument(
            "R^2 is undefined for a constant response".into(),
        ));
    }
    Ok(1.0 - mspe(y, y_hat)? * n / sst)
}

/// True/false positive rates along a ranking by descending magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    /// Covariate indices, most prominent first.
    pub order: Vec<usize>,
    /// `tpr[k]` after the first `k + 1` covariates.
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl PowerCurve {
    /// Area under the ROC curve, starting from the origin.
    pub fn auc(&self) -> f64 {
        let mut area = 0.0;
        let (mut x0, mut y0) = (0.0, 0.0);
        for (&x, &y) in self.fpr.iter().zip(&self.tpr) {
            area += (x - x0) * (y + y0) / 2.0;
            x0 = x;
            y0 = y;
        }
        area
    }
}

/// Ranks covariates by descending magnitude (ties by ascending index).
pub fn power_curve(magnitudes: &[f64], truth: &[usize]) -> Result<PowerCurve> {
    let p = magnitudes.len();
    let mut is_causal = vec![false; p];
    for &j in truth {
        if j >= p {
            return Err(BakrError::InvalidArgument(format!(
                "truth index {j} out of range for {p} covariates"
            )));
        }
        is_causal[j] = true;
    }
    let positives = is_causal.iter().filter(|&&c| c).count();
    if positives == 0 {
        return Err(BakrError::InvalidArgument("truth set is empty".into()));
    }
    let negatives = p - positives;
    if negatives == 0 {
        return Err(BakrError::InvalidArgument("truth set covers every covariate".into()));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| magnitudes[b].abs().total_cmp(&magnitudes[a].abs()).then(a.cmp(&b)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut tpr = Vec::with_capacity(p);
    let mut fpr = Vec::with_capacity(p);
    for &j in &order {
        if is_causal[j] {
            tp += 1;
        } else {
            fp += 1;
        }
        tpr.push(tp as f64 / positives as f64);
        fpr.push(fp as f64 / negatives as f64);
    }
    Ok(PowerCurve { order, tpr, fpr })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub n_kernels: usize,
    pub n_chains: usize,
    pub mean_r2: f64,
    /// Sample variance of R^2 over all runs.
    pub total_variance: f64,
    pub between_kernel_component: f64,
    pub within_kernel_component: f64,
    pub kernel_proportion: f64,
    pub chain_proportion: f64,
    /// Set when both components are zero; proportions are then reported as 0.
    pub degenerate: bool,
}

/// One-way random-effects decomposition of a `kernels x chains` grid.
///
/// `sigma2_between = max(0, (MS_between - MS_within) / M)` and
/// `sigma2_within = MS_within`; proportions are their shares of the sum.
pub fn decompose_run_variance(grid: &[Vec<f64>]) -> Result<VarianceDecomposition> {
    let k = grid.len();
    let m = grid.first().map_or(0, Vec::len);
    if k < 2 || m < 2 || grid.iter().any(|row| row.len() != m) {
        return Err(BakrError::InvalidArgument(
            "need a rectangular grid with at least 2 kernels and 2 chains".into(),
        ));
    }
    let n = (k * m) as f64;
    let all: Vec<f64> = grid.iter().flatten().copied().collect();
    let grand = all.iter().sum::<f64>() / n;
    let group_means: Vec<f64> = grid.iter().map(|row| row.iter().sum::<f64>() / m as f64).collect();
    let ss_between: f64 = group_means.iter().map(|g| m as f64 * (g - grand).powi(2)).sum();
    let ss_within: f64 = grid
        .iter()
        .zip(&group_means)
        .map(|(row, g)| row.iter().map(|v| (v - g).powi(2)).sum::<f64>())
        .sum();
    let ms_between = ss_between / (k - 1) as f64;
    let ms_within = ss_within / (k * (m - 1)) as f64;
    let between = ((ms_between - ms_within) / m as f64).max(0.0);
    let within = ms_within;
    let total_component = between + within;
    let degenerate = total_component.is_nan() || total_component <= 0.0;
    let (kernel_proportion, chain_proportion) = if degenerate {
        (0.0, 0.0)
    } else {
        let kp = between / total_component;
        (kp, 1.0 - kp)
    };
    Ok(VarianceDecomposition {
        n_kernels: k,
        n_chains: m,
        mean_r2: grand,
        total_variance: (ss_between + ss_within) / (n - 1.0),
        between_kernel_component: between,
        within_kernel_component: within,
        kernel_proportion,
        chain_proportion,
        degenerate,
    })
}

/// How chain seeds are derived across the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChainSeeding {
    /// Independent seed per (kernel, chain) cell.
    #[default]
    PerCell,
    /// Chain `c` uses the same seed under every kernel.
    SharedAcrossKernels,
    /// Every chain under a kernel uses that kernel's seed.
    SharedWithinKernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub n_kernels: usize,
    pub n_chains: usize,
    pub base_seed: u64,
    pub seeding: ChainSeeding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionStudy {
    /// `r2[kernel][chain]`, in-sample R^2 of the posterior mean fit.
    pub r2: Vec<Vec<f64>>,
    pub decomposition: VarianceDecomposition,
}

/// Refits the model on one dataset over a grid of independently resampled
/// random feature maps and independent chains, and decomposes the variance
/// of the in-sample R^2.
///
/// With an exact kernel family every "resample" is the same kernel.
pub fn variance_decomposition<T: Real>(
    dataset: &SimulatedDataset,
    model: &ModelConfig,
    study: &DecompositionConfig,
) -> Result<DecompositionStudy> {
    variance_decomposition_xy::<T>(&dataset.x, &dataset.y, model, study)
}

pub fn variance_decomposition_xy<T: Real>(
    x: &DesignMatrix,
    y: &[f64],
    model: &ModelConfig,
    study: &DecompositionConfig,
) -> Result<DecompositionStudy> {
    if study.n_kernels < 2 || study.n_chains < 2 {
        return Err(BakrError::InvalidArgument(
            "need at least 2 kernels and 2 chains".into(),
        ));
    }
    let (transform, values) = CovariateTransform::fit(x, model.preprocessing, model.family)?;
    let values = values.map(T::lit);
    let x_pinv = crate::model::pseudo_inverse(&values, model.pinv_tolerance);
    let mut r2 = Vec::with_capacity(study.n_kernels);
    for k in 0..study.n_kernels {
        let kernel_seed = derive_seed(study.base_seed, &[0, k as u64]);
        let spec = crate::kernel::KernelSpec {
            seed: kernel_seed,
            ..model.kernel_spec(values.ncols())
        };
        let prepared = prepare_with_pinv(values.clone(), &x_pinv, transform.clone(), spec, model)?;
        let mut row = Vec::with_capacity(study.n_chains);
        for c in 0..study.n_chains {
            let chain_seed = match study.seeding {
                ChainSeeding::PerCell => derive_seed(study.base_seed, &[1, k as u64, c as u64]),
                ChainSeeding::SharedAcrossKernels => derive_seed(study.base_seed, &[2, c as u64]),
                ChainSeeding::SharedWithinKernel => derive_seed(study.base_seed, &[3, k as u64]),
            };
            let sampler = crate::model::SamplerConfig {
                seed: chain_seed,
                ..model.sampler
            };
            let fitted = prepared.fit(y, &model.hyper, &sampler)?;
            let y_hat = fitted.predict_mean(x)?;
            row.push(r_squared(y, &y_hat)?);
        }
        r2.push(row);
    }
    let decomposition = decompose_run_variance(&r2)?;
    Ok(DecompositionStudy { r2, decomposition })
}
