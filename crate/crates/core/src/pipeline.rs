//! End-to-end fitting: preprocessing, kernel, factorization, projection and
//! the Gibbs run, plus prediction on the original covariate scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, DesignMatrix, Standardization};
use crate::error::{BakrError, Result};
use crate::kernel::{build_kernel, factorize, FeatureMatrix, KernelFactorization, KernelFamily, KernelSpec};
use crate::model::{
    gibbs_fit, predict, projection_from_pinv, pseudo_inverse, HyperParams, PosteriorChain, Prediction, ProjectionMode,
    ProjectionOperator, SamplerConfig,
};
use crate::scalar::Real;

/// How covariates are transformed before the kernel sees them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    /// Use the values as given.
    None,
    /// Center and scale each column to unit variance.
    Standardize,
    /// Standardize, then divide by `sqrt(p)` so that squared distances
    /// between samples average about 2 regardless of `p`. The linear kernel
    /// already divides by `p`, so it only gets the standardization.
    #[default]
    StandardizeUnitNorm,
}

impl std::str::FromStr for Preprocessing {
    type Err = BakrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocessing::None),
            "standardize" => Ok(Preprocessing::Standardize),
            "standardize-unit-norm" | "unit-norm" => Ok(Preprocessing::StandardizeUnitNorm),
            other => Err(BakrError::InvalidArgument(format!("unknown preprocessing '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: KernelFamily,
    pub bandwidth: f64,
    /// Number of random features; `None` means one per covariate.
    pub feature_count: Option<usize>,
    pub kernel_seed: u64,
    pub variance_threshold: f64,
    pub hyper: HyperParams,
    pub sampler: SamplerConfig,
    pub projection: ProjectionMode,
    pub pinv_tolerance: f64,
    pub preprocessing: Preprocessing,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: KernelFamily::GaussianRff,
            bandwidth: 2.0,
            feature_count: None,
            kernel_seed: 1,
            variance_threshold: 0.95,
            hyper: HyperParams::default(),
            sampler: SamplerConfig::default(),
            projection: ProjectionMode::Collapsed,
            pinv_tolerance: 1e-10,
            preprocessing: Preprocessing::default(),
        }
    }
}

impl ModelConfig {
    pub fn kernel_spec(&self, p: usize) -> KernelSpec {
        KernelSpec {
            family: self.family,
            bandwidth: self.bandwidth,
            feature_count: self.feature_count.unwrap_or(p),
            seed: self.kernel_seed,
        }
    }
}

/// Covariate transform learned on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateTransform {
    pub preprocessing: Preprocessing,
    pub standardization: Option<Standardization>,
    /// Applied after standardization.
    pub scale: f64,
    pub source_columns: usize,
}

impl CovariateTransform {
    /// Learns the transform on `x` and returns it with the transformed values.
    pub fn fit(x: &DesignMatrix, preprocessing: Preprocessing, family: KernelFamily) -> Result<(Self, DMatrix<f64>)> {
        let (standardization, mut values) = match preprocessing {
            Preprocessing::None => (None, x.values.clone()),
            _ => {
                let s = standardize(x)?;
                (s.standardization, s.values)
            }
        };
        let scale = match preprocessing {
            Preprocessing::StandardizeUnitNorm if family != KernelFamily::LinearExact => {
                1.0 / (values.ncols() as f64).sqrt()
            }
            _ => 1.0,
        };
        if scale != 1.0 {
            values *= scale;
        }
        let transform = CovariateTransform {
            preprocessing,
            standardization,
            scale,
            source_columns: x.ncols(),
        };
        Ok((transform, values))
    }

    /// Maps raw covariates (training layout) onto the model scale.
    pub fn apply(&self, x: &DesignMatrix) -> Result<DMatrix<f64>> {
        if x.ncols() != self.source_columns {
            return Err(BakrError::shape(
                "covariate transform",
                format!("{} columns", self.source_columns),
                format!("{} columns", x.ncols()),
            ));
        }
        let mut values = match (&self.preprocessing, &self.standardization) {
            (Preprocessing::None, _) => x.values.clone(),
            (_, Some(s)) => s.apply(x)?.values,
            (_, None) => {
                return Err(BakrError::InvalidArgument("missing standardization parameters".into()));
            }
        };
        if self.scale != 1.0 {
            values *= self.scale;
        }
        Ok(values)
    }

    /// Model-scale column index for each source column (`None` if dropped).
    pub fn model_columns(&self) -> Vec<Option<usize>> {
        match &self.standardization {
            None => (0..self.source_columns).map(Some).collect(),
            Some(s) => {
                let mut map = vec![None; self.source_columns];
                for (k, &j) in s.kept.iter().enumerate() {
                    map[j] = Some(k);
                }
                map
            }
        }
    }
}

/// Everything that depends on the covariates only, shared by refits on
/// other responses (permutations, repeated chains).
pub struct PreparedKernel<T: Real> {
    pub x: DMatrix<T>,
    pub transform: CovariateTransform,
    pub spec: KernelSpec,
    pub features: Option<FeatureMatrix<T>>,
    pub factorization: KernelFactorization<T>,
    pub projection: ProjectionOperator<T>,
}

pub fn prepare<T: Real>(x: &DesignMatrix, cfg: &ModelConfig) -> Result<PreparedKernel<T>> {
    let (transform, values) = CovariateTransform::fit(x, cfg.preprocessing, cfg.family)?;
    let spec = cfg.kernel_spec(values.ncols());
    prepare_transformed(values.map(T::lit), transform, spec, cfg)
}

/// Same as [`prepare`] but with an explicit kernel spec, for callers that
/// resample the random features on fixed covariates.
pub fn prepare_transformed<T: Real>(
    x: DMatrix<T>,
    transform: CovariateTransform,
    spec: KernelSpec,
    cfg: &ModelConfig,
) -> Result<PreparedKernel<T>> {
    let x_pinv = pseudo_inverse(&x, cfg.pinv_tolerance);
    prepare_with_pinv(x, &x_pinv, transform, spec, cfg)
}

/// Same as [`prepare_transformed`] with the pseudo-inverse of `x` computed
/// once by the caller. It dominates the cost for large `n`.
pub fn prepare_with_pinv<T: Real>(
    x: DMatrix<T>,
    x_pinv: &DMatrix<T>,
    transform: CovariateTransform,
    spec: KernelSpec,
    cfg: &ModelConfig,
) -> Result<PreparedKernel<T>> {
    let (kernel, features) = build_kernel(&x, &spec)?;
    let factorization = factorize(&kernel, cfg.variance_threshold)?;
    let projection = projection_from_pinv(
        x_pinv,
        &factorization,
        features.as_ref(),
        cfg.projection,
        cfg.pinv_tolerance,
    )?;
    Ok(PreparedKernel {
        x,
        transform,
        spec,
        features,
        factorization,
        projection,
    })
}

pub struct FittedModel<T: Real> {
    pub chain: PosteriorChain<T>,
    pub transform: CovariateTransform,
    /// Training mean removed from the response before fitting.
    pub y_mean: f64,
}

impl<T: Real> PreparedKernel<T> {
    /// Centers `y` and runs the sampler with the given settings.
    pub fn fit(&self, y: &[f64], hyper: &HyperParams, sampler: &SamplerConfig) -> Result<FittedModel<T>> {
        if y.is_empty() {
            return Err(BakrError::SamplerSetup("empty response".into()));
        }
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let centered: Vec<T> = y.iter().map(|v| T::lit(v - y_mean)).collect();
        let chain = gibbs_fit(&centered, &self.factorization, &self.projection, hyper, sampler)?;
        Ok(FittedModel {
            chain,
            transform: self.transform.clone(),
            y_mean,
        })
    }
}

/// Preprocess, build the kernel and run the sampler in one go.
pub fn fit<T: Real>(x: &DesignMatrix, y: &[f64], cfg: &ModelConfig) -> Result<FittedModel<T>> {
    if x.nrows() != y.len() {
        return Err(BakrError::shape("fit", format!("{} responses", x.nrows()), y.len()));
    }
    prepare::<T>(x, cfg)?.fit(y, &cfg.hyper, &cfg.sampler)
}

impl<T: Real> FittedModel<T> {
    /// Posterior predictive draws on the response scale for raw covariates.
    pub fn predict(&self, x: &DesignMatrix, levels: &[f64]) -> Result<Prediction<T>> {
        if x.nrows() == 0 {
            return Err(BakrError::InvalidArgument("no samples to predict".into()));
        }
        let values = self.transform.apply(x)?.map(T::lit);
        let mut pred = predict(&values, &self.chain, levels)?;
        let offset = T::lit(self.y_mean);
        pred.draws.add_scalar_mut(offset);
        pred.mean.add_scalar_mut(offset);
        for iv in pred.intervals.iter_mut() {
            iv.lower
                .iter_mut()
                .chain(iv.upper.iter_mut())
                .for_each(|v| *v += self.y_mean);
        }
        Ok(pred)
    }

    /// Posterior mean prediction only (`X* P theta_bar + y_mean`).
    pub fn predict_mean(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        if x.nrows() == 0 {
            return Err(BakrError::InvalidArgument("no samples to predict".into()));
        }
        if self.chain.is_empty() {
            return Err(BakrError::EmptyChain);
        }
        let values = self.transform.apply(x)?.map(T::lit);
        let t = T::lit(self.chain.len() as f64);
        let theta_bar = self.chain.theta.row_sum().transpose() / t;
        let beta_bar = &self.chain.projection * theta_bar;
        Ok((values * beta_bar).iter().map(|v| v.as_f64() + self.y_mean).collect())
    }

    /// Effect size analog magnitudes on the source column layout; dropped
    /// constant columns get 0.
    pub fn source_effects(&self, effects: &[f64]) -> Vec<f64> {
        self.transform
            .model_columns()
            .into_iter()
            .map(|k| k.map_or(0.0, |k| effects[k]))
            .collect()
    }
}
