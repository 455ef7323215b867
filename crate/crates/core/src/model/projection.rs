//! Linear maps from factor coefficients to effect size analogs.
//!
//! On the training samples the fitted function is `f = U theta`, and its
//! projection onto the covariates is `beta = X^+ f`. The collapsed operator
//! stores `P = X^+ U` directly. The composite operator follows the route
//! through the random feature coefficients,
//! `c = pinv(diag(lambda) U^T K^-1 Phi) theta`, `beta = X^+ Phi c`, and
//! agrees with the collapsed one whenever `K` is invertible.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BakrError, Result};
use crate::kernel::{approx_kernel, sorted_eigen, FeatureMatrix, KernelFactorization, EIGEN_FLOOR};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    #[default]
    Collapsed,
    Composite,
}

impl std::str::FromStr for ProjectionMode {
    type Err = BakrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapsed" => Ok(ProjectionMode::Collapsed),
            "composite" => Ok(ProjectionMode::Composite),
            other => Err(BakrError::InvalidArgument(format!("unknown projection mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionOperator<T: Real> {
    /// `p x q`.
    pub matrix: DMatrix<T>,
    pub mode: ProjectionMode,
    /// Relative singular value cutoff used by the pseudo-inverses.
    pub tolerance: f64,
}

impl<T: Real> ProjectionOperator<T> {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn q(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Moore-Penrose pseudo-inverse by SVD; singular values at or below
/// `tol * s_max` are treated as zero.
pub fn pseudo_inverse<T: Real>(m: &DMatrix<T>, tol: f64) -> DMatrix<T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s_max = svd.singular_values.iter().fold(T::zero(), |a, &b| a.max(b));
    let cutoff = s_max * T::lit(tol);
    // X^+ = V diag(1/s) U^T over the retained singular values
    let mut v_scaled = v_t.transpose();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        let s = svd.singular_values[j];
        if s > cutoff && s > T::zero() {
            col /= s;
        } else {
            col.fill(T::zero());
        }
    }
    v_scaled * u.transpose()
}

/// Builds the projection operator for design `x` (`n x p`) and a kernel
/// factorization on the same samples.
///
/// Composite mode needs the random feature matrix the factorization was
/// computed from.
pub fn build_projection<T: Real>(
    x: &DMatrix<T>,
    fact: &KernelFactorization<T>,
    features: Option<&FeatureMatrix<T>>,
    mode: ProjectionMode,
    tolerance: f64,
) -> Result<ProjectionOperator<T>> {
    if x.nrows() != fact.n() {
        return Err(BakrError::shape(
            "build_projection",
            format!("{} rows", fact.n()),
            format!("{} rows", x.nrows()),
        ));
    }
    projection_from_pinv(&pseudo_inverse(x, tolerance), fact, features, mode, tolerance)
}

/// Same as [`build_projection`] with `X^+` (`p x n`) supplied by the caller,
/// so several kernels on the same covariates share one pseudo-inverse.
pub fn projection_from_pinv<T: Real>(
    x_pinv: &DMatrix<T>,
    fact: &KernelFactorization<T>,
    features: Option<&FeatureMatrix<T>>,
    mode: ProjectionMode,
    tolerance: f64,
) -> Result<ProjectionOperator<T>> {
    if x_pinv.ncols() != fact.n() {
        return Err(BakrError::shape(
            "projection_from_pinv",
            format!("{} columns", fact.n()),
            format!("{} columns", x_pinv.ncols()),
        ));
    }
    let matrix = match mode {
        ProjectionMode::Collapsed => x_pinv * &fact.u,
        ProjectionMode::Composite => {
            let features = features.ok_or_else(|| {
                BakrError::InvalidArgument(
                    "composite projection requires the random feature matrix (gaussian-rff kernel)".into(),
                )
            })?;
            if features.phi.nrows() != fact.n() {
                return Err(BakrError::shape(
                    "build_projection",
                    format!("{} feature rows", fact.n()),
                    format!("{} feature rows", features.phi.nrows()),
                ));
            }
            let coef_map = feature_coefficient_map(fact, features)?;
            x_pinv * (&features.phi * pseudo_inverse(&coef_map, tolerance))
        }
    };
    Ok(ProjectionOperator {
        matrix,
        mode,
        tolerance,
    })
}

/// `diag(lambda) U^T K^-1 Phi` (`q x d`), the map from feature coefficients
/// to factor coefficients.
fn feature_coefficient_map<T: Real>(fact: &KernelFactorization<T>, features: &FeatureMatrix<T>) -> Result<DMatrix<T>> {
    let kernel = approx_kernel(features);
    let (values, vectors) = sorted_eigen(&kernel.values);
    let leading = values[0].as_f64();
    let floor = EIGEN_FLOOR * leading;
    let below = values.iter().filter(|v| v.as_f64() <= floor).count();
    if below > 0 || leading <= 0.0 {
        return Err(BakrError::SingularKernel(below));
    }
    let mut v_scaled = vectors.clone();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        col /= values[j];
    }
    let k_inv = v_scaled * vectors.transpose();
    let mut left = fact.u.transpose() * k_inv;
    for (i, mut row) in left.row_iter_mut().enumerate() {
        row *= fact.lambda[i];
    }
    Ok(left * &features.phi)
}
