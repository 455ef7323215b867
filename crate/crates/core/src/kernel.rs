//! Exact and random-Fourier-feature Gaussian kernels and their truncated
//! spectral factorization.
//!
//! Conventions: design matrices and feature matrices are row-major in the
//! statistical sense, one row per sample. A [`FeatureMatrix`] is therefore
//! `n x d`, and the approximate kernel is `Phi * Phi^T`.
//!
//! The Gaussian kernel is `k(u, v) = exp(-h * |u - v|^2)`. Its spectral
//! density is `Normal(0, 2h I_p)`, which is what [`sample_fourier_basis`]
//! draws frequencies from.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BakrError, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Real;

/// Eigenvalues below this fraction of the leading eigenvalue never enter a
/// factorization.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    GaussianRff,
    GaussianExact,
    LinearExact,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::GaussianRff => "gaussian-rff",
            KernelFamily::GaussianExact => "gaussian-exact",
            KernelFamily::LinearExact => "linear-exact",
        })
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = BakrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-rff" | "rff" => Ok(KernelFamily::GaussianRff),
            "gaussian-exact" | "gaussian" => Ok(KernelFamily::GaussianExact),
            "linear-exact" | "linear" => Ok(KernelFamily::LinearExact),
            other => Err(BakrError::InvalidSpec(format!("unknown kernel family '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Multiplies the squared Euclidean distance.
    pub bandwidth: f64,
    pub feature_count: usize,
    pub seed: u64,
}

impl KernelSpec {
    pub fn gaussian_rff(bandwidth: f64, feature_count: usize, seed: u64) -> Self {
        KernelSpec {
            family: KernelFamily::GaussianRff,
            bandwidth,
            feature_count,
            seed,
        }
    }

    pub fn gaussian_exact(bandwidth: f64) -> Self {
        KernelSpec {
            family: KernelFamily::GaussianExact,
            bandwidth,
            feature_count: 0,
            seed: 0,
        }
    }

    pub fn linear_exact() -> Self {
        KernelSpec {
            family: KernelFamily::LinearExact,
            bandwidth: 0.0,
            feature_count: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::LinearExact => Ok(()),
            KernelFamily::GaussianExact | KernelFamily::GaussianRff => {
                if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
                    return Err(BakrError::InvalidSpec(format!(
                        "bandwidth must be positive, got {}",
                        self.bandwidth
                    )));
                }
                if self.family == KernelFamily::GaussianRff && self.feature_count == 0 {
                    return Err(BakrError::InvalidSpec("feature count must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Fixed frequencies and phases defining one realization of the random
/// feature map `psi(x) = sqrt(2/d) cos(x^T Omega + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatureMap<T: Real> {
    /// `p x d`, one frequency per column.
    pub omega: DMatrix<T>,
    /// Phases in `[0, 2 pi)`.
    pub phase: DVector<T>,
    pub spec: KernelSpec,
}

/// Draws frequencies from `Normal(0, 2h I_p)` and phases from `U[0, 2 pi)`.
///
/// The draw order is column by column (all `p` coordinates of a frequency,
/// then the next), followed by the `d` phases.
pub fn sample_fourier_basis<T: Real>(p: usize, spec: &KernelSpec) -> Result<FourierFeatureMap<T>> {
    if spec.family != KernelFamily::GaussianRff {
        return Err(BakrError::WrongFamily(spec.family.to_string()));
    }
    spec.validate()?;
    if p == 0 {
        return Err(BakrError::InvalidArgument("covariate count must be at least 1".into()));
    }
    let d = spec.feature_count;
    let sd = (2.0 * spec.bandwidth).sqrt();
    let mut rng = rng_from_seed(spec.seed);
    let mut omega = DMatrix::<T>::zeros(p, d);
    for mut col in omega.column_iter_mut() {
        for v in col.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = T::lit(sd * z);
        }
    }
    let phase = DVector::<T>::from_fn(d, |_, _| {
        // rounding in the cast can land exactly on 2 pi for f32
        let b = T::lit(rng.random_range(0.0..2.0 * PI));
        if b >= T::two_pi() {
            T::zero()
        } else {
            b
        }
    });
    Ok(FourierFeatureMap {
        omega,
        phase,
        spec: *spec,
    })
}

/// `n x d` random feature matrix; row `i` is `psi(x_i)^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T: Real> {
    pub phi: DMatrix<T>,
    pub spec: KernelSpec,
}

impl<T: Real> FourierFeatureMap<T> {
    pub fn input_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.omega.ncols()
    }

    /// Evaluates the feature map on every row of `x`.
    pub fn features(&self, x: &DMatrix<T>) -> Result<FeatureMatrix<T>> {
        if x.ncols() != self.input_dim() {
            return Err(BakrError::shape(
                "feature_map",
                format!("{} columns", self.input_dim()),
                format!("{} columns", x.ncols()),
            ));
        }
        let d = self.feature_count();
        let scale = T::lit((2.0 / d as f64).sqrt());
        let mut phi = x * &self.omega;
        for (j, mut col) in phi.column_iter_mut().enumerate() {
            let b = self.phase[j];
            col.apply(|v| *v = (*v + b).cos() * scale);
        }
        Ok(FeatureMatrix { phi, spec: self.spec })
    }
}

/// Free-function form of [`FourierFeatureMap::features`].
pub fn feature_map<T: Real>(fmap: &FourierFeatureMap<T>, x: &DMatrix<T>) -> Result<FeatureMatrix<T>> {
    fmap.features(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix<T: Real> {
    pub values: DMatrix<T>,
    /// Kernel that produced the matrix, if known.
    pub source: Option<KernelSpec>,
}

impl<T: Real> KernelMatrix<T> {
    pub fn from_matrix(values: DMatrix<T>) -> Self {
        KernelMatrix { values, source: None }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// `K = Phi Phi^T`, symmetrized so that the result is exactly symmetric.
pub fn approx_kernel<T: Real>(features: &FeatureMatrix<T>) -> KernelMatrix<T> {
    let phi = &features.phi;
    let mut k = phi * phi.transpose();
    symmetrize(&mut k);
    KernelMatrix {
        values: k,
        source: Some(features.spec),
    }
}

fn symmetrize<T: Real>(k: &mut DMatrix<T>) {
    let n = k.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (k[(i, j)] + k[(j, i)]) * half;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

/// Exact Gaussian (`exp(-h |x_i - x_j|^2)`) or linear (`X X^T / p`) kernel.
pub fn exact_kernel<T: Real>(x: &DMatrix<T>, spec: &KernelSpec) -> Result<KernelMatrix<T>> {
    spec.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if p == 0 {
        return Err(BakrError::InvalidArgument("design matrix has no columns".into()));
    }
    let gram = {
        let mut g = x * x.transpose();
        symmetrize(&mut g);
        g
    };
    let values = match spec.family {
        KernelFamily::GaussianRff => return Err(BakrError::WrongFamily(spec.family.to_string())),
        KernelFamily::LinearExact => gram / T::lit(p as f64),
        KernelFamily::GaussianExact => {
            let h = T::lit(spec.bandwidth);
            let mut k = DMatrix::<T>::identity(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let d2 = (gram[(i, i)] + gram[(j, j)] - gram[(i, j)] * T::lit(2.0)).max(T::zero());
                    let v = (-h * d2).exp();
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            k
        }
    };
    Ok(KernelMatrix {
        values,
        source: Some(*spec),
    })
}

/// Truncated spectral factorization `K ~ U diag(lambda) U^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFactorization<T: Real> {
    /// `n x q`, orthonormal columns.
    pub u: DMatrix<T>,
    /// Strictly positive, descending.
    pub lambda: DVector<T>,
    /// `sum(lambda) / sum(max(eigenvalue, 0))`.
    pub variance_explained: f64,
    pub variance_threshold: f64,
    pub source: Option<KernelSpec>,
}

impl<T: Real> KernelFactorization<T> {
    pub fn q(&self) -> usize {
        self.lambda.len()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    /// `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.lambda[j];
        }
        &scaled * self.u.transpose()
    }
}

/// Eigen-pairs of a symmetric matrix sorted by descending eigenvalue.
pub(crate) fn sorted_eigen<T: Real>(k: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = SymmetricEigen::new(k.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub(crate) fn check_symmetric<T: Real>(k: &DMatrix<T>) -> Result<()> {
    if !k.is_square() {
        return Err(BakrError::InvalidKernel(format!(
            "{}x{} is not square",
            k.nrows(),
            k.ncols()
        )));
    }
    let scale = k.amax().as_f64();
    if !scale.is_finite() {
        return Err(BakrError::InvalidKernel("non-finite entries".into()));
    }
    let tol = T::default_tolerance() * scale.max(f64::MIN_POSITIVE);
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (k[(i, j)] - k[(j, i)]).abs().as_f64();
            if diff > tol {
                return Err(BakrError::InvalidKernel(format!(
                    "asymmetric at ({i}, {j}): |difference| = {diff:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Keeps the leading eigenpairs explaining at least `variance_threshold` of
/// the (nonnegative part of the) spectrum.
///
/// Negative eigenvalues are clamped to zero before the cumulative sum and
/// eigenvalues below [`EIGEN_FLOOR`]` * lambda_1` are never retained.
pub fn factorize<T: Real>(k: &KernelMatrix<T>, variance_threshold: f64) -> Result<KernelFactorization<T>> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "variance threshold must lie in (0, 1], got {variance_threshold}"
        )));
    }
    check_symmetric(&k.values)?;
    let n = k.dim();
    if n == 0 {
        return Err(BakrError::InvalidKernel("empty kernel matrix".into()));
    }
    let (values, vectors) = sorted_eigen(&k.values);
    let clamped: Vec<f64> = values.iter().map(|v| v.as_f64().max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let leading = clamped[0];
    if total.is_nan() || total <= 0.0 {
        return Err(BakrError::InvalidKernel("no positive eigenvalues".into()));
    }
    let floor = EIGEN_FLOOR * leading;
    let eligible = clamped.iter().take_while(|&&v| v > floor).count();
    let target = variance_threshold * total - 1e-10 * total;
    let mut cumulative = 0.0;
    let mut q = eligible;
    for (i, v) in clamped.iter().take(eligible).enumerate() {
        cumulative += v;
        if cumulative >= target {
            q = i + 1;
            break;
        }
    }
    let kept: f64 = clamped[..q].iter().sum();
    Ok(KernelFactorization {
        u: vectors.columns(0, q).into_owned(),
        lambda: values.rows(0, q).into_owned(),
        variance_explained: kept / total,
        variance_threshold,
        source: k.source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproximationError {
    pub frobenius_rel: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn approximation_error<T: Real>(exact: &KernelMatrix<T>, approx: &KernelMatrix<T>) -> Result<ApproximationError> {
    if exact.values.shape() != approx.values.shape() {
        return Err(BakrError::shape(
            "approximation_error",
            format!("{:?}", exact.values.shape()),
            format!("{:?}", approx.values.shape()),
        ));
    }
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut sum_abs = 0.0;
    for (e, a) in exact.values.iter().zip(approx.values.iter()) {
        let d = (*e - *a).as_f64();
        sq += d * d;
        max_abs = max_abs.max(d.abs());
        sum_abs += d.abs();
    }
    let norm = exact.values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    let count = exact.values.len().max(1) as f64;
    Ok(ApproximationError {
        frobenius_rel: if norm > 0.0 { sq.sqrt() / norm } else { sq.sqrt() },
        max_abs,
        mean_abs: sum_abs / count,
    })
}

/// Builds the kernel for `x` according to `spec`: random features for the
/// RFF family, exact evaluation otherwise. Returns the feature matrix too
/// when one was built.
pub fn build_kernel<T: Real>(x: &DMatrix<T>, spec: &KernelSpec) -> Result<(KernelMatrix<T>, Option<FeatureMatrix<T>>)> {
    match spec.family {
        KernelFamily::GaussianRff => {
            let fmap = sample_fourier_basis::<T>(x.ncols(), spec)?;
            let features = fmap.features(x)?;
            Ok((approx_kernel(&features), Some(features)))
        }
        _ => Ok((exact_kernel(x, spec)?, None)),
    }
}

/// Uniform draw used by tests that need random data with a given seed.
#[cfg(test)]
pub(crate) fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seeded_basis_is_reproducible() {
        let spec = KernelSpec::gaussian_rff(1.0, 4, 7);
        let a = sample_fourier_basis::<f64>(3, &spec).unwrap();
        let b = sample_fourier_basis::<f64>(3, &spec).unwrap();
        assert_eq!(a.omega.shape(), (3, 4));
        assert_eq!(a.phase.len(), 4);
        assert_eq!(a, b);
        assert!(a.phase.iter().all(|&v| (0.0..2.0 * PI).contains(&v)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(matches!(
            sample_fourier_basis::<f64>(3, &KernelSpec::gaussian_rff(0.0, 4, 1)),
            Err(BakrError::InvalidSpec(_))
        ));
        assert!(matches!(
            sample_fourier_basis::<f64>(3, &KernelSpec::gaussian_rff(-1.0, 4, 1)),
            Err(BakrError::InvalidSpec(_))
        ));
        assert!(matches!(
            sample_fourier_basis::<f64>(3, &KernelSpec::gaussian_rff(1.0, 0, 1)),
            Err(BakrError::InvalidSpec(_))
        ));
    }

    #[test]
    fn frequency_variance_matches_spectral_density() {
        // p = 1, d = 1e6, h = 0.5: variance should be 2h = 1
        let spec = KernelSpec::gaussian_rff(0.5, 1_000_000, 11);
        let fmap = sample_fourier_basis::<f64>(1, &spec).unwrap();
        let vals: Vec<f64> = fmap.omega.iter().copied().collect();
        let var = crate::stats::sample_variance(&vals);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn frequency_norms_concentrate() {
        let spec = KernelSpec::gaussian_rff(2.0, 2000, 3);
        let fmap = sample_fourier_basis::<f64>(2000, &spec).unwrap();
        let mean_norm2 = fmap.omega.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 2000.0;
        assert!((mean_norm2 / 8000.0 - 1.0).abs() < 0.05, "mean |w|^2 = {mean_norm2}");
    }

    #[test]
    fn zero_input_gives_constant_features() {
        let spec = KernelSpec::gaussian_rff(1.0, 8, 5);
        let mut fmap = sample_fourier_basis::<f64>(3, &spec).unwrap();
        fmap.phase.fill(0.0);
        let phi = fmap.features(&DMatrix::zeros(4, 3)).unwrap();
        let expected = (2.0f64 / 8.0).sqrt();
        assert!(phi.phi.iter().all(|&v| v == expected));
    }

    #[test]
    fn single_feature_direct_formula() {
        let fmap = FourierFeatureMap {
            omega: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            phase: DVector::from_element(1, PI / 2.0),
            spec: KernelSpec::gaussian_rff(1.0, 1, 0),
        };
        let x = DMatrix::from_row_slice(1, 3, &[0.3, 5.0, -2.0]);
        let phi = fmap.features(&x).unwrap();
        assert_relative_eq!(phi.phi[(0, 0)], 2f64.sqrt() * (0.3 + PI / 2.0).cos(), epsilon = 1e-14);
    }

    #[test]
    fn feature_map_rejects_wrong_width() {
        let fmap = sample_fourier_basis::<f64>(3, &KernelSpec::gaussian_rff(1.0, 4, 1)).unwrap();
        assert!(matches!(
            fmap.features(&DMatrix::zeros(2, 4)),
            Err(BakrError::Shape { .. })
        ));
    }

    #[test]
    fn identical_rows_share_kernel_values() {
        let mut x = random_matrix(5, 4, 2);
        let row = x.row(1).into_owned();
        x.set_row(3, &row);
        let fmap = sample_fourier_basis::<f64>(4, &KernelSpec::gaussian_rff(1.0, 64, 9)).unwrap();
        let k = approx_kernel(&fmap.features(&x).unwrap()).values;
        assert_relative_eq!(k[(1, 3)], k[(1, 1)], epsilon = 1e-12);
        assert_relative_eq!(k[(1, 3)], k[(3, 3)], epsilon = 1e-12);
        assert!(k.diagonal().iter().all(|&v| (0.0..=2.0).contains(&v)));
    }

    #[test]
    fn exact_gaussian_closed_form() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let k = exact_kernel(&x, &KernelSpec::gaussian_exact(2.0)).unwrap().values;
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_relative_eq!(k[(0, 1)], (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn exact_linear_on_orthogonal_rows() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        let k = exact_kernel(&x, &KernelSpec::linear_exact()).unwrap().values;
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn exact_kernel_rejects_rff_family() {
        let x = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            exact_kernel(&x, &KernelSpec::gaussian_rff(1.0, 2, 0)),
            Err(BakrError::WrongFamily(_))
        ));
    }

    #[test]
    fn identity_spectrum_truncation() {
        let k = KernelMatrix::from_matrix(DMatrix::<f64>::identity(40, 40));
        let f = factorize(&k, 0.95).unwrap();
        assert_eq!(f.q(), 38);
        assert!(f.lambda.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let k = KernelMatrix::from_matrix(DMatrix::<f64>::identity(100, 100));
        assert_eq!(factorize(&k, 0.95).unwrap().q(), 95);
    }

    #[test]
    fn rank_one_kernel() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let k = KernelMatrix::from_matrix(&v * v.transpose());
        for t in [0.1, 0.5, 1.0] {
            assert_eq!(factorize(&k, t).unwrap().q(), 1);
        }
    }

    #[test]
    fn full_threshold_reconstructs() {
        let a = random_matrix(100, 130, 4);
        let k = KernelMatrix::from_matrix(&a * a.transpose());
        let f = factorize(&k, 1.0).unwrap();
        let rel = (f.reconstruct() - &k.values).norm() / k.values.norm();
        assert!(rel < 1e-8, "relative error {rel}");
        let utu = f.u.transpose() * &f.u;
        assert!((utu - DMatrix::identity(f.q(), f.q())).amax() < 1e-8);
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matches!(
            factorize(&KernelMatrix::from_matrix(m), 0.9),
            Err(BakrError::InvalidKernel(_))
        ));
    }

    #[test]
    fn approximation_error_closed_form() {
        let e = KernelMatrix::from_matrix(DMatrix::<f64>::identity(10, 10));
        let zero = approximation_error(&e, &e).unwrap();
        assert_eq!((zero.frobenius_rel, zero.max_abs, zero.mean_abs), (0.0, 0.0, 0.0));
        let a = KernelMatrix::from_matrix(DMatrix::<f64>::identity(10, 10) * 1.1);
        let err = approximation_error(&e, &a).unwrap();
        assert_relative_eq!(err.frobenius_rel, 0.1, epsilon = 1e-12);
        assert_relative_eq!(err.max_abs, 0.1, epsilon = 1e-12);
        let small = KernelMatrix::from_matrix(DMatrix::<f64>::identity(3, 3));
        assert!(approximation_error(&e, &small).is_err());
    }

    #[test]
    fn f32_path_tracks_f64() {
        let x64 = random_matrix(6, 5, 8);
        let x32 = x64.map(|v| v as f32);
        let spec = KernelSpec::gaussian_rff(0.5, 200, 21);
        let k64 = build_kernel(&x64, &spec).unwrap().0.values;
        let k32 = build_kernel(&x32, &spec).unwrap().0.values;
        let diff = k64
            .iter()
            .zip(k32.iter())
            .map(|(a, b)| (a - *b as f64).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "f32/f64 kernel gap {diff}");
    }
}
