//! Atomic file writes and on-disk persistence of fitted models.
//!
//! A saved model is a directory holding little-endian `f64` blocks
//! (`theta.bin`, `variances.bin`, `projection.bin`) and a `chain.json`
//! sidecar that describes their shapes and carries everything needed to
//! predict or test associations without refitting.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BakrError, Result};
use crate::kernel::{KernelFactorization, KernelSpec};
use crate::model::{ChainMeta, PosteriorChain};
use crate::pipeline::{CovariateTransform, FittedModel};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR: &str = "chain.json";
const THETA: &str = "theta.bin";
const VARIANCES: &str = "variances.bin";
const PROJECTION: &str = "projection.bin";
const FACTORS: &str = "factors.bin";
const EIGENVALUES: &str = "eigenvalues.bin";
const RESPONSE: &str = "response.bin";
pub const FACTOR_SIDECAR: &str = "factors.json";

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| BakrError::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(BakrError::io(path, e));
    }
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| BakrError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BakrError::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major little-endian f64.
    pub layout: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub format_version: u32,
    /// Precision the chain was computed in.
    pub scalar: String,
    pub draws: usize,
    pub meta: ChainMeta,
    pub transform: CovariateTransform,
    pub y_mean: f64,
    /// Source covariate names, in input order.
    pub columns: Vec<String>,
    pub theta: BlockShape,
    /// Two columns: sigma2, tau2.
    pub variances: BlockShape,
    pub projection: BlockShape,
}

fn encode<T: Real>(rows: usize, cols: usize, at: impl Fn(usize, usize) -> T) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows * cols * 8);
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&at(i, j).as_f64().to_le_bytes());
        }
    }
    out
}

fn decode<T: Real>(path: &Path, shape: &BlockShape) -> Result<DMatrix<T>> {
    let bytes = fs::read(path).map_err(|e| BakrError::io(path, e))?;
    let expected = shape.rows * shape.cols * 8;
    if bytes.len() != expected {
        return Err(BakrError::Data {
            path: path.to_path_buf(),
            message: format!(
                "expected {expected} bytes for {}x{}, found {}",
                shape.rows,
                shape.cols,
                bytes.len()
            ),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
    Ok(DMatrix::from_row_iterator(shape.rows, shape.cols, values))
}

fn block(file: &str, rows: usize, cols: usize) -> BlockShape {
    BlockShape {
        file: file.into(),
        rows,
        cols,
        layout: "row-major-f64-le".into(),
    }
}

/// Persists a fitted model into `dir` (created if needed).
pub fn save_fitted<T: Real>(dir: &Path, model: &FittedModel<T>, columns: &[String]) -> Result<ChainSidecar> {
    fs::create_dir_all(dir).map_err(|e| BakrError::io(dir, e))?;
    let chain = &model.chain;
    if columns.len() != model.transform.source_columns {
        return Err(BakrError::shape(
            "save_fitted",
            format!("{} column names", model.transform.source_columns),
            columns.len(),
        ));
    }
    let t = chain.len();
    write_atomic(&dir.join(THETA), &encode(t, chain.q(), |i, j| chain.theta[(i, j)]))?;
    write_atomic(
        &dir.join(VARIANCES),
        &encode(t, 2, |i, j| if j == 0 { chain.sigma2[i] } else { chain.tau2[i] }),
    )?;
    write_atomic(
        &dir.join(PROJECTION),
        &encode(chain.p(), chain.q(), |i, j| chain.projection[(i, j)]),
    )?;
    let sidecar = ChainSidecar {
        format_version: FORMAT_VERSION,
        scalar: std::any::type_name::<T>().into(),
        draws: t,
        meta: chain.meta.clone(),
        transform: model.transform.clone(),
        y_mean: model.y_mean,
        columns: columns.to_vec(),
        theta: block(THETA, t, chain.q()),
        variances: block(VARIANCES, t, 2),
        projection: block(PROJECTION, chain.p(), chain.q()),
    };
    write_json(&dir.join(SIDECAR), &sidecar)?;
    Ok(sidecar)
}

pub fn load_fitted<T: Real>(dir: &Path) -> Result<(FittedModel<T>, ChainSidecar)> {
    let sidecar: ChainSidecar = read_json(&dir.join(SIDECAR))?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(BakrError::Data {
            path: dir.join(SIDECAR),
            message: format!("unsupported format version {}", sidecar.format_version),
        });
    }
    let theta = decode::<T>(&dir.join(&sidecar.theta.file), &sidecar.theta)?;
    let variances = decode::<T>(&dir.join(&sidecar.variances.file), &sidecar.variances)?;
    let projection = decode::<T>(&dir.join(&sidecar.projection.file), &sidecar.projection)?;
    if theta.nrows() != variances.nrows() || theta.ncols() != projection.ncols() || variances.ncols() != 2 {
        return Err(BakrError::Data {
            path: dir.to_path_buf(),
            message: "chain blocks have inconsistent shapes".into(),
        });
    }
    let chain = PosteriorChain {
        sigma2: variances.column(0).iter().copied().collect(),
        tau2: variances.column(1).iter().copied().collect(),
        theta,
        projection,
        meta: sidecar.meta.clone(),
    };
    let model = FittedModel {
        chain,
        transform: sidecar.transform.clone(),
        y_mean: sidecar.y_mean,
    };
    Ok((model, sidecar))
}

/// Kernel factors and the centered training response, kept next to a chain
/// so that permutation calibration can rerun the sampler without rebuilding
/// the kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSidecar {
    pub format_version: u32,
    pub variance_explained: f64,
    pub variance_threshold: f64,
    pub source: Option<KernelSpec>,
    pub factors: BlockShape,
    pub eigenvalues: BlockShape,
    pub response: BlockShape,
}

pub fn save_factorization<T: Real>(
    dir: &Path,
    fact: &KernelFactorization<T>,
    centered_y: &[T],
) -> Result<FactorSidecar> {
    if centered_y.len() != fact.n() {
        return Err(BakrError::shape(
            "save_factorization",
            format!("{} responses", fact.n()),
            centered_y.len(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| BakrError::io(dir, e))?;
    let (n, q) = (fact.n(), fact.q());
    write_atomic(&dir.join(FACTORS), &encode(n, q, |i, j| fact.u[(i, j)]))?;
    write_atomic(&dir.join(EIGENVALUES), &encode(1, q, |_, j| fact.lambda[j]))?;
    write_atomic(&dir.join(RESPONSE), &encode(n, 1, |i, _| centered_y[i]))?;
    let sidecar = FactorSidecar {
        format_version: FORMAT_VERSION,
        variance_explained: fact.variance_explained,
        variance_threshold: fact.variance_threshold,
        source: fact.source,
        factors: block(FACTORS, n, q),
        eigenvalues: block(EIGENVALUES, 1, q),
        response: block(RESPONSE, n, 1),
    };
    write_json(&dir.join(FACTOR_SIDECAR), &sidecar)?;
    Ok(sidecar)
}

/// Returns the factorization and the centered training response.
pub fn load_factorization<T: Real>(dir: &Path) -> Result<(KernelFactorization<T>, Vec<T>)> {
    let sidecar: FactorSidecar = read_json(&dir.join(FACTOR_SIDECAR))?;
    let u = decode::<T>(&dir.join(&sidecar.factors.file), &sidecar.factors)?;
    let lambda = decode::<T>(&dir.join(&sidecar.eigenvalues.file), &sidecar.eigenvalues)?;
    let y = decode::<T>(&dir.join(&sidecar.response.file), &sidecar.response)?;
    if lambda.ncols() != u.ncols() || y.nrows() != u.nrows() {
        return Err(BakrError::Data {
            path: dir.to_path_buf(),
            message: "factor blocks have inconsistent shapes".into(),
        });
    }
    let fact = KernelFactorization {
        u,
        lambda: lambda.row(0).transpose(),
        variance_explained: sidecar.variance_explained,
        variance_threshold: sidecar.variance_threshold,
        source: sidecar.source,
    };
    Ok((fact, y.iter().copied().collect()))
}
