//! Matrix ingestion, standardization, train/test splits and the two
//! simulation generators (additive + pairwise-interaction genotype
//! scenarios, and the cubic polynomial model).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BakrError, Result};
use crate::io::write_atomic;
use crate::rng::rng_from_seed;
use crate::scalar::Real;

/// Per-column centering and scaling learned on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Number of columns of the matrix the record was fitted on.
    pub source_columns: usize,
    /// Source column indices kept after dropping constant columns.
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    /// Population standard deviation (divisor `n`).
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn dropped(&self) -> Vec<usize> {
        let mut keep = vec![false; self.source_columns];
        for &j in &self.kept {
            keep[j] = true;
        }
        (0..self.source_columns).filter(|&j| !keep[j]).collect()
    }

    /// Applies the stored parameters to a matrix with the source layout.
    pub fn apply(&self, x: &DesignMatrix) -> Result<DesignMatrix> {
        if x.ncols() != self.source_columns {
            return Err(BakrError::shape(
                "standardization",
                format!("{} columns", self.source_columns),
                format!("{} columns", x.ncols()),
            ));
        }
        let values = DMatrix::from_fn(x.nrows(), self.kept.len(), |i, k| {
            (x.values[(i, self.kept[k])] - self.mean[k]) / self.sd[k]
        });
        Ok(DesignMatrix {
            values,
            row_ids: x.row_ids.clone(),
            col_ids: self.kept.iter().map(|&j| x.col_ids[j].clone()).collect(),
            standardization: Some(self.clone()),
        })
    }
}

/// `n x p` covariate matrix with sample and covariate labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        let row_ids = (0..values.nrows()).map(|i| format!("s{}", i + 1)).collect();
        let col_ids = (0..values.ncols()).map(|j| format!("v{}", j + 1)).collect();
        DesignMatrix {
            values,
            row_ids,
            col_ids,
            standardization: None,
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_scalar<T: Real>(&self) -> DMatrix<T> {
        self.values.map(T::lit)
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let values = self.values.select_rows(rows.iter());
        DesignMatrix {
            values,
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            col_ids: self.col_ids.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// Centers each column and scales it to unit population sd. Constant
/// columns are dropped and reported; the fitted parameters are attached to
/// the result for reuse on test data.
pub fn standardize(x: &DesignMatrix) -> Result<DesignMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(BakrError::InvalidArgument(
            "standardization needs at least 2 rows".into(),
        ));
    }
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (j, col) in x.values.column_iter().enumerate() {
        let mean = col.sum() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            kept.push(j);
            means.push(mean);
            sds.push(sd);
        }
    }
    if kept.is_empty() {
        return Err(BakrError::InvalidArgument("every column is constant".into()));
    }
    let record = Standardization {
        source_columns: x.ncols(),
        kept,
        mean: means,
        sd: sds,
    };
    let dropped = record.dropped();
    if !dropped.is_empty() {
        log::info!(
            "dropped {} constant column(s): {}",
            dropped.len(),
            dropped
                .iter()
                .map(|&j| x.col_ids[j].as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    record.apply(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NaPolicy {
    #[default]
    Error,
    MeanImpute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    #[default]
    Csv,
    Tsv,
}

impl TableFormat {
    pub fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }

    /// Guesses from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => TableFormat::Tsv,
            _ => TableFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LoadOptions {
    pub format: TableFormat,
    pub has_header: bool,
    pub has_row_ids: bool,
    /// File rows are covariates and file columns are samples.
    pub transpose: bool,
    pub na_policy: NaPolicy,
}

fn is_na(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a delimited numeric table.
pub fn load_matrix(path: &Path, opts: &LoadOptions) -> Result<DesignMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => BakrError::io(path, io),
            other => BakrError::Data {
                path: path.into(),
                message: format!("{other:?}"),
            },
        })?;
    let mut header: Option<Vec<String>> = None;
    let mut row_ids = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if line == 0 && opts.has_header {
            let skip = usize::from(opts.has_row_ids);
            header = Some(record.iter().skip(skip).map(str::to_string).collect());
            continue;
        }
        let mut fields = record.iter();
        if opts.has_row_ids {
            row_ids.push(fields.next().unwrap_or_default().to_string());
        }
        let start = cells.len();
        for (col, cell) in fields.enumerate() {
            if is_na(cell) {
                if opts.na_policy == NaPolicy::Error {
                    return Err(BakrError::Parse {
                        path: path.into(),
                        row: line + 1,
                        col: col + 1 + usize::from(opts.has_row_ids),
                        message: format!("missing value '{cell}'"),
                    });
                }
                cells.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| BakrError::Parse {
                path: path.into(),
                row: line + 1,
                col: col + 1 + usize::from(opts.has_row_ids),
                message: format!("not a number: '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(BakrError::Parse {
                    path: path.into(),
                    row: line + 1,
                    col: col + 1 + usize::from(opts.has_row_ids),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            cells.push(Some(v));
        }
        let len = cells.len() - start;
        match width {
            None => width = Some(len),
            Some(w) if w != len => {
                return Err(BakrError::Data {
                    path: path.into(),
                    message: format!("ragged input: line {} has {len} values, expected {w}", line + 1),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(BakrError::Data {
            path: path.into(),
            message: "no numeric data".into(),
        });
    }
    if let Some(h) = &header {
        if h.len() != cols {
            return Err(BakrError::Data {
                path: path.into(),
                message: format!("header has {} names for {cols} columns", h.len()),
            });
        }
    }
    let mut grid = DMatrix::<f64>::zeros(rows, cols);
    let mut missing = Vec::new();
    for (k, cell) in cells.into_iter().enumerate() {
        let (i, j) = (k / cols, k % cols);
        match cell {
            Some(v) => grid[(i, j)] = v,
            None => missing.push((i, j)),
        }
    }
    // imputation is per covariate, so orient first
    let (values, row_ids_final, col_ids_final) = if opts.transpose {
        (grid.transpose(), header, (!row_ids.is_empty()).then_some(row_ids))
    } else {
        (grid, (!row_ids.is_empty()).then_some(row_ids), header)
    };
    let mut values = values;
    if !missing.is_empty() {
        let missing: Vec<(usize, usize)> = missing
            .into_iter()
            .map(|(i, j)| if opts.transpose { (j, i) } else { (i, j) })
            .collect();
        let mut is_missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        for &(i, j) in &missing {
            is_missing[(i, j)] = true;
        }
        for j in 0..values.ncols() {
            let observed: Vec<f64> = (0..values.nrows())
                .filter(|&i| !is_missing[(i, j)])
                .map(|i| values[(i, j)])
                .collect();
            if observed.is_empty() {
                return Err(BakrError::Data {
                    path: path.into(),
                    message: format!("covariate {} has no observed values to impute from", j + 1),
                });
            }
            let mean = observed.iter().sum::<f64>() / observed.len() as f64;
            for i in 0..values.nrows() {
                if is_missing[(i, j)] {
                    values[(i, j)] = mean;
                }
            }
        }
    }
    let mut dm = DesignMatrix::new(values);
    if let Some(ids) = row_ids_final {
        dm.row_ids = ids;
    }
    if let Some(ids) = col_ids_final {
        dm.col_ids = ids;
    }
    Ok(dm)
}

/// Reads a response vector: a single column (or a single row).
pub fn load_vector(path: &Path, opts: &LoadOptions) -> Result<Vec<f64>> {
    let m = load_matrix(path, opts)?;
    if m.ncols() == 1 {
        Ok(m.values.column(0).iter().copied().collect())
    } else if m.nrows() == 1 {
        Ok(m.values.row(0).iter().copied().collect())
    } else {
        Err(BakrError::Data {
            path: path.into(),
            message: format!("expected a single column, found {}x{}", m.nrows(), m.ncols()),
        })
    }
}

/// Writes values with shortest round-trip formatting so that reloading
/// reproduces them bit for bit.
pub fn save_matrix(path: &Path, x: &DesignMatrix, format: TableFormat, with_labels: bool) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(Vec::new());
    if with_labels {
        let mut header = vec!["id".to_string()];
        header.extend(x.col_ids.iter().cloned());
        writer.write_record(&header)?;
    }
    for (i, row) in x.values.row_iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(row.len() + 1);
        if with_labels {
            fields.push(x.row_ids[i].clone());
        }
        fields.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&fields)?;
    }
    let bytes = writer.into_inner().map_err(|e| BakrError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn save_vector(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 20);
    out.push_str(header);
    out.push('\n');
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n`; each side is returned sorted.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(BakrError::InvalidArgument(format!(
            "train fraction {train_fraction} leaves an empty side for n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    /// Broad-sense heritability.
    pub h2: f64,
    /// Share of `h2` carried by the additive group.
    pub rho: f64,
    pub n_additive: usize,
    pub n_interaction: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn scenario_one(seed: u64) -> Self {
        ScenarioConfig {
            n: 500,
            p: 2000,
            h2: 0.6,
            rho: 0.2,
            n_additive: 25,
            n_interaction: 25,
            seed,
        }
    }

    pub fn scenario_two(seed: u64) -> Self {
        ScenarioConfig {
            rho: 0.8,
            ..Self::scenario_one(seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    /// Additive causal covariates (zero-based).
    pub causal_group1: Vec<usize>,
    /// Interacting causal covariates (zero-based).
    pub causal_group2: Vec<usize>,
    pub true_b: Vec<f64>,
    pub true_a: Vec<f64>,
    pub interaction_pairs: Vec<(usize, usize)>,
    pub target_h2: Option<f64>,
    pub target_rho: Option<f64>,
    /// Realized `var(genetic) / var(y)`.
    pub achieved_h2: f64,
    /// Realized `var(Xb) / var(genetic)`.
    pub achieved_rho: f64,
    /// Realized `var(Xb) / var(y)`.
    pub additive_fraction: f64,
    /// Realized `var(Wa) / var(y)`.
    pub interaction_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    /// Raw genotype dosages in `{0, 1, 2}`.
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    pub truth: SimulationTruth,
}

/// Genotype dosages: per-column minor allele frequency `U[0.05, 0.5]`,
/// entries `Binomial(2, maf)`.
fn simulate_genotypes<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    let mafs: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..0.5)).collect();
    let mut x = DMatrix::zeros(n, p);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            let a = u8::from(rng.random::<f64>() < mafs[j]);
            let b = u8::from(rng.random::<f64>() < mafs[j]);
            *v = f64::from(a + b);
        }
    }
    x
}

fn standard_normals<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn center(v: &mut DVector<f64>) {
    let m = v.mean();
    v.add_scalar_mut(-m);
}

fn pop_var(v: &DVector<f64>) -> f64 {
    let m = v.mean();
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Removes from `v` its component along each (centered) basis vector.
fn orthogonalize(v: &mut DVector<f64>, basis: &[&DVector<f64>]) {
    for b in basis {
        let nb = b.norm_squared();
        if nb > 0.0 {
            let c = v.dot(b) / nb;
            v.axpy(-c, b, 1.0);
        }
    }
}

fn rescale(v: &mut DVector<f64>, target_var: f64, what: &str) -> Result<()> {
    let var = pop_var(v);
    if var.is_nan() || var <= 0.0 {
        return Err(BakrError::InvalidArgument(format!(
            "simulated {what} component has zero variance"
        )));
    }
    *v *= (target_var / var).sqrt();
    Ok(())
}

/// `y = X b + W a + e` with 25 additive and 25 interacting causal SNPs.
///
/// `W` holds the products of every distinct pair of interacting SNP
/// dosages. The three components are centered, made mutually orthogonal on
/// the realized sample and rescaled, so that `var(Xb) = rho h2`,
/// `var(Wa) = (1 - rho) h2` and `var(e) = 1 - h2` hold exactly.
pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<SimulatedDataset> {
    if !(cfg.h2 > 0.0 && cfg.h2 < 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "h2 must lie in (0, 1), got {}",
            cfg.h2
        )));
    }
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
        return Err(BakrError::InvalidArgument(format!(
            "rho must lie in (0, 1), got {}",
            cfg.rho
        )));
    }
    let n_causal = cfg.n_additive + cfg.n_interaction;
    if cfg.p < n_causal.max(50) {
        return Err(BakrError::InvalidArgument(format!(
            "p = {} is too small for {n_causal} causal SNPs",
            cfg.p
        )));
    }
    if cfg.n < 2 || cfg.n_additive == 0 || cfg.n_interaction < 2 {
        return Err(BakrError::InvalidArgument(
            "need n >= 2, at least one additive and two interacting SNPs".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let x = simulate_genotypes(&mut rng, cfg.n, cfg.p);
    let causal = index::sample(&mut rng, cfg.p, n_causal).into_vec();
    let group1 = causal[..cfg.n_additive].to_vec();
    let group2 = causal[cfg.n_additive..].to_vec();
    let pairs: Vec<(usize, usize)> = (0..group2.len())
        .flat_map(|i| ((i + 1)..group2.len()).map(move |k| (i, k)))
        .map(|(i, k)| (group2[i], group2[k]))
        .collect();
    let b = standard_normals(&mut rng, group1.len());
    let a = standard_normals(&mut rng, pairs.len());
    let noise = standard_normals(&mut rng, cfg.n);

    let mut additive = DVector::from_fn(cfg.n, |i, _| group1.iter().zip(&b).map(|(&j, bj)| x[(i, j)] * bj).sum());
    let mut interaction = DVector::from_fn(cfg.n, |i, _| {
        pairs
            .iter()
            .zip(&a)
            .map(|(&(j, k), ak)| x[(i, j)] * x[(i, k)] * ak)
            .sum()
    });
    let mut error = DVector::from_vec(noise);
    center(&mut additive);
    center(&mut interaction);
    center(&mut error);
    orthogonalize(&mut interaction, &[&additive]);
    orthogonalize(&mut error, &[&additive, &interaction]);
    rescale(&mut additive, cfg.rho * cfg.h2, "additive")?;
    rescale(&mut interaction, (1.0 - cfg.rho) * cfg.h2, "interaction")?;
    rescale(&mut error, 1.0 - cfg.h2, "noise")?;

    let y: DVector<f64> = &additive + &interaction + &error;
    let var_y = pop_var(&y);
    let genetic = &additive + &interaction;
    let var_g = pop_var(&genetic);
    let truth = SimulationTruth {
        generator: "scenario".into(),
        seed: cfg.seed,
        n: cfg.n,
        p: cfg.p,
        causal_group1: group1,
        causal_group2: group2,
        true_b: b,
        true_a: a,
        interaction_pairs: pairs,
        target_h2: Some(cfg.h2),
        target_rho: Some(cfg.rho),
        achieved_h2: var_g / var_y,
        achieved_rho: pop_var(&additive) / var_g,
        additive_fraction: pop_var(&additive) / var_y,
        interaction_fraction: pop_var(&interaction) / var_y,
    };
    Ok(SimulatedDataset {
        x: DesignMatrix::new(x),
        y: y.iter().copied().collect(),
        truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialConfig {
    pub n: usize,
    pub p: usize,
    pub n_causal: usize,
    pub seed: u64,
}

impl PolynomialConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        PolynomialConfig {
            n,
            p: 2000,
            n_causal: 100,
            seed,
        }
    }
}

/// `y = (X o X o X) b + e`; the first `n_causal` covariates carry standard
/// normal effects and the rest are null.
pub fn simulate_polynomial(cfg: &PolynomialConfig) -> Result<SimulatedDataset> {
    if cfg.n_causal > cfg.p {
        return Err(BakrError::InvalidArgument(format!(
            "n_causal = {} exceeds p = {}",
            cfg.n_causal, cfg.p
        )));
    }
    if cfg.n == 0 || cfg.p == 0 {
        return Err(BakrError::InvalidArgument("n and p must be positive".into()));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let x = simulate_genotypes(&mut rng, cfg.n, cfg.p);
    let b = standard_normals(&mut rng, cfg.n_causal);
    let noise = standard_normals(&mut rng, cfg.n);
    Ok(polynomial_response(x, b, noise, cfg))
}

fn polynomial_response(x: DMatrix<f64>, b: Vec<f64>, noise: Vec<f64>, cfg: &PolynomialConfig) -> SimulatedDataset {
    let signal = DVector::from_fn(cfg.n, |i, _| {
        b.iter().enumerate().map(|(j, bj)| x[(i, j)].powi(3) * bj).sum()
    });
    let y: Vec<f64> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let yv = DVector::from_column_slice(&y);
    let var_y = pop_var(&yv);
    let frac = if var_y > 0.0 { pop_var(&signal) / var_y } else { 0.0 };
    let truth = SimulationTruth {
        generator: "polynomial".into(),
        seed: cfg.seed,
        n: cfg.n,
        p: cfg.p,
        causal_group1: (0..cfg.n_causal).collect(),
        causal_group2: Vec::new(),
        true_b: b,
        true_a: Vec::new(),
        interaction_pairs: Vec::new(),
        target_h2: None,
        target_rho: None,
        achieved_h2: frac,
        achieved_rho: 1.0,
        additive_fraction: frac,
        interaction_fraction: 0.0,
    };
    SimulatedDataset {
        x: DesignMatrix::new(x),
        y,
        truth,
    }
}
