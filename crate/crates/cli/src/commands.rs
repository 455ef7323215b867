use std::path::{Path, PathBuf};
use std::time::Instant;

use bakr::data::{
    load_matrix, load_vector, save_matrix, save_vector, simulate_polynomial, simulate_scenario, split, DesignMatrix,
    PolynomialConfig, ScenarioConfig, SimulatedDataset, TableFormat,
};
use bakr::eval::{mspe, power_curve, r_squared, variance_decomposition, DecompositionConfig};
use bakr::io::{load_factorization, load_fitted, save_factorization, save_fitted, write_atomic, write_json};
use bakr::model::{posterior_summary, ProjectionOperator};
use bakr::rng::derive_seed;
use bakr::selection::{default_threshold, permutation_threshold, ppaa, AssociationResult, Calibration};
use bakr::stats::{mean, sample_variance};
use bakr::{prepare, BakrError, KernelFamily, ModelConfig, Real};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Precision, RPolicy, RunConfig, Scenario, Study, ZPolicy, RESOLVED_CONFIG};
use crate::{CliError, Context};

const CHAIN_DIR: &str = "chain";

fn required<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required setting '{name}'")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| BakrError::Io {
            path: dir.into(),
            source: e,
        })
        .ctx("output")
}

/// Resolved config next to the outputs, then wall time in its own file so
/// that every other output stays bit-identical across reruns.
fn finish(dir: &Path, cfg: &RunConfig, command: &str, started: Instant) -> Result<(), CliError> {
    let resolved = RunConfig {
        output: Some(std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf())),
        ..cfg.clone()
    };
    write_atomic(&dir.join(RESOLVED_CONFIG), resolved.to_toml().as_bytes()).ctx("output")?;
    #[derive(Serialize)]
    struct Timing<'a> {
        command: &'a str,
        seconds: f64,
    }
    write_json(
        &dir.join("timing.json"),
        &Timing {
            command,
            seconds: started.elapsed().as_secs_f64(),
        },
    )
    .ctx("output")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(BakrError::from).ctx("output")?;
    for row in rows {
        writer.write_record(&row).map_err(BakrError::from).ctx("output")?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| BakrError::Io {
            path: path.into(),
            source: e.into_error(),
        })
        .ctx("output")?;
    write_atomic(path, &bytes).ctx("output")
}

fn simulate_dataset(cfg: &RunConfig, seed: u64) -> Result<SimulatedDataset, CliError> {
    let data = match cfg.scenario {
        Scenario::One | Scenario::Two => {
            let base = if cfg.scenario == Scenario::One {
                ScenarioConfig::scenario_one(seed)
            } else {
                ScenarioConfig::scenario_two(seed)
            };
            simulate_scenario(&ScenarioConfig {
                n: cfg.n.unwrap_or(base.n),
                p: cfg.p.unwrap_or(base.p),
                h2: cfg.h2,
                rho: cfg.rho.unwrap_or(base.rho),
                n_additive: cfg.n_additive,
                n_interaction: cfg.n_interaction,
                seed,
            })
        }
        Scenario::Polynomial => {
            let base = PolynomialConfig::new(cfg.n.unwrap_or(500), seed);
            simulate_polynomial(&PolynomialConfig {
                p: cfg.p.unwrap_or(base.p),
                n_causal: cfg.n_causal,
                ..base
            })
        }
    };
    // generator arguments come straight from the config
    data.map_err(|e| match e {
        BakrError::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::core("simulate", other),
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let data = simulate_dataset(cfg, cfg.seed)?;
    let dir = cfg.output_dir("simulate");
    create_dir(&dir)?;
    save_matrix(&dir.join("X.csv"), &data.x, TableFormat::Csv, true).ctx("simulate")?;
    save_vector(&dir.join("y.csv"), "y", &data.y).ctx("simulate")?;
    write_json(&dir.join("truth.json"), &data.truth).ctx("simulate")?;
    finish(&dir, cfg, "simulate", started)?;
    log::info!("simulated {}x{} into {}", data.x.nrows(), data.x.ncols(), dir.display());
    Ok(dir)
}

#[derive(Serialize)]
struct Holdout {
    n: usize,
    mspe: f64,
    r_squared: f64,
}

#[derive(Serialize)]
struct FitSummary {
    n_train: usize,
    p: usize,
    q: usize,
    feature_count: Option<usize>,
    variance_explained: f64,
    draws: usize,
    seeds: crate::config::Seeds,
    y_mean: f64,
    sigma2_mean: f64,
    tau2_mean: f64,
    holdout: Option<Holdout>,
}

fn read_inputs(cfg: &RunConfig) -> Result<(DesignMatrix, Vec<f64>), CliError> {
    let x_path = required(&cfg.x, "x")?;
    let y_path = required(&cfg.y, "y")?;
    let x = load_matrix(x_path, &cfg.load_options(x_path)).ctx("loading covariates")?;
    let y = load_vector(y_path, &cfg.response_options(y_path)).ctx("loading response")?;
    if x.nrows() != y.len() {
        return Err(CliError::core(
            "loading response",
            BakrError::Data {
                path: y_path.into(),
                message: format!("{} responses for {} samples", y.len(), x.nrows()),
            },
        ));
    }
    Ok((x, y))
}

pub fn fit(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    match cfg.precision {
        Precision::F32 => fit_as::<f32>(cfg),
        Precision::F64 => fit_as::<f64>(cfg),
    }
}

fn fit_as<T: Real>(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let (x, y) = read_inputs(cfg)?;
    let seeds = cfg.seeds();
    let (train, test) = if cfg.train_fraction < 1.0 {
        let s = split(x.nrows(), cfg.train_fraction, seeds.split).map_err(|e| CliError::Usage(e.to_string()))?;
        (s.train, s.test)
    } else {
        ((0..x.nrows()).collect(), Vec::new())
    };
    let x_train = x.select_rows(&train);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let model = cfg.model();
    let prepared = prepare::<T>(&x_train, &model).ctx("kernel")?;
    let fitted = prepared.fit(&y_train, &model.hyper, &model.sampler).ctx("sampler")?;

    let dir = cfg.output_dir("fit");
    let chain_dir = dir.join(CHAIN_DIR);
    save_fitted(&chain_dir, &fitted, &x.col_ids).ctx("saving chain")?;
    let centered: Vec<T> = y_train.iter().map(|v| T::lit(v - fitted.y_mean)).collect();
    save_factorization(&chain_dir, &prepared.factorization, &centered).ctx("saving chain")?;

    let summary = posterior_summary(&fitted.chain).ctx("summary")?;
    let beta_mean = fitted.source_effects(&summary.beta_mean);
    let beta_sd = fitted.source_effects(&summary.beta_sd);
    write_csv(
        &dir.join("effects.csv"),
        &["column", "beta_mean", "beta_sd"],
        x.col_ids
            .iter()
            .zip(beta_mean.iter().zip(&beta_sd))
            .map(|(c, (m, s))| vec![c.clone(), m.to_string(), s.to_string()]),
    )?;

    let holdout = if test.is_empty() {
        None
    } else {
        let x_test = x.select_rows(&test);
        let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let y_hat = fitted.predict_mean(&x_test).ctx("holdout prediction")?;
        Some(Holdout {
            n: test.len(),
            mspe: mspe(&y_test, &y_hat).ctx("holdout prediction")?,
            r_squared: r_squared(&y_test, &y_hat).unwrap_or(f64::NAN),
        })
    };
    let fit_summary = FitSummary {
        n_train: train.len(),
        p: x.ncols(),
        q: fitted.chain.q(),
        feature_count: fitted
            .chain
            .meta
            .kernel
            .filter(|k| k.family == KernelFamily::GaussianRff)
            .map(|k| k.feature_count),
        variance_explained: fitted.chain.meta.variance_explained,
        draws: fitted.chain.len(),
        seeds,
        y_mean: fitted.y_mean,
        sigma2_mean: summary.sigma2_mean,
        tau2_mean: summary.tau2_mean,
        holdout,
    };
    write_json(&dir.join("summary.json"), &fit_summary).ctx("output")?;
    write_atomic(&chain_dir.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes()).ctx("output")?;
    finish(&dir, cfg, "fit", started)?;
    log::info!("q = {}, {} draws retained", fit_summary.q, fit_summary.draws);
    Ok(dir)
}

/// `fit` output directories hold the chain in a subdirectory; accept either.
fn chain_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = required(&cfg.chain, "chain")?;
    let nested = dir.join(CHAIN_DIR);
    let dir = if nested.join(bakr::io::SIDECAR).exists() {
        nested
    } else {
        dir.to_path_buf()
    };
    if !dir.join(bakr::io::SIDECAR).exists() {
        return Err(CliError::core(
            "loading chain",
            BakrError::Data {
                path: dir.join(bakr::io::SIDECAR),
                message: "chain sidecar not found".into(),
            },
        ));
    }
    Ok(dir)
}

fn chain_precision(dir: &Path) -> Result<Precision, CliError> {
    let sidecar: bakr::io::ChainSidecar = bakr::io::read_json(&dir.join(bakr::io::SIDECAR)).ctx("loading chain")?;
    Ok(if sidecar.scalar == "f32" {
        Precision::F32
    } else {
        Precision::F64
    })
}

fn has_data_rows(path: &Path, header: bool) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BakrError::Io {
            path: path.into(),
            source: e,
        })
        .ctx("loading new covariates")?;
    let lines = text.lines().filter(|l| !l.trim().is_empty()).count();
    Ok(lines > usize::from(header))
}

pub fn predict(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = chain_dir(cfg)?;
    match chain_precision(&dir)? {
        Precision::F32 => predict_as::<f32>(cfg, &dir),
        Precision::F64 => predict_as::<f64>(cfg, &dir),
    }
}

fn predict_as<T: Real>(cfg: &RunConfig, chain: &Path) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let (fitted, _) = load_fitted::<T>(chain).ctx("loading chain")?;
    let x_path = required(&cfg.x_star, "x_star")?;
    if !has_data_rows(x_path, cfg.header && !cfg.transpose)? {
        return Err(CliError::Usage(format!(
            "{} holds no samples to predict",
            x_path.display()
        )));
    }
    let x_star = load_matrix(x_path, &cfg.load_options(x_path)).ctx("loading new covariates")?;
    let pred = fitted.predict(&x_star, &cfg.levels).ctx("prediction")?;

    let dir = cfg.output_dir("predict");
    create_dir(&dir)?;
    let mut header = vec!["id".to_string(), "mean".to_string()];
    for iv in &pred.intervals {
        header.push(format!("lower_{}", iv.level));
        header.push(format!("upper_{}", iv.level));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..x_star.nrows()).map(|i| {
        let mut row = vec![x_star.row_ids[i].clone(), pred.mean[i].as_f64().to_string()];
        for iv in &pred.intervals {
            row.push(iv.lower[i].to_string());
            row.push(iv.upper[i].to_string());
        }
        row
    });
    write_csv(&dir.join("predictions.csv"), &header_refs, rows)?;

    if let Some(y_path) = &cfg.y {
        let y = load_vector(y_path, &cfg.response_options(y_path)).ctx("loading response")?;
        let y_hat: Vec<f64> = pred.mean.iter().map(|v| v.as_f64()).collect();
        let holdout = Holdout {
            n: y.len(),
            mspe: mspe(&y, &y_hat).ctx("evaluation")?,
            r_squared: r_squared(&y, &y_hat).unwrap_or(f64::NAN),
        };
        write_json(&dir.join("evaluation.json"), &holdout).ctx("output")?;
    }
    finish(&dir, cfg, "predict", started)?;
    Ok(dir)
}

#[derive(Serialize)]
struct AssociationOutput<'a> {
    columns: &'a [String],
    selected_columns: Vec<String>,
    #[serde(flatten)]
    result: &'a AssociationResult,
}

pub fn associate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = chain_dir(cfg)?;
    match chain_precision(&dir)? {
        Precision::F32 => associate_as::<f32>(cfg, &dir),
        Precision::F64 => associate_as::<f64>(cfg, &dir),
    }
}

fn associate_as<T: Real>(cfg: &RunConfig, chain_path: &Path) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let (fitted, sidecar) = load_fitted::<T>(chain_path).ctx("loading chain")?;
    let chain = &fitted.chain;
    let (z, z_calibration) = match cfg.z_policy {
        ZPolicy::Quantile => (
            default_threshold(chain, cfg.kappa).ctx("threshold")?,
            Calibration::DefaultQuantile { kappa: cfg.kappa },
        ),
        ZPolicy::Fixed => {
            let z = cfg
                .z
                .ok_or_else(|| CliError::Usage("z_policy = \"fixed\" needs a value for z".into()))?;
            if z.is_nan() || z < 0.0 {
                return Err(CliError::Usage(format!("z must be non-negative, got {z}")));
            }
            (z, Calibration::Fixed)
        }
    };
    let scores = ppaa(chain, z).ctx("association")?;
    let (r, r_calibration) = match cfg.r_policy {
        RPolicy::Fixed => (cfg.r, Calibration::Fixed),
        RPolicy::Permutation => {
            let (fact, y) = load_factorization::<T>(chain_path).ctx("loading kernel factors")?;
            let proj = ProjectionOperator {
                matrix: chain.projection.clone(),
                mode: chain.meta.projection_mode,
                tolerance: cfg.pinv_tolerance,
            };
            let calib = permutation_threshold(
                &y,
                &fact,
                &proj,
                &chain.meta.hyper,
                &chain.meta.sampler,
                z,
                cfg.perms,
                cfg.fwer,
                cfg.seeds().permutation,
            )
            .map_err(|e| match e {
                BakrError::InvalidArgument(m) => CliError::Usage(m),
                other => CliError::core("permutation calibration", other),
            })?;
            (calib.inclusion_r, calib.calibration())
        }
    };
    let scores = fitted.source_effects(&scores);
    let result = AssociationResult::new(scores, z, z_calibration, r, r_calibration);

    let dir = cfg.output_dir("associate");
    create_dir(&dir)?;
    let columns = &sidecar.columns;
    write_csv(
        &dir.join("association.csv"),
        &["column", "ppaa", "selected"],
        columns
            .iter()
            .zip(&result.ppaa)
            .map(|(c, &s)| vec![c.clone(), s.to_string(), (s > r).to_string()]),
    )?;
    let out = AssociationOutput {
        columns,
        selected_columns: result.selected.iter().map(|&j| columns[j].clone()).collect(),
        result: &result,
    };
    write_json(&dir.join("association.json"), &out).ctx("output")?;
    finish(&dir, cfg, "associate", started)?;
    log::info!(
        "{} of {} covariates selected at z = {z}, r = {r}",
        result.selected.len(),
        columns.len()
    );
    Ok(dir)
}

#[derive(Clone, Debug, Serialize)]
struct BenchmarkRow {
    replicate: usize,
    dataset_seed: u64,
    model: String,
    h: Option<f64>,
    q: usize,
    mspe: f64,
    r_squared: f64,
    auc_group1: Option<f64>,
    auc_group2: Option<f64>,
}

#[derive(Serialize)]
struct ModelSummary {
    model: String,
    runs: usize,
    mspe_mean: f64,
    mspe_sd: f64,
    auc_group1_mean: Option<f64>,
    auc_group2_mean: Option<f64>,
}

fn opt_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

fn auc(effects: &[f64], truth: &[usize]) -> Option<f64> {
    power_curve(effects, truth).ok().map(|c| c.auc())
}

fn benchmark_cell<T: Real>(
    cfg: &RunConfig,
    replicate: usize,
    model_name: &str,
    h: Option<f64>,
) -> Result<BenchmarkRow, CliError> {
    let dataset_seed = derive_seed(cfg.seed, &[10, replicate as u64]);
    let data = simulate_dataset(cfg, dataset_seed)?;
    let s = split(data.x.nrows(), cfg.train_fraction, derive_seed(dataset_seed, &[1]))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let x_train = data.x.select_rows(&s.train);
    let y_train: Vec<f64> = s.train.iter().map(|&i| data.y[i]).collect();
    let x_test = data.x.select_rows(&s.test);
    let y_test: Vec<f64> = s.test.iter().map(|&i| data.y[i]).collect();
    let base = cfg.model();
    let model = ModelConfig {
        family: if h.is_some() {
            base.family
        } else {
            KernelFamily::LinearExact
        },
        bandwidth: h.unwrap_or(base.bandwidth),
        kernel_seed: derive_seed(cfg.seed, &[11, replicate as u64]),
        sampler: cfg.sampler(derive_seed(cfg.seed, &[12, replicate as u64])),
        ..base
    };
    let fitted = bakr::fit::<T>(&x_train, &y_train, &model).ctx("benchmark fit")?;
    let y_hat = fitted.predict_mean(&x_test).ctx("benchmark prediction")?;
    let summary = posterior_summary(&fitted.chain).ctx("benchmark")?;
    let effects = fitted.source_effects(&summary.beta_mean);
    Ok(BenchmarkRow {
        replicate,
        dataset_seed,
        model: model_name.to_string(),
        h,
        q: fitted.chain.q(),
        mspe: mspe(&y_test, &y_hat).ctx("benchmark")?,
        r_squared: r_squared(&y_test, &y_hat).unwrap_or(f64::NAN),
        auc_group1: auc(&effects, &data.truth.causal_group1),
        auc_group2: auc(&effects, &data.truth.causal_group2),
    })
}

pub fn benchmark(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    if cfg.train_fraction >= 1.0 && cfg.study == Study::Prediction {
        return Err(CliError::Usage(
            "benchmark needs train_fraction below 1 for a holdout".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let dir = cfg.output_dir("benchmark");
    create_dir(&dir)?;
    match cfg.study {
        Study::Prediction => pool.install(|| prediction_study(cfg, &dir))?,
        Study::Variance => pool.install(|| variance_study(cfg, &dir))?,
    }
    finish(&dir, cfg, "benchmark", started)?;
    Ok(dir)
}

fn prediction_study(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut models: Vec<(String, Option<f64>)> = cfg.h_grid.iter().map(|&h| (format!("bakr-h{h}"), Some(h))).collect();
    if cfg.baseline {
        models.push(("linear".to_string(), None));
    }
    if models.is_empty() || cfg.replicates == 0 {
        return Err(CliError::Usage("benchmark grid is empty".into()));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| (0..models.len()).map(move |m| (r, m)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(r, m)| {
            let (name, h) = &models[m];
            match cfg.precision {
                Precision::F32 => benchmark_cell::<f32>(cfg, r, name, *h),
                Precision::F64 => benchmark_cell::<f64>(cfg, r, name, *h),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    write_csv(
        &dir.join("results.csv"),
        &[
            "replicate",
            "dataset_seed",
            "model",
            "h",
            "q",
            "mspe",
            "r_squared",
            "auc_group1",
            "auc_group2",
        ],
        rows.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                r.dataset_seed.to_string(),
                r.model.clone(),
                fmt(r.h),
                r.q.to_string(),
                r.mspe.to_string(),
                r.r_squared.to_string(),
                fmt(r.auc_group1),
                fmt(r.auc_group2),
            ]
        }),
    )?;
    let summaries: Vec<ModelSummary> = models
        .iter()
        .map(|(name, _)| {
            let mine: Vec<&BenchmarkRow> = rows.iter().filter(|r| &r.model == name).collect();
            let errors: Vec<f64> = mine.iter().map(|r| r.mspe).collect();
            ModelSummary {
                model: name.clone(),
                runs: mine.len(),
                mspe_mean: mean(&errors),
                mspe_sd: if errors.len() > 1 {
                    sample_variance(&errors).sqrt()
                } else {
                    0.0
                },
                auc_group1_mean: opt_mean(mine.iter().map(|r| r.auc_group1)),
                auc_group2_mean: opt_mean(mine.iter().map(|r| r.auc_group2)),
            }
        })
        .collect();
    write_json(&dir.join("summary.json"), &summaries).ctx("output")
}

fn variance_study(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let data = simulate_dataset(cfg, derive_seed(cfg.seed, &[20]))?;
    let study = DecompositionConfig {
        n_kernels: cfg.kernels,
        n_chains: cfg.chains,
        base_seed: derive_seed(cfg.seed, &[21]),
        seeding: cfg.seeding,
    };
    let result = match cfg.precision {
        Precision::F32 => variance_decomposition::<f32>(&data, &cfg.model(), &study),
        Precision::F64 => variance_decomposition::<f64>(&data, &cfg.model(), &study),
    }
    .map_err(|e| match e {
        BakrError::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::core("variance study", other),
    })?;
    write_csv(
        &dir.join("r2.csv"),
        &["kernel", "chain", "r_squared"],
        result.r2.iter().enumerate().flat_map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(move |(c, v)| vec![k.to_string(), c.to_string(), v.to_string()])
        }),
    )?;
    write_json(&dir.join("summary.json"), &result.decomposition).ctx("output")
}
