//! Flat run configuration: one TOML file plus command line overrides.

use std::path::{Path, PathBuf};

use bakr::data::{LoadOptions, NaPolicy, TableFormat};
use bakr::eval::ChainSeeding;
use bakr::rng::derive_seed;
use bakr::{HyperParams, KernelFamily, ModelConfig, Preprocessing, ProjectionMode, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory under which commands write
/// when no output directory is given.
pub const OUTPUT_ROOT_ENV: &str = "BAKR_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    One,
    Two,
    Polynomial,
}

/// How the magnitude threshold `z` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ZPolicy {
    /// `(1 - kappa)` quantile of the pooled magnitudes.
    #[default]
    Quantile,
    Fixed,
}

/// How the inclusion cutoff `r` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RPolicy {
    #[default]
    Fixed,
    Permutation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    /// Held-out MSPE and power per bandwidth, plus the linear baseline.
    #[default]
    Prediction,
    /// Kernel versus chain variance of R^2 on one polynomial dataset.
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub x_star: Option<PathBuf>,
    /// Directory written by `fit`.
    pub chain: Option<PathBuf>,
    pub output: Option<PathBuf>,

    /// Data files start with a header row.
    pub header: bool,
    /// Covariate files carry a leading id column.
    pub row_ids: bool,
    pub y_row_ids: bool,
    /// Covariate files store samples as columns.
    pub transpose: bool,
    pub na_policy: NaPolicy,

    pub family: KernelFamily,
    pub h: f64,
    /// Random features; defaults to the number of covariates.
    pub d: Option<usize>,
    pub q_var: f64,
    pub preprocessing: Preprocessing,
    pub projection: ProjectionMode,
    pub pinv_tolerance: f64,
    pub precision: Precision,

    pub nu: f64,
    pub phi: f64,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,

    pub z_policy: ZPolicy,
    pub kappa: f64,
    pub z: Option<f64>,
    pub r_policy: RPolicy,
    pub r: f64,
    pub perms: usize,
    pub fwer: f64,

    /// Share of samples used for training; below 1 the rest is held out.
    pub train_fraction: f64,
    pub levels: Vec<f64>,

    pub scenario: Scenario,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub h2: f64,
    pub rho: Option<f64>,
    pub n_additive: usize,
    pub n_interaction: usize,
    pub n_causal: usize,

    pub study: Study,
    pub h_grid: Vec<f64>,
    pub replicates: usize,
    pub baseline: bool,
    pub kernels: usize,
    pub chains: usize,
    pub seeding: ChainSeeding,
    /// Worker threads for `benchmark`; 0 picks one per core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            seed: 1,
            x: None,
            y: None,
            x_star: None,
            chain: None,
            output: None,
            header: true,
            row_ids: true,
            y_row_ids: false,
            transpose: false,
            na_policy: NaPolicy::Error,
            family: model.family,
            h: model.bandwidth,
            d: None,
            q_var: model.variance_threshold,
            preprocessing: model.preprocessing,
            projection: model.projection,
            pinv_tolerance: model.pinv_tolerance,
            precision: Precision::F64,
            nu: model.hyper.nu,
            phi: model.hyper.phi,
            iters: model.sampler.total_iterations,
            burnin: model.sampler.burn_in,
            thin: model.sampler.thin,
            z_policy: ZPolicy::Quantile,
            kappa: bakr::selection::DEFAULT_KAPPA,
            z: None,
            r_policy: RPolicy::Fixed,
            r: bakr::selection::DEFAULT_INCLUSION,
            perms: bakr::selection::DEFAULT_PERMUTATIONS,
            fwer: bakr::selection::DEFAULT_FWER,
            train_fraction: 0.5,
            levels: vec![0.95],
            scenario: Scenario::One,
            n: None,
            p: None,
            h2: 0.6,
            rho: None,
            n_additive: 25,
            n_interaction: 25,
            n_causal: 100,
            study: Study::Prediction,
            h_grid: vec![5.0, 2.0, 1.0, 0.5, 0.01],
            replicates: 100,
            baseline: true,
            kernels: 10,
            chains: 10,
            seeding: ChainSeeding::PerCell,
            jobs: 0,
        }
    }
}

/// Seeds derived from the base seed, one stream per purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub base: u64,
    pub kernel: u64,
    pub chain: u64,
    pub split: u64,
    pub permutation: u64,
}

impl RunConfig {
    /// Reads an optional config file and applies `key = value` overrides on
    /// top; overrides win.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            table.insert(key.clone(), value.clone());
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg.absolutized())
    }

    /// Resolved configs must not depend on the working directory.
    fn absolutized(mut self) -> Self {
        for p in [
            &mut self.x,
            &mut self.y,
            &mut self.x_star,
            &mut self.chain,
            &mut self.output,
        ] {
            if let Some(path) = p.take() {
                *p = Some(std::path::absolute(&path).unwrap_or(path));
            }
        }
        self
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if self.d == Some(0) {
            return bad("d must be at least 1".into());
        }
        if !(self.q_var > 0.0 && self.q_var <= 1.0) {
            return bad(format!("q_var must lie in (0, 1], got {}", self.q_var));
        }
        if self.burnin >= self.iters {
            return bad(format!("burnin ({}) must be below iters ({})", self.burnin, self.iters));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            ));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho must lie in (0, 1), got {rho}"));
            }
        }
        if !(self.h2 > 0.0 && self.h2 < 1.0) {
            return bad(format!("h2 must lie in (0, 1), got {}", self.h2));
        }
        if !(0.0..1.0).contains(&self.r) {
            return bad(format!("r must lie in [0, 1), got {}", self.r));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if !(self.fwer > 0.0 && self.fwer < 1.0) {
            return bad(format!("fwer must lie in (0, 1), got {}", self.fwer));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("interval levels must lie in (0, 1)".into());
        }
        self.hyper().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            base: self.seed,
            kernel: derive_seed(self.seed, &[1]),
            chain: derive_seed(self.seed, &[2]),
            split: derive_seed(self.seed, &[3]),
            permutation: derive_seed(self.seed, &[4]),
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            nu: self.nu,
            phi: self.phi,
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            total_iterations: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed,
        }
    }

    pub fn model(&self) -> ModelConfig {
        let seeds = self.seeds();
        ModelConfig {
            family: self.family,
            bandwidth: self.h,
            feature_count: self.d,
            kernel_seed: seeds.kernel,
            variance_threshold: self.q_var,
            hyper: self.hyper(),
            sampler: self.sampler(seeds.chain),
            projection: self.projection,
            pinv_tolerance: self.pinv_tolerance,
            preprocessing: self.preprocessing,
        }
    }

    pub fn load_options(&self, path: &Path) -> LoadOptions {
        LoadOptions {
            format: TableFormat::from_path(path),
            has_header: self.header,
            has_row_ids: self.row_ids,
            transpose: self.transpose,
            na_policy: self.na_policy,
        }
    }

    pub fn response_options(&self, path: &Path) -> LoadOptions {
        LoadOptions {
            format: TableFormat::from_path(path),
            has_header: self.header,
            has_row_ids: self.y_row_ids,
            transpose: false,
            na_policy: NaPolicy::Error,
        }
    }

    /// Output directory: explicit setting, else `$BAKR_OUTPUT_ROOT/<command>`,
    /// else `bakr-out/<command>`.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        if let Some(dir) = &self.output {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("bakr-out"));
        root.join(command)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Parses a command line value as TOML, falling back to a plain string so
/// that `--set family=linear-exact` works without quotes.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
