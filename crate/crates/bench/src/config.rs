//! Experiment configuration: the TOML file, built-in profiles and overrides.
//!
//! Every key in the file is optional. Missing keys are filled from the
//! profile (`desk` or `paper`), so a file holding only `dgps = [...]` is a
//! complete configuration.

use std::fs;
use std::path::{Path, PathBuf};

use itrbench_core::cate::{EstimatorConfig, Strategy};
use itrbench_core::dgp::{DgpId, N_BLOCKS};
use itrbench_core::super_learner::LearnerKind;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// Environment variable that replaces `master_seed`.
pub const SEED_ENV: &str = "ITR_BENCH_SEED";

/// Number of covariates in the reference designs.
pub const FULL_P: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// B = 20 and 10⁵ Monte Carlo draws, with cheaper Super Learner settings.
    Desk,
    /// The full grid: B = 100 and the default estimator settings.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// One fit at a time on one thread.
    Serial,
    /// Replicates spread over a thread pool.
    Parallel,
}

/// Knobs on top of the profile's [`EstimatorConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorOverrides {
    pub cv_folds: Option<usize>,
    pub lambda_grid_size: Option<usize>,
    pub cross_fit_folds: Option<usize>,
    pub pi_floor: Option<f64>,
    pub boost_rounds: Option<usize>,
    /// Trees of the causal forest's nuisance forests.
    pub forest_trees: Option<usize>,
    pub causal_forest_trees: Option<usize>,
    pub super_learner_folds: Option<usize>,
    pub sl_cv_folds: Option<usize>,
    pub sl_lambda_grid_size: Option<usize>,
    pub sl_forest_trees: Option<usize>,
    pub sl_boost_rounds: Option<usize>,
}

impl EstimatorOverrides {
    pub fn apply(&self, cfg: &mut EstimatorConfig) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.cv_folds, self.cv_folds);
        set(&mut cfg.lambda_grid_size, self.lambda_grid_size);
        set(&mut cfg.cross_fit_folds, self.cross_fit_folds);
        set(&mut cfg.boost.n_rounds, self.boost_rounds);
        set(&mut cfg.forest.n_trees, self.forest_trees);
        set(&mut cfg.causal_forest.n_trees, self.causal_forest_trees);
        set(&mut cfg.super_learner_folds, self.super_learner_folds);
        if let Some(v) = self.pi_floor {
            cfg.pi_floor = v;
        }
        for spec in &mut cfg.super_learner_library {
            match spec.kind {
                LearnerKind::Lasso | LearnerKind::Ridge | LearnerKind::ElasticNet => {
                    set(&mut spec.cv_folds, self.sl_cv_folds);
                    set(&mut spec.lambda_grid_size, self.sl_lambda_grid_size);
                }
                LearnerKind::RandomForest => set(&mut spec.forest.n_trees, self.sl_forest_trees),
                LearnerKind::GradientBoosting => set(&mut spec.boost.n_rounds, self.sl_boost_rounds),
            }
        }
    }
}

/// The file as written. See the README for the grammar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    pub dgps: Option<Vec<DgpId>>,
    pub sample_sizes: Option<Vec<usize>>,
    pub test_size: Option<usize>,
    pub replicates: Option<usize>,
    pub estimators: Option<Vec<Strategy>>,
    /// Filter states to run; `[false, true]` runs both.
    pub filtered: Option<Vec<bool>>,
    pub master_seed: Option<u64>,
    pub timing_mode: Option<TimingMode>,
    pub threads: Option<usize>,
    pub p: Option<usize>,
    pub n_mc: Option<usize>,
    pub fdr_level: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub estimator: Option<EstimatorOverrides>,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub dgps: Vec<DgpId>,
    pub sample_sizes: Vec<usize>,
    pub test_size: usize,
    pub replicates: usize,
    pub estimators: Vec<Strategy>,
    pub filtered: Vec<bool>,
    pub master_seed: u64,
    pub timing_mode: TimingMode,
    /// Worker threads in parallel mode; `None` lets the pool decide.
    pub threads: Option<usize>,
    pub p: usize,
    pub n_mc: usize,
    pub fdr_level: f64,
    pub output_dir: PathBuf,
    pub estimator: EstimatorConfig,
}

/// Estimator settings of a profile.
pub fn profile_estimator(profile: Profile) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::default();
    if profile == Profile::Desk {
        EstimatorOverrides {
            super_learner_folds: Some(3),
            sl_cv_folds: Some(3),
            sl_lambda_grid_size: Some(50),
            sl_forest_trees: Some(200),
            sl_boost_rounds: Some(100),
            ..Default::default()
        }
        .apply(&mut cfg);
    }
    cfg
}

impl ExperimentConfig {
    pub fn profile_defaults(profile: Profile) -> Self {
        let (replicates, n_mc) = match profile {
            Profile::Desk => (20, 100_000),
            Profile::Paper => (100, 1_000_000),
        };
        Self {
            profile,
            dgps: DgpId::all(),
            sample_sizes: vec![250, 500, 1000],
            test_size: 100,
            replicates,
            estimators: Strategy::benchmark_default(),
            filtered: vec![false, true],
            master_seed: 20_240_601,
            timing_mode: TimingMode::Serial,
            threads: None,
            p: FULL_P,
            n_mc,
            fdr_level: 0.05,
            output_dir: PathBuf::from("itr-bench-out"),
            estimator: profile_estimator(profile),
        }
    }

    /// Layers the file over the profile. `profile` beats the file's own
    /// `profile` key and `seed_env` beats `master_seed`.
    pub fn resolve(file: &ConfigFile, profile: Option<Profile>, seed_env: Option<&str>) -> Result<Self> {
        let profile = profile.or(file.profile).unwrap_or(Profile::Desk);
        let mut cfg = Self::profile_defaults(profile);
        let f = file.clone();
        if let Some(v) = f.dgps {
            cfg.dgps = v;
        }
        if let Some(v) = f.sample_sizes {
            cfg.sample_sizes = v;
        }
        if let Some(v) = f.test_size {
            cfg.test_size = v;
        }
        if let Some(v) = f.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = f.estimators {
            cfg.estimators = v;
        }
        if let Some(v) = f.filtered {
            cfg.filtered = v;
        }
        if let Some(v) = f.master_seed {
            cfg.master_seed = v;
        }
        if let Some(v) = f.timing_mode {
            cfg.timing_mode = v;
        }
        cfg.threads = f.threads.or(cfg.threads);
        if let Some(v) = f.p {
            cfg.p = v;
        }
        if let Some(v) = f.n_mc {
            cfg.n_mc = v;
        }
        if let Some(v) = f.fdr_level {
            cfg.fdr_level = v;
        }
        if let Some(v) = f.output_dir {
            cfg.output_dir = v;
        }
        if let Some(o) = &f.estimator {
            o.apply(&mut cfg.estimator);
        }
        if let Some(s) = seed_env {
            cfg.master_seed = s
                .trim()
                .parse()
                .map_err(|_| BenchError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`Self::resolve`] reading the seed override from the environment.
    pub fn resolve_with_env(file: &ConfigFile, profile: Option<Profile>) -> Result<Self> {
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(file, profile, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.test_size < 1 {
            return bad("test_size must be at least 1".into());
        }
        if self.dgps.is_empty() || self.estimators.is_empty() || self.sample_sizes.is_empty() || self.filtered.is_empty() {
            return bad("dgps, estimators, sample_sizes and filtered must be non-empty".into());
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 20) {
            return bad(format!("sample size {n} is too small (minimum 20)"));
        }
        if self.p == 0 || self.p > FULL_P {
            return bad(format!("p must lie in 1..={FULL_P}, got {}", self.p));
        }
        let has_block = self.dgps.iter().any(|d| d.covariance == itrbench_core::dgp::CovarianceKind::Block);
        if has_block && self.p % N_BLOCKS != 0 {
            return bad(format!("block designs need p divisible by {N_BLOCKS}, got {}", self.p));
        }
        if !(self.fdr_level > 0.0 && self.fdr_level < 1.0) {
            return bad(format!("fdr_level {} outside (0, 1)", self.fdr_level));
        }
        if self.n_mc < 1000 {
            return bad(format!("n_mc must be at least 1000, got {}", self.n_mc));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = self.dgps.iter().find(|d| !seen.insert(d.to_string())) {
            return bad(format!("DGP `{d}` listed twice"));
        }
        self.estimator.validate().map_err(BenchError::Core)
    }
}
