//! Replicate generation, timed fits and metric evaluation.

use std::time::Instant;

use itrbench_core::cate::{fit_strategy, CateModel, Dataset, EstimatorConfig, NuisanceEstimates, PropensityMode, Strategy};
use itrbench_core::cate::{estimate_lasso_interaction_nuisances, estimate_super_learner_nuisances};
use itrbench_core::dgp::{make_covariance, monte_carlo_policy_values, sample_dataset, CovarianceModel, DgpId, DgpSpec, PolicyValues};
use itrbench_core::metrics::{interpretability_metrics, relative_rule_quality, rule_value};
use itrbench_core::rng::{derive_seed, label};
use itrbench_core::temvip::{fit_on_selection, filter_with_nuisances, FilterOutcome, NuisanceMode, TemVipConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TimingMode, FULL_P};
use crate::io::OracleCache;
use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Ok,
    Failed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Failed => "failed",
        }
    }
}

/// One estimator in one filter state on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub dgp: DgpId,
    pub n: usize,
    pub replicate: usize,
    pub estimator: Strategy,
    pub filtered: bool,
    pub status: FitStatus,
    /// Mean potential outcome on the test set under the fitted rule.
    pub mean_test_outcome: Option<f64>,
    pub relative_rule_quality: Option<f64>,
    /// `None` when the fit does not classify modifiers.
    pub fdp: Option<f64>,
    pub tnp: Option<f64>,
    pub tpp: Option<f64>,
    pub fit_time_seconds: f64,
    pub selected_tems: Option<Vec<usize>>,
    pub diagnostics: Vec<String>,
}

/// A design with its covariance and Monte Carlo reference values.
#[derive(Debug, Clone)]
pub struct Design {
    pub id: DgpId,
    pub spec: DgpSpec,
    pub covariance: CovarianceModel,
    pub oracle: PolicyValues,
}

/// A resolved configuration plus the per-design state shared by replicates.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub designs: Vec<Design>,
    pub oracle_cache: OracleCache,
}

/// The standard coefficients, with supports shrunk in proportion when
/// `p` is below the reference dimension.
pub fn design_spec(id: DgpId, p: usize) -> DgpSpec {
    let mut spec = id.spec(p);
    if p < FULL_P {
        let keep = |k: usize| (((k * p) as f64 / FULL_P as f64).round() as usize).max(1);
        let k_gamma = keep(5);
        let k_delta = keep(if id.outcome.is_sparse() { 10 } else { 50 });
        spec.gamma.iter_mut().skip(k_gamma).for_each(|g| *g = 0.0);
        spec.delta.iter_mut().skip(k_delta).for_each(|d| *d = 0.0);
    }
    spec
}

pub fn covariance_seed(master: u64) -> u64 {
    derive_seed(master, &[label("covariance")])
}

pub fn oracle_seed(master: u64, id: DgpId) -> u64 {
    derive_seed(master, &[label("oracle"), label(&id.to_string())])
}

pub fn replicate_seed(master: u64, id: DgpId, n: usize, b: usize) -> u64 {
    derive_seed(master, &[label(&id.to_string()), n as u64, b as u64])
}

impl Experiment {
    /// Builds covariances and reference values, reusing matching entries of `cache`.
    pub fn prepare(config: ExperimentConfig, cache: Option<&OracleCache>) -> Result<Self> {
        config.validate()?;
        let mut oracle_cache = OracleCache::default();
        let mut designs = Vec::with_capacity(config.dgps.len());
        for &id in &config.dgps {
            let spec = design_spec(id, config.p);
            let covariance = make_covariance(spec.covariance_kind, config.p, covariance_seed(config.master_seed))?;
            let seed = oracle_seed(config.master_seed, id);
            let oracle = match cache.and_then(|c| c.lookup(id, config.p, config.n_mc, seed)) {
                Some(v) => v,
                None => monte_carlo_policy_values(&spec, &covariance, config.n_mc, seed)?,
            };
            oracle_cache.insert(id, config.p, seed, oracle);
            designs.push(Design {
                id,
                spec,
                covariance,
                oracle,
            });
        }
        Ok(Self {
            config,
            designs,
            oracle_cache,
        })
    }

    pub fn design(&self, id: DgpId) -> Option<&Design> {
        self.designs.iter().find(|d| d.id == id)
    }

    /// Every (design, n, b) in output order.
    pub fn tasks(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for d in 0..self.designs.len() {
            for &n in &self.config.sample_sizes {
                for b in 0..self.config.replicates {
                    out.push((d, n, b));
                }
            }
        }
        out
    }
}

/// A timed value computed at most once per replicate.
type Timed<T> = std::result::Result<(T, f64), String>;

struct ReplicateState<'a> {
    config: &'a ExperimentConfig,
    data: Dataset,
    propensity: PropensityMode,
    rct: bool,
    fit_seed: u64,
    sl_nuisances: Option<Timed<NuisanceEstimates>>,
    filter: Option<Timed<FilterOutcome>>,
}

impl ReplicateState<'_> {
    fn estimator(&self) -> &EstimatorConfig {
        &self.config.estimator
    }

    /// Cross-fitted Super Learner nuisances on all columns.
    fn sl_nuisances(&mut self) -> Timed<&NuisanceEstimates> {
        if self.sl_nuisances.is_none() {
            let seed = derive_seed(self.fit_seed, &[label("sl-nuisances")]);
            let start = Instant::now();
            let r = estimate_super_learner_nuisances(&self.data, &self.propensity, self.estimator(), seed);
            let secs = start.elapsed().as_secs_f64();
            self.sl_nuisances = Some(r.map(|v| (v, secs)).map_err(|e| format!("nuisance estimation failed: {e}")));
        }
        match self.sl_nuisances.as_ref().unwrap() {
            Ok((v, t)) => Ok((v, *t)),
            Err(e) => Err(e.clone()),
        }
    }

    /// The filter's selection. Randomized designs use lasso nuisances with the
    /// known propensity; observational ones reuse the Super Learner nuisances,
    /// whose time is then part of the filter's.
    fn filter(&mut self) -> Timed<&FilterOutcome> {
        if self.filter.is_none() {
            let tv = TemVipConfig {
                fdr_level: self.config.fdr_level,
                nuisance_mode: if self.rct {
                    NuisanceMode::RctLassoInteractions
                } else {
                    NuisanceMode::ObservationalSuperLearner
                },
                cross_fit_folds: self.estimator().cross_fit_folds,
                pi_floor: self.estimator().pi_floor,
            };
            let result = if self.rct {
                let PropensityMode::Known(pi) = &self.propensity else {
                    unreachable!("randomized designs carry known propensities")
                };
                let seed = derive_seed(self.fit_seed, &[label("filter-nuisances")]);
                let start = Instant::now();
                estimate_lasso_interaction_nuisances(&self.data, pi, self.estimator(), seed)
                    .and_then(|nuis| filter_with_nuisances(&self.data, &tv, nuis))
                    .map(|f| (f, start.elapsed().as_secs_f64()))
                    .map_err(|e| format!("filter failed: {e}"))
            } else {
                let shared = self.sl_nuisances().map(|(nuis, t)| (nuis.clone(), t));
                shared.and_then(|(nuis, t_nuis)| {
                    let start = Instant::now();
                    filter_with_nuisances(&self.data, &tv, nuis)
                        .map(|f| (f, t_nuis + start.elapsed().as_secs_f64()))
                        .map_err(|e| format!("filter failed: {e}"))
                })
            };
            self.filter = Some(result);
        }
        match self.filter.as_ref().unwrap() {
            Ok((v, t)) => Ok((v, *t)),
            Err(e) => Err(e.clone()),
        }
    }

    /// Fits one estimator and returns the model, the charged seconds and
    /// the diagnostics of any shared stage.
    fn fit(&mut self, strategy: Strategy, filtered: bool) -> std::result::Result<(CateModel, f64, Vec<String>), (String, f64)> {
        let seed = self.fit_seed;
        if !filtered {
            if strategy.uses_aipw_nuisances() {
                let (nuis, t_nuis) = self.sl_nuisances().map_err(|e| (e, 0.0))?;
                let nuis = nuis.clone();
                let start = Instant::now();
                let r = fit_strategy(strategy, &self.data, &self.propensity, Some(&nuis), self.estimator(), seed);
                let secs = t_nuis + start.elapsed().as_secs_f64();
                return r.map(|m| (m, secs, nuis.diagnostics)).map_err(|e| (e.to_string(), secs));
            }
            let start = Instant::now();
            let r = fit_strategy(strategy, &self.data, &self.propensity, None, self.estimator(), seed);
            let secs = start.elapsed().as_secs_f64();
            return r.map(|m| (m, secs, Vec::new())).map_err(|e| (e.to_string(), secs));
        }
        let (filter, t_filter) = self.filter().map_err(|e| (e, 0.0))?;
        let filter = filter.clone();
        let mut diagnostics = filter.nuisances.diagnostics.clone();
        diagnostics.extend(
            filter
                .report
                .iter()
                .filter_map(|e| e.error.as_ref().map(|m| format!("W{}: {m}", e.index + 1))),
        );
        // Observational AIPW reuses the filter's nuisances; randomized AIPW
        // refits them on the selected columns.
        let shared = (!self.rct && strategy.uses_aipw_nuisances()).then_some(&filter.nuisances);
        let start = Instant::now();
        let r = fit_on_selection(
            strategy,
            &self.data,
            &filter.selected,
            &self.propensity,
            &filter.nuisances,
            shared,
            self.estimator(),
            seed,
        );
        let secs = t_filter + start.elapsed().as_secs_f64();
        r.map(|m| (m, secs, diagnostics)).map_err(|e| (e.to_string(), secs))
    }
}

fn failed_row(design: &Design, n: usize, b: usize, strategy: Strategy, filtered: bool, secs: f64, diagnostics: Vec<String>) -> ReplicateResult {
    ReplicateResult {
        dgp: design.id,
        n,
        replicate: b,
        estimator: strategy,
        filtered,
        status: FitStatus::Failed,
        mean_test_outcome: None,
        relative_rule_quality: None,
        fdp: None,
        tnp: None,
        tpp: None,
        fit_time_seconds: secs,
        selected_tems: None,
        diagnostics,
    }
}

fn evaluate(
    design: &Design,
    model: &CateModel,
    test: &Dataset,
    diagnostics: &mut Vec<String>,
) -> std::result::Result<(f64, Option<f64>, Option<Vec<usize>>), String> {
    let (cate, fallbacks) = model.predict_with_fallbacks(test.w.view()).map_err(|e| e.to_string())?;
    if fallbacks > 0 {
        diagnostics.push(format!("{fallbacks} test rows fell back to the global effect"));
    }
    let assign: Vec<bool> = cate.iter().map(|&g| g > 0.0).collect();
    let value = rule_value(&assign, test).map_err(|e| e.to_string())?;
    let relative = match relative_rule_quality(value, design.oracle.optimal) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    Ok((value, relative, model.tem_set()))
}

/// Fits every configured estimator in every filter state on replicate `b`
/// of `design` at sample size `n`. Failures become rows with status
/// `failed`; the replicate carries on.
pub fn run_replicate(exp: &Experiment, design: &Design, n: usize, b: usize) -> Vec<ReplicateResult> {
    let config = &exp.config;
    let seed = replicate_seed(config.master_seed, design.id, n, b);
    let learn = sample_dataset(&design.spec, &design.covariance, n, derive_seed(seed, &[label("learn")]), false);
    let test = sample_dataset(
        &design.spec,
        &design.covariance,
        config.test_size,
        derive_seed(seed, &[label("test")]),
        true,
    );
    let (learn, test) = match (learn, test) {
        (Ok(l), Ok(t)) => (l, t),
        (Err(e), _) | (_, Err(e)) => {
            let msg = format!("data generation failed: {e}");
            return config
                .estimators
                .iter()
                .flat_map(|&s| config.filtered.iter().map(move |&f| (s, f)))
                .map(|(s, f)| failed_row(design, n, b, s, f, 0.0, vec![msg.clone()]))
                .collect();
        }
    };
    let rct = design.spec.is_rct();
    let propensity = if rct {
        PropensityMode::Known(learn.w.rows().into_iter().map(|r| design.spec.propensity(r.as_slice().unwrap())).collect())
    } else {
        PropensityMode::Estimated
    };
    let mut state = ReplicateState {
        config,
        data: learn,
        propensity,
        rct,
        fit_seed: derive_seed(seed, &[label("fit")]),
        sl_nuisances: None,
        filter: None,
    };
    let truth = design.spec.true_tems();
    let p = design.spec.p;
    let mut rows = Vec::with_capacity(config.estimators.len() * config.filtered.len());
    for &strategy in &config.estimators {
        for &filtered in &config.filtered {
            let row = match state.fit(strategy, filtered) {
                Err((msg, secs)) => failed_row(design, n, b, strategy, filtered, secs, vec![msg]),
                Ok((model, secs, mut diagnostics)) => {
                    diagnostics.extend(model.diagnostics.iter().cloned());
                    match evaluate(design, &model, &test, &mut diagnostics) {
                        Err(msg) => {
                            diagnostics.push(format!("evaluation failed: {msg}"));
                            failed_row(design, n, b, strategy, filtered, secs, diagnostics)
                        }
                        Ok((value, relative, tems)) => {
                            let metrics = tems.as_ref().map(|t| interpretability_metrics(t, &truth, p));
                            ReplicateResult {
                                dgp: design.id,
                                n,
                                replicate: b,
                                estimator: strategy,
                                filtered,
                                status: FitStatus::Ok,
                                mean_test_outcome: Some(value),
                                relative_rule_quality: relative,
                                fdp: metrics.map(|m| m.fdp),
                                tnp: metrics.map(|m| m.tnp),
                                tpp: metrics.map(|m| m.tpp),
                                fit_time_seconds: secs,
                                selected_tems: tems,
                                diagnostics,
                            }
                        }
                    }
                }
            };
            rows.push(row);
        }
    }
    rows
}

/// Runs every replicate. `on_done` sees each replicate's rows as it
/// finishes (in completion order); the returned rows are in task order.
pub fn run_experiment_with<F>(exp: &Experiment, on_done: F) -> Result<Vec<ReplicateResult>>
where
    F: Fn(&[ReplicateResult]) + Sync,
{
    let tasks = exp.tasks();
    let one = |&(d, n, b): &(usize, usize, usize)| {
        let rows = run_replicate(exp, &exp.designs[d], n, b);
        on_done(&rows);
        rows
    };
    let nested: Vec<Vec<ReplicateResult>> = match exp.config.timing_mode {
        TimingMode::Serial => tasks.iter().map(one).collect(),
        TimingMode::Parallel => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(exp.config.threads.unwrap_or(0))
                .build()
                .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
            pool.install(|| tasks.par_iter().map(one).collect())
        }
    };
    Ok(nested.into_iter().flatten().collect())
}

pub fn run_experiment(exp: &Experiment) -> Result<Vec<ReplicateResult>> {
    run_experiment_with(exp, |_| {})
}
