//! CATE estimators and the treatment rules they induce.
//!
//! Every strategy maps a learning [`Dataset`] to a [`CateModel`] whose
//! prediction `Γ̂(w)` estimates `E[Y⁽¹⁾ − Y⁽⁰⁾ | W = w]`; the rule treats
//! exactly when `Γ̂(w) > 0`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::penalized::{fit_cv, Family, FittedLinearModel, RegressionProblem};
use crate::rng::{derive_seed, label};
use crate::stats::{kfold_assignment, logit, mean, sigmoid, split_fold, weighted_mean};
use crate::super_learner::{default_library, fit_super_learner, take_rows, LearnerSpec, SuperLearnerModel};
use crate::trees::{
    fit_causal_forest, fit_gradient_boosting, fit_gradient_boosting_with_multipliers, fit_random_forest_with_oob,
    BoostConfig, BoostLoss, BoostedTrees, CausalForestModel, ForestConfig,
};
use crate::{Error, Result};

/// Propensities are clamped into `[PI_FLOOR, 1 − PI_FLOOR]` by default.
pub const PI_FLOOR: f64 = 0.01;

/// Observed data `(W, A, Y)`, plus both potential outcomes on test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub w: Array2<f64>,
    pub a: Vec<bool>,
    pub y: Vec<f64>,
    /// `(Y⁽⁰⁾, Y⁽¹⁾)`.
    pub potential_outcomes: Option<(Vec<f64>, Vec<f64>)>,
}

impl Dataset {
    pub fn new(w: Array2<f64>, a: Vec<bool>, y: Vec<f64>, potential_outcomes: Option<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let n = w.nrows();
        for (what, len) in [("treatment vector", a.len()), ("outcome vector", y.len())] {
            if len != n {
                return Err(Error::Dimension { what, expected: n, found: len });
            }
        }
        if w.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        if let Some((y0, y1)) = &potential_outcomes {
            if y0.len() != n || y1.len() != n {
                return Err(Error::Dimension {
                    what: "potential outcomes",
                    expected: n,
                    found: y0.len().min(y1.len()),
                });
            }
            if (0..n).any(|i| y[i] != if a[i] { y1[i] } else { y0[i] }) {
                return Err(Error::InvalidInput("observed outcome disagrees with the potential outcomes".into()));
            }
        }
        Ok(Self {
            w,
            a,
            y,
            potential_outcomes,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&a| a as u8 as f64).collect()
    }

    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&j) = columns.iter().find(|&&j| j >= self.p()) {
            return Err(Error::InvalidInput(format!("column {j} out of range for p = {}", self.p())));
        }
        Ok(Self {
            w: self.w.select(Axis(1), columns),
            ..self.clone()
        })
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            w: take_rows(self.w.view(), rows),
            a: rows.iter().map(|&i| self.a[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            potential_outcomes: self
                .potential_outcomes
                .as_ref()
                .map(|(y0, y1)| (rows.iter().map(|&i| y0[i]).collect(), rows.iter().map(|&i| y1[i]).collect())),
        }
    }

    fn arm_rows(&self, treated: bool) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i] == treated).collect()
    }
}

/// How the propensity score enters a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityMode {
    /// Known propensities at the learning rows (randomized designs).
    Known(Vec<f64>),
    /// Estimate it from the data.
    Estimated,
}

impl PropensityMode {
    pub fn is_known(&self) -> bool {
        matches!(self, Self::Known(_))
    }
}

/// Nuisance values at the learning rows. When cross-fitted, row `i` comes
/// from models that never saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// Clamped into `[pi_floor, 1 − pi_floor]`.
    pub pi: Vec<f64>,
    pub pi_known: bool,
    pub diagnostics: Vec<String>,
}

/// `(2a−1)/(aπ + (1−a)(1−π)) · (y − μ(w,a)) + μ(w,1) − μ(w,0)` with `π`
/// clamped into `[pi_floor, 1 − pi_floor]`.
pub fn aipw_transform(a: bool, y: f64, mu0: f64, mu1: f64, pi: f64, pi_floor: f64) -> f64 {
    let pi = pi.clamp(pi_floor, 1.0 - pi_floor);
    let (sign, denom, mu_a) = if a { (1.0, pi, mu1) } else { (-1.0, 1.0 - pi, mu0) };
    sign / denom * (y - mu_a) + mu1 - mu0
}

pub fn pseudo_outcomes(data: &Dataset, nuisances: &NuisanceEstimates, pi_floor: f64) -> Vec<f64> {
    (0..data.n())
        .map(|i| aipw_transform(data.a[i], data.y[i], nuisances.mu0[i], nuisances.mu1[i], nuisances.pi[i], pi_floor))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    PluginLasso,
    PluginXgboost,
    ModifiedOutcome,
    ModifiedCovariatesLasso,
    ModifiedCovariatesXgboost,
    AugmentedModifiedCovariatesLasso,
    AugmentedModifiedCovariatesXgboost,
    AipwLasso,
    AipwSuperLearner,
    CausalForest,
}

impl Strategy {
    pub const ALL: [Strategy; 10] = [
        Self::PluginLasso,
        Self::PluginXgboost,
        Self::ModifiedOutcome,
        Self::ModifiedCovariatesLasso,
        Self::ModifiedCovariatesXgboost,
        Self::AugmentedModifiedCovariatesLasso,
        Self::AugmentedModifiedCovariatesXgboost,
        Self::AipwLasso,
        Self::AipwSuperLearner,
        Self::CausalForest,
    ];

    /// The nine strategies benchmarked by default (everything except the
    /// modified-outcome estimator).
    pub fn benchmark_default() -> Vec<Strategy> {
        Self::ALL.into_iter().filter(|s| *s != Self::ModifiedOutcome).collect()
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::PluginLasso => "plugin-lasso",
            Self::PluginXgboost => "plugin-xgboost",
            Self::ModifiedOutcome => "modified-outcome",
            Self::ModifiedCovariatesLasso => "modcov-lasso",
            Self::ModifiedCovariatesXgboost => "modcov-xgboost",
            Self::AugmentedModifiedCovariatesLasso => "amodcov-lasso",
            Self::AugmentedModifiedCovariatesXgboost => "amodcov-xgboost",
            Self::AipwLasso => "aipw-lasso",
            Self::AipwSuperLearner => "aipw-sl",
            Self::CausalForest => "causal-forest",
        }
    }

    /// Whether the unfiltered fit classifies covariates as modifiers on its own.
    pub fn has_builtin_tems(self) -> bool {
        matches!(
            self,
            Self::PluginLasso
                | Self::ModifiedOutcome
                | Self::ModifiedCovariatesLasso
                | Self::AugmentedModifiedCovariatesLasso
                | Self::AipwLasso
        )
    }

    /// Whether the fit consumes AIPW nuisances.
    pub fn uses_aipw_nuisances(self) -> bool {
        matches!(self, Self::AipwLasso | Self::AipwSuperLearner)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Folds for every cross-validated penalty choice.
    pub cv_folds: usize,
    pub lambda_grid_size: usize,
    pub boost: BoostConfig,
    /// Forest used for the causal forest's nuisances.
    pub forest: ForestConfig,
    pub causal_forest: ForestConfig,
    pub super_learner_library: Vec<LearnerSpec>,
    pub super_learner_folds: usize,
    /// Cross-fitting folds for AIPW nuisances; below 2 fits in-sample.
    pub cross_fit_folds: usize,
    pub pi_floor: f64,
    /// Scale the modified-outcome response by `½ / P(A = a | W)`.
    pub stabilize_modified_outcome: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            cv_folds: 10,
            lambda_grid_size: 100,
            boost: BoostConfig::default(),
            forest: ForestConfig::default(),
            causal_forest: ForestConfig::causal(),
            super_learner_library: default_library(),
            super_learner_folds: 10,
            cross_fit_folds: 5,
            pi_floor: PI_FLOOR,
            stabilize_modified_outcome: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pi_floor > 0.0 && self.pi_floor < 0.5) {
            return Err(Error::Config(format!("pi floor {} outside (0, 0.5)", self.pi_floor)));
        }
        if self.cv_folds < 2 || self.super_learner_folds < 2 {
            return Err(Error::Config("cross-validation needs at least two folds".into()));
        }
        if self.super_learner_library.is_empty() {
            return Err(Error::Config("super learner library is empty".into()));
        }
        Ok(())
    }
}

/// How a linear index `η = b + δᵀw` becomes a CATE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    /// `(e^{η/2} − 1)/(e^{η/2} + 1)`, the binary modified-covariates effect.
    HalfLogistic,
}

impl Link {
    fn apply(self, eta: f64) -> f64 {
        match self {
            Self::Identity => eta,
            Self::HalfLogistic => libm::tanh(eta / 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CateFit {
    Constant(f64),
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
        link: Link,
    },
    Boosted {
        model: BoostedTrees,
        link: Link,
    },
    TwoSurface {
        treated: BoostedTrees,
        control: BoostedTrees,
    },
    SuperLearner(SuperLearnerModel),
    CausalForest(CausalForestModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CateModel {
    pub strategy: Strategy,
    pub fit: CateFit,
    /// Modifiers picked by the fit itself, as indices into the columns it saw.
    pub builtin_tems: Option<Vec<usize>>,
    /// Set for filtered fits: the original columns the fit was restricted to.
    pub selected_columns: Option<Vec<usize>>,
    /// Width of the design the model expects at prediction time.
    pub n_features: usize,
    pub diagnostics: Vec<String>,
}

impl CateModel {
    pub fn predict_cate(&self, w: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.predict_with_fallbacks(w).map(|(c, _)| c)
    }

    /// Also counts causal-forest rows that fell back to the global slope.
    pub fn predict_with_fallbacks(&self, w: ArrayView2<f64>) -> Result<(Array1<f64>, usize)> {
        if w.ncols() != self.n_features {
            return Err(Error::Dimension {
                what: "CATE prediction design",
                expected: self.n_features,
                found: w.ncols(),
            });
        }
        let owned;
        let w = match &self.selected_columns {
            Some(cols) => {
                owned = w.select(Axis(1), cols);
                owned.view()
            }
            None => w,
        };
        let out = match &self.fit {
            CateFit::Constant(c) => Array1::from_elem(w.nrows(), *c),
            CateFit::Linear {
                intercept,
                coefficients,
                link,
            } => w
                .rows()
                .into_iter()
                .map(|row| link.apply(intercept + dot_sparse(coefficients, row)))
                .collect(),
            CateFit::Boosted { model, link } => model.predict_score(w)?.mapv(|s| link.apply(s)),
            CateFit::TwoSurface { treated, control } => treated.predict(w)? - control.predict(w)?,
            CateFit::SuperLearner(sl) => sl.predict(w)?,
            CateFit::CausalForest(cf) => {
                let p = cf.predict(w)?;
                return Ok((p.cate, p.fallbacks));
            }
        };
        Ok((out, 0))
    }

    /// Modifier indices in the original columns: the filter's selection for
    /// filtered fits, the built-in classification otherwise.
    pub fn tem_set(&self) -> Option<Vec<usize>> {
        match &self.selected_columns {
            Some(cols) => Some(cols.clone()),
            None => self.builtin_tems.clone(),
        }
    }

    pub fn rule(self) -> ItrRule {
        ItrRule { model: self }
    }
}

fn dot_sparse(coefficients: &[f64], row: ArrayView1<f64>) -> f64 {
    coefficients
        .iter()
        .zip(row.iter())
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, x)| c * x)
        .sum()
}

pub fn classify_tems(model: &CateModel) -> Option<Vec<usize>> {
    model.builtin_tems.clone()
}

/// Treats exactly when the predicted CATE is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ItrRule {
    pub model: CateModel,
}

impl ItrRule {
    pub fn assign(&self, w: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.model.predict_cate(w)?.iter().map(|&g| g > 0.0).collect())
    }
}

pub fn assign_treatment(rule: &ItrRule, w_row: ArrayView1<f64>) -> Result<bool> {
    let row = w_row.insert_axis(Axis(0));
    Ok(rule.assign(row)?[0])
}

/// Cross-validated lasso with the configured folds and grid; with no columns
/// the model is the (weighted) mean.
fn cv_lasso(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    family: Family,
    intercept: bool,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<FittedLinearModel> {
    if x.ncols() == 0 {
        let ones = vec![1.0; y.len()];
        let m = weighted_mean(y, weights.unwrap_or(&ones));
        let b = match family {
            Family::Gaussian => m,
            Family::Binomial => logit(m.clamp(1e-5, 1.0 - 1e-5)),
        };
        return Ok(FittedLinearModel::constant(if intercept { b } else { 0.0 }, family));
    }
    let mut problem = RegressionProblem::new(x, ArrayView1::from(y), family).with_intercept(intercept);
    if let Some(w) = weights {
        problem = problem.with_weights(ArrayView1::from(w));
    }
    fit_cv(&problem, config.cv_folds.min(y.len()), config.lambda_grid_size, seed).map(|(_, m)| m)
}

fn clamp_all(p: impl IntoIterator<Item = f64>, floor: f64) -> Vec<f64> {
    p.into_iter().map(|v| v.clamp(floor, 1.0 - floor)).collect()
}

fn positivity_warning(pi: &[f64], floor: f64) -> Option<String> {
    let at_bound = pi.iter().filter(|&&p| p <= floor || p >= 1.0 - floor).count();
    (at_bound * 10 > pi.len()).then(|| format!("positivity: {at_bound} of {} propensities at the clamp", pi.len()))
}

/// Logistic cross-validated lasso of `A` on `W`, clamped.
pub fn estimate_propensity_logistic_lasso(data: &Dataset, config: &EstimatorConfig, seed: u64) -> Result<Vec<f64>> {
    let a = data.a_f64();
    let model = cv_lasso(data.w.view(), &a, None, Family::Binomial, true, config, seed)?;
    let pred = if data.p() == 0 {
        Array1::from_elem(data.n(), sigmoid(model.intercept))
    } else {
        model.predict(data.w.view())?
    };
    Ok(clamp_all(pred, config.pi_floor))
}

fn resolve_logistic_propensity(
    data: &Dataset,
    mode: &PropensityMode,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    match mode {
        PropensityMode::Known(pi) => {
            check_len(pi, data.n(), "known propensities")?;
            Ok(clamp_all(pi.iter().copied(), config.pi_floor))
        }
        PropensityMode::Estimated => estimate_propensity_logistic_lasso(data, config, derive_seed(seed, &[label("propensity")])),
    }
}

fn check_len(v: &[f64], n: usize, what: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension { what, expected: n, found: v.len() });
    }
    Ok(())
}

/// `[A, W, A·W]`.
pub fn interaction_design(w: ArrayView2<f64>, a: &[bool]) -> Array2<f64> {
    let (n, p) = w.dim();
    let mut x = Array2::zeros((n, 1 + 2 * p));
    for i in 0..n {
        let ai = a[i] as u8 as f64;
        x[[i, 0]] = ai;
        for j in 0..p {
            x[[i, 1 + j]] = w[[i, j]];
            x[[i, 1 + p + j]] = ai * w[[i, j]];
        }
    }
    x
}

/// `[(2A−1)/2, (2A−1)W/2]`.
pub fn modified_covariates_design(w: ArrayView2<f64>, a: &[bool]) -> Array2<f64> {
    let (n, p) = w.dim();
    Array2::from_shape_fn((n, p + 1), |(i, j)| {
        let half = if a[i] { 0.5 } else { -0.5 };
        if j == 0 {
            half
        } else {
            half * w[[i, j - 1]]
        }
    })
}

fn model(strategy: Strategy, fit: CateFit, builtin_tems: Option<Vec<usize>>, p: usize, diagnostics: Vec<String>) -> CateModel {
    CateModel {
        strategy,
        fit,
        builtin_tems,
        selected_columns: None,
        n_features: p,
        diagnostics,
    }
}

fn linear_fit(intercept: f64, coefficients: Vec<f64>, link: Link) -> (CateFit, Vec<usize>) {
    let tems = coefficients.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, _)| j).collect();
    (
        CateFit::Linear {
            intercept,
            coefficients,
            link,
        },
        tems,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PluginLearner {
    LassoInteractions,
    XgboostTwoSurface,
}

pub fn fit_plugin(data: &Dataset, learner: PluginLearner, config: &EstimatorConfig, seed: u64) -> Result<CateModel> {
    let p = data.p();
    match learner {
        PluginLearner::LassoInteractions => {
            let x = interaction_design(data.w.view(), &data.a);
            let m = cv_lasso(x.view(), &data.y, None, Family::Gaussian, true, config, seed)?;
            let (fit, tems) = linear_fit(m.coefficients[0], m.coefficients[1 + p..].to_vec(), Link::Identity);
            Ok(model(Strategy::PluginLasso, fit, Some(tems), p, Vec::new()))
        }
        PluginLearner::XgboostTwoSurface => {
            let mut surfaces = Vec::with_capacity(2);
            for (k, treated) in [true, false].into_iter().enumerate() {
                let rows = data.arm_rows(treated);
                if rows.len() < 10 {
                    return Err(Error::InsufficientData(format!(
                        "{} arm has {} rows; two-surface boosting needs 10",
                        if treated { "treated" } else { "control" },
                        rows.len()
                    )));
                }
                let x = take_rows(data.w.view(), &rows);
                let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
                let cfg = BoostConfig {
                    seed: derive_seed(seed, &[k as u64]),
                    ..config.boost.clone()
                };
                surfaces.push(fit_gradient_boosting(x.view(), &y, None, &cfg, BoostLoss::Squared)?);
            }
            let control = surfaces.pop().expect("two surfaces");
            let treated = surfaces.pop().expect("two surfaces");
            Ok(model(Strategy::PluginXgboost, CateFit::TwoSurface { treated, control }, None, p, Vec::new()))
        }
    }
}

/// Cross-validated lasso of the modified outcome on `W`. `pi` holds the
/// propensities at the learning rows.
pub fn fit_modified_outcome(data: &Dataset, pi: &[f64], config: &EstimatorConfig, seed: u64) -> Result<CateModel> {
    check_len(pi, data.n(), "propensities")?;
    if let Some(&bad) = pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Propensity(bad));
    }
    let z: Vec<f64> = (0..data.n())
        .map(|i| {
            let sign = if data.a[i] { 1.0 } else { -1.0 };
            if config.stabilize_modified_outcome {
                let denom = if data.a[i] { pi[i] } else { 1.0 - pi[i] };
                sign * data.y[i] / denom
            } else {
                2.0 * sign * data.y[i]
            }
        })
        .collect();
    let m = cv_lasso(data.w.view(), &z, None, Family::Gaussian, true, config, seed)?;
    let (fit, tems) = linear_fit(m.intercept, m.coefficients, Link::Identity);
    let diagnostics = positivity_warning(pi, config.pi_floor).into_iter().collect();
    Ok(model(Strategy::ModifiedOutcome, fit, Some(tems), data.p(), diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondLearner {
    Lasso,
    Xgboost,
}

/// Minimizes `Σ (Yᵢ − (2Aᵢ−1)Γ(Wᵢ)/2)² / P(A = Aᵢ | Wᵢ)` (gaussian), or the
/// matching weighted logistic likelihood (binomial, 0/1 outcome).
pub fn fit_modified_covariates(
    data: &Dataset,
    family: Family,
    learner: SecondLearner,
    pi: &[f64],
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    let strategy = match learner {
        SecondLearner::Lasso => Strategy::ModifiedCovariatesLasso,
        SecondLearner::Xgboost => Strategy::ModifiedCovariatesXgboost,
    };
    fit_modified_covariates_response(data, &data.y, family, learner, pi, config, seed, strategy)
}

#[allow(clippy::too_many_arguments)]
fn fit_modified_covariates_response(
    data: &Dataset,
    response: &[f64],
    family: Family,
    learner: SecondLearner,
    pi: &[f64],
    config: &EstimatorConfig,
    seed: u64,
    strategy: Strategy,
) -> Result<CateModel> {
    check_len(pi, data.n(), "propensities")?;
    if let Some(&bad) = pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Propensity(bad));
    }
    if family == Family::Binomial && response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput("binary modified covariates need a 0/1 outcome".into()));
    }
    let weights: Vec<f64> = (0..data.n()).map(|i| 1.0 / if data.a[i] { pi[i] } else { 1.0 - pi[i] }).collect();
    let diagnostics: Vec<String> = positivity_warning(pi, config.pi_floor).into_iter().collect();
    let link = match family {
        Family::Gaussian => Link::Identity,
        Family::Binomial => Link::HalfLogistic,
    };
    let p = data.p();
    match learner {
        SecondLearner::Lasso => {
            let x = modified_covariates_design(data.w.view(), &data.a);
            let intercept = family == Family::Gaussian;
            let m = cv_lasso(x.view(), response, Some(&weights), family, intercept, config, seed)?;
            let (fit, tems) = linear_fit(m.coefficients[0], m.coefficients[1..].to_vec(), link);
            Ok(model(strategy, fit, Some(tems), p, diagnostics))
        }
        SecondLearner::Xgboost => {
            let cfg = BoostConfig { seed, ..config.boost.clone() };
            let fitted = match family {
                Family::Gaussian => {
                    let z: Vec<f64> = (0..data.n()).map(|i| if data.a[i] { 2.0 } else { -2.0 } * response[i]).collect();
                    fit_gradient_boosting(data.w.view(), &z, Some(&weights), &cfg, BoostLoss::Squared)?
                }
                Family::Binomial => {
                    let c: Vec<f64> = data.a.iter().map(|&a| if a { 0.5 } else { -0.5 }).collect();
                    fit_gradient_boosting_with_multipliers(data.w.view(), response, Some(&weights), &cfg, BoostLoss::Logistic, &c)?
                }
            };
            Ok(model(strategy, CateFit::Boosted { model: fitted, link }, None, p, diagnostics))
        }
    }
}

/// Modified covariates on `Y − m̂(W)`, with `m̂` fit by the same kind of
/// learner (cross-validated lasso or boosting on `W`).
pub fn fit_augmented_modified_covariates(
    data: &Dataset,
    learner: SecondLearner,
    pi: &[f64],
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    let main_seed = derive_seed(seed, &[label("main-effect")]);
    let m_hat: Vec<f64> = match learner {
        SecondLearner::Lasso => {
            let m = cv_lasso(data.w.view(), &data.y, None, Family::Gaussian, true, config, main_seed)?;
            if data.p() == 0 {
                vec![m.intercept; data.n()]
            } else {
                m.predict(data.w.view())?.to_vec()
            }
        }
        SecondLearner::Xgboost => {
            let cfg = BoostConfig {
                seed: main_seed,
                ..config.boost.clone()
            };
            fit_gradient_boosting(data.w.view(), &data.y, None, &cfg, BoostLoss::Squared)?
                .predict(data.w.view())?
                .to_vec()
        }
    };
    let residual: Vec<f64> = data.y.iter().zip(&m_hat).map(|(y, m)| y - m).collect();
    let strategy = match learner {
        SecondLearner::Lasso => Strategy::AugmentedModifiedCovariatesLasso,
        SecondLearner::Xgboost => Strategy::AugmentedModifiedCovariatesXgboost,
    };
    fit_modified_covariates_response(data, &residual, Family::Gaussian, learner, pi, config, seed, strategy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AipwSecondStage {
    Lasso,
    SuperLearner,
}

/// Regresses the AIPW pseudo-outcomes on `W`.
pub fn fit_aipw_cate(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    second_stage: AipwSecondStage,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    for (v, what) in [(&nuisances.mu0, "mu0"), (&nuisances.mu1, "mu1"), (&nuisances.pi, "pi")] {
        check_len(v, data.n(), what)?;
    }
    let t = pseudo_outcomes(data, nuisances, config.pi_floor);
    let p = data.p();
    let diagnostics = nuisances.diagnostics.clone();
    match second_stage {
        AipwSecondStage::Lasso => {
            let m = cv_lasso(data.w.view(), &t, None, Family::Gaussian, true, config, seed)?;
            let (fit, tems) = linear_fit(m.intercept, m.coefficients, Link::Identity);
            Ok(model(Strategy::AipwLasso, fit, Some(tems), p, diagnostics))
        }
        AipwSecondStage::SuperLearner => {
            if p == 0 {
                return Ok(model(Strategy::AipwSuperLearner, CateFit::Constant(mean(&t)), None, 0, diagnostics));
            }
            let sl = fit_super_learner(&config.super_learner_library, data.w.view(), &t, Family::Gaussian, config.super_learner_folds, seed)?;
            let mut diagnostics = diagnostics;
            diagnostics.extend(sl.warnings.iter().cloned());
            Ok(model(Strategy::AipwSuperLearner, CateFit::SuperLearner(sl), None, p, diagnostics))
        }
    }
}

/// Causal forest with random-forest nuisances: `m̂(W)` on pooled arms and,
/// unless known, `π̂(W)`, both taken out of bag.
pub fn fit_causal_forest_cate(data: &Dataset, propensity: &PropensityMode, config: &EstimatorConfig, seed: u64) -> Result<CateModel> {
    let p = data.p();
    if p == 0 {
        let pi = match propensity {
            PropensityMode::Known(pi) => pi.clone(),
            PropensityMode::Estimated => vec![mean(&data.a_f64()); data.n()],
        };
        return Ok(model(Strategy::CausalForest, CateFit::Constant(hajek_difference(data, &pi, config.pi_floor)), None, 0, Vec::new()));
    }
    let forest_cfg = |k: u64| ForestConfig {
        seed: derive_seed(seed, &[label("nuisance-forest"), k]),
        ..config.forest.clone()
    };
    let (_, m_hat) = fit_random_forest_with_oob(data.w.view(), &data.y, None, &forest_cfg(0))?;
    let pi_hat = match propensity {
        PropensityMode::Known(pi) => {
            check_len(pi, data.n(), "known propensities")?;
            clamp_all(pi.iter().copied(), config.pi_floor)
        }
        PropensityMode::Estimated => {
            let (_, pi) = fit_random_forest_with_oob(data.w.view(), &data.a_f64(), None, &forest_cfg(1))?;
            clamp_all(pi, config.pi_floor)
        }
    };
    let cfg = ForestConfig {
        seed: derive_seed(seed, &[label("causal-forest")]),
        ..config.causal_forest.clone()
    };
    let cf = fit_causal_forest(data.w.view(), &data.y, &data.a, m_hat.as_slice().expect("contiguous"), &pi_hat, &cfg)?;
    let diagnostics = positivity_warning(&pi_hat, config.pi_floor).into_iter().collect();
    Ok(model(Strategy::CausalForest, CateFit::CausalForest(cf), None, p, diagnostics))
}

/// Inverse-propensity weighted (Hájek) difference in arm means.
pub fn hajek_difference(data: &Dataset, pi: &[f64], pi_floor: f64) -> f64 {
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..data.n() {
        let p = pi[i].clamp(pi_floor, 1.0 - pi_floor);
        if data.a[i] {
            s1 += data.y[i] / p;
            w1 += 1.0 / p;
        } else {
            s0 += data.y[i] / (1.0 - p);
            w0 += 1.0 / (1.0 - p);
        }
    }
    let m1 = if w1 > 0.0 { s1 / w1 } else { 0.0 };
    let m0 = if w0 > 0.0 { s0 / w0 } else { 0.0 };
    m1 - m0
}

/// Fits any strategy. AIPW strategies use `nuisances` when given and fit
/// Super Learner nuisances otherwise.
pub fn fit_strategy(
    strategy: Strategy,
    data: &Dataset,
    propensity: &PropensityMode,
    nuisances: Option<&NuisanceEstimates>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    config.validate()?;
    let seed = derive_seed(seed, &[label(strategy.id())]);
    match strategy {
        Strategy::PluginLasso => fit_plugin(data, PluginLearner::LassoInteractions, config, seed),
        Strategy::PluginXgboost => fit_plugin(data, PluginLearner::XgboostTwoSurface, config, seed),
        Strategy::ModifiedOutcome => {
            let pi = resolve_logistic_propensity(data, propensity, config, seed)?;
            fit_modified_outcome(data, &pi, config, seed)
        }
        Strategy::ModifiedCovariatesLasso | Strategy::ModifiedCovariatesXgboost => {
            let pi = resolve_logistic_propensity(data, propensity, config, seed)?;
            let learner = if strategy == Strategy::ModifiedCovariatesLasso {
                SecondLearner::Lasso
            } else {
                SecondLearner::Xgboost
            };
            fit_modified_covariates(data, Family::Gaussian, learner, &pi, config, seed)
        }
        Strategy::AugmentedModifiedCovariatesLasso | Strategy::AugmentedModifiedCovariatesXgboost => {
            let pi = resolve_logistic_propensity(data, propensity, config, seed)?;
            let learner = if strategy == Strategy::AugmentedModifiedCovariatesLasso {
                SecondLearner::Lasso
            } else {
                SecondLearner::Xgboost
            };
            fit_augmented_modified_covariates(data, learner, &pi, config, seed)
        }
        Strategy::AipwLasso | Strategy::AipwSuperLearner => {
            let owned;
            let nuis = match nuisances {
                Some(n) => n,
                None => {
                    owned = estimate_super_learner_nuisances(data, propensity, config, derive_seed(seed, &[label("nuisances")]))?;
                    &owned
                }
            };
            let stage = if strategy == Strategy::AipwLasso {
                AipwSecondStage::Lasso
            } else {
                AipwSecondStage::SuperLearner
            };
            fit_aipw_cate(data, nuis, stage, config, seed)
        }
        Strategy::CausalForest => fit_causal_forest_cate(data, propensity, config, seed),
    }
}

fn cross_fit_splits(n: usize, folds: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    if folds < 2 {
        let all: Vec<usize> = (0..n).collect();
        return vec![(all.clone(), all)];
    }
    let assignment = kfold_assignment(n, folds, derive_seed(seed, &[label("cross-fit")]));
    (0..folds).map(|k| split_fold(&assignment, k)).collect()
}

/// Cross-fitted Super Learner nuisances: one outcome Super Learner per arm
/// and, unless known, a binomial Super Learner for the propensity.
pub fn estimate_super_learner_nuisances(
    data: &Dataset,
    propensity: &PropensityMode,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<NuisanceEstimates> {
    config.validate()?;
    let n = data.n();
    let mut mu0 = vec![0.0; n];
    let mut mu1 = vec![0.0; n];
    let mut pi = match propensity {
        PropensityMode::Known(pi) => {
            check_len(pi, n, "known propensities")?;
            pi.clone()
        }
        PropensityMode::Estimated => vec![0.0; n],
    };
    let mut diagnostics = Vec::new();
    let a = data.a_f64();
    for (k, (train, test)) in cross_fit_splits(n, config.cross_fit_folds, seed).into_iter().enumerate() {
        let part = data.subset_rows(&train);
        let x_test = take_rows(data.w.view(), &test);
        for (arm, out) in [(false, &mut mu0), (true, &mut mu1)] {
            let rows = part.arm_rows(arm);
            let yv: Vec<f64> = rows.iter().map(|&i| part.y[i]).collect();
            let pred = if data.p() == 0 || rows.len() < config.super_learner_folds {
                Array1::from_elem(test.len(), mean(&yv))
            } else {
                let xa = take_rows(part.w.view(), &rows);
                let sl = fit_super_learner(
                    &config.super_learner_library,
                    xa.view(),
                    &yv,
                    Family::Gaussian,
                    config.super_learner_folds,
                    derive_seed(seed, &[k as u64, arm as u64]),
                )?;
                diagnostics.extend(sl.warnings.iter().cloned());
                sl.predict(x_test.view())?
            };
            test.iter().zip(pred.iter()).for_each(|(&i, &v)| out[i] = v);
        }
        if !propensity.is_known() {
            let at: Vec<f64> = train.iter().map(|&i| a[i]).collect();
            let pred = if data.p() == 0 {
                Array1::from_elem(test.len(), mean(&at))
            } else {
                let sl = fit_super_learner(
                    &config.super_learner_library,
                    part.w.view(),
                    &at,
                    Family::Binomial,
                    config.super_learner_folds,
                    derive_seed(seed, &[k as u64, 2]),
                )?;
                diagnostics.extend(sl.warnings.iter().cloned());
                sl.predict(x_test.view())?
            };
            test.iter().zip(pred.iter()).for_each(|(&i, &v)| pi[i] = v);
        }
    }
    let pi = clamp_all(pi, config.pi_floor);
    diagnostics.extend(positivity_warning(&pi, config.pi_floor));
    Ok(NuisanceEstimates {
        mu0,
        mu1,
        pi,
        pi_known: propensity.is_known(),
        diagnostics,
    })
}

/// Cross-fitted lasso nuisances for randomized designs: `μ̂(w, a)` from a
/// lasso on `[A, W, A·W]`, with the known propensities.
pub fn estimate_lasso_interaction_nuisances(
    data: &Dataset,
    known_pi: &[f64],
    config: &EstimatorConfig,
    seed: u64,
) -> Result<NuisanceEstimates> {
    config.validate()?;
    let n = data.n();
    check_len(known_pi, n, "known propensities")?;
    let p = data.p();
    let mut mu0 = vec![0.0; n];
    let mut mu1 = vec![0.0; n];
    for (k, (train, test)) in cross_fit_splits(n, config.cross_fit_folds, seed).into_iter().enumerate() {
        let part = data.subset_rows(&train);
        let x = interaction_design(part.w.view(), &part.a);
        let m = cv_lasso(x.view(), &part.y, None, Family::Gaussian, true, config, derive_seed(seed, &[k as u64]))?;
        for &i in &test {
            let w = data.w.row(i);
            let base = m.intercept + m.coefficients[1..=p].iter().zip(w).map(|(c, x)| c * x).sum::<f64>();
            let effect = m.coefficients[0] + m.coefficients[1 + p..].iter().zip(w).map(|(c, x)| c * x).sum::<f64>();
            mu0[i] = base;
            mu1[i] = base + effect;
        }
    }
    Ok(NuisanceEstimates {
        mu0,
        mu1,
        pi: clamp_all(known_pi.iter().copied(), config.pi_floor),
        pi_known: true,
        diagnostics: Vec::new(),
    })
}
