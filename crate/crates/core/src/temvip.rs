//! Treatment-effect-modifier variable importance (TEM-VIP).
//!
//! For covariate `j` the target is `Cov(Δ(W), Wⱼ) / Var(Wⱼ)` with
//! `Δ(w) = μ(w,1) − μ(w,0)`: the slope of the conditional effect on `Wⱼ`
//! alone. The one-step estimate regresses AIPW pseudo-outcomes on the
//! centred covariate; Wald p-values are adjusted with Benjamini–Hochberg and
//! the selected covariates feed a second-stage CATE fit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cate::{
    estimate_lasso_interaction_nuisances, estimate_super_learner_nuisances, fit_strategy, pseudo_outcomes, CateFit, CateModel,
    Dataset, EstimatorConfig, NuisanceEstimates, PropensityMode, Strategy,
};
use crate::rng::{derive_seed, label};
use crate::stats::{mean, two_sided_p_value};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemVipEstimate {
    pub index: usize,
    pub psi_hat: f64,
    pub std_err: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub selected: bool,
    /// Set when the covariate has no variance; such rows never get selected.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    /// Known propensity and a lasso with all treatment interactions.
    RctLassoInteractions,
    /// Super Learners for the outcome and the propensity.
    ObservationalSuperLearner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemVipConfig {
    pub fdr_level: f64,
    pub nuisance_mode: NuisanceMode,
    pub cross_fit_folds: usize,
    pub pi_floor: f64,
}

impl Default for TemVipConfig {
    fn default() -> Self {
        Self {
            fdr_level: 0.05,
            nuisance_mode: NuisanceMode::ObservationalSuperLearner,
            cross_fit_folds: 5,
            pi_floor: crate::cate::PI_FLOOR,
        }
    }
}

impl TemVipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fdr_level > 0.0 && self.fdr_level < 1.0) {
            return Err(Error::Config(format!("FDR level {} outside (0, 1)", self.fdr_level)));
        }
        Ok(())
    }
}

/// Benjamini–Hochberg step-up adjustment. Returns the adjusted p-values in
/// the input order and the indices with adjusted value at most `level`.
pub fn bh_adjust(p_values: &[f64], level: f64) -> (Vec<f64>, Vec<usize>) {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        // m/k ≥ 1 is rounded first so the product never drops below p.
        running = running.min(p_values[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    let rejected = (0..m).filter(|&i| adjusted[i] <= level).collect();
    (adjusted, rejected)
}

/// One-step TEM-VIP estimates for every column, with BH adjustment at `fdr_level`.
pub fn estimate_temvip_all(data: &Dataset, nuisances: &NuisanceEstimates, pi_floor: f64, fdr_level: f64) -> Result<Vec<TemVipEstimate>> {
    let n = data.n();
    if nuisances.mu0.len() != n || nuisances.mu1.len() != n || nuisances.pi.len() != n {
        return Err(Error::Dimension {
            what: "TEM-VIP nuisances",
            expected: n,
            found: nuisances.mu0.len(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData("TEM-VIP needs at least two rows".into()));
    }
    let t = pseudo_outcomes(data, nuisances, pi_floor);
    Ok(temvip_from_pseudo_outcomes(data, &t, fdr_level))
}

/// As [`estimate_temvip_all`] but from precomputed pseudo-outcomes.
pub fn temvip_from_pseudo_outcomes(data: &Dataset, t: &[f64], fdr_level: f64) -> Vec<TemVipEstimate> {
    let n = data.n();
    let nf = n as f64;
    let t_bar = mean(t);
    let tc: Vec<f64> = t.iter().map(|v| v - t_bar).collect();
    let mut out: Vec<TemVipEstimate> = data
        .w
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let w_bar = col.sum() / nf;
            let (mut sxx, mut sxt) = (0.0, 0.0);
            for (x, tt) in col.iter().zip(&tc) {
                let xc = x - w_bar;
                sxx += xc * xc;
                sxt += xc * tt;
            }
            if !(sxx > 1e-12 * nf) {
                return TemVipEstimate {
                    index: j,
                    psi_hat: 0.0,
                    std_err: f64::INFINITY,
                    p_value: 1.0,
                    p_adjusted: 1.0,
                    selected: false,
                    error: Some(String::from("zero-variance covariate")),
                };
            }
            let psi = sxt / sxx;
            let var_w = sxx / nf;
            let mut s2 = 0.0;
            for (x, tt) in col.iter().zip(&tc) {
                let xc = x - w_bar;
                let phi = xc * (tt - psi * xc) / var_w;
                s2 += phi * phi;
            }
            let se = libm::sqrt(s2 / nf) / libm::sqrt(nf);
            let p = if se > 0.0 {
                two_sided_p_value(psi / se)
            } else if psi == 0.0 {
                1.0
            } else {
                0.0
            };
            TemVipEstimate {
                index: j,
                psi_hat: psi,
                std_err: se,
                p_value: p,
                p_adjusted: p,
                selected: false,
                error: None,
            }
        })
        .collect();
    let valid: Vec<usize> = (0..out.len()).filter(|&j| out[j].error.is_none()).collect();
    let raw: Vec<f64> = valid.iter().map(|&j| out[j].p_value).collect();
    let (adjusted, _) = bh_adjust(&raw, fdr_level);
    for (&j, adj) in valid.iter().zip(adjusted) {
        out[j].p_adjusted = adj;
        out[j].selected = adj <= fdr_level;
    }
    out
}

/// Result of the first stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub selected: Vec<usize>,
    pub report: Vec<TemVipEstimate>,
    pub nuisances: NuisanceEstimates,
}

/// Builds nuisances per `config.nuisance_mode`, estimates every TEM-VIP and
/// keeps the BH selections. The randomized mode needs known propensities.
pub fn filter_covariates_detailed(
    data: &Dataset,
    config: &TemVipConfig,
    propensity: &PropensityMode,
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<FilterOutcome> {
    config.validate()?;
    let est = EstimatorConfig {
        cross_fit_folds: config.cross_fit_folds,
        pi_floor: config.pi_floor,
        ..estimator.clone()
    };
    let seed = derive_seed(seed, &[label("temvip-nuisances")]);
    let nuisances = match (config.nuisance_mode, propensity) {
        (NuisanceMode::RctLassoInteractions, PropensityMode::Known(pi)) => estimate_lasso_interaction_nuisances(data, pi, &est, seed)?,
        (NuisanceMode::RctLassoInteractions, PropensityMode::Estimated) => {
            return Err(Error::Config("the randomized TEM-VIP mode needs known propensities".into()))
        }
        (NuisanceMode::ObservationalSuperLearner, _) => estimate_super_learner_nuisances(data, propensity, &est, seed)?,
    };
    filter_with_nuisances(data, config, nuisances)
}

/// Second half of the filter, for callers that already hold nuisances.
pub fn filter_with_nuisances(data: &Dataset, config: &TemVipConfig, nuisances: NuisanceEstimates) -> Result<FilterOutcome> {
    let report = estimate_temvip_all(data, &nuisances, config.pi_floor, config.fdr_level)?;
    let selected = report.iter().filter(|e| e.selected).map(|e| e.index).collect();
    Ok(FilterOutcome {
        selected,
        report,
        nuisances,
    })
}

pub fn filter_covariates(
    data: &Dataset,
    config: &TemVipConfig,
    propensity: &PropensityMode,
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    filter_covariates_detailed(data, config, propensity, estimator, seed).map(|f| f.selected)
}

/// Fits `strategy` on the selected columns. An empty selection gives the
/// constant model at the mean pseudo-outcome of the filter's nuisances.
/// `shared` nuisances, when given, are passed to the AIPW strategies.
#[allow(clippy::too_many_arguments)]
pub fn fit_on_selection(
    strategy: Strategy,
    data: &Dataset,
    selection: &[usize],
    propensity: &PropensityMode,
    filter_nuisances: &NuisanceEstimates,
    shared: Option<&NuisanceEstimates>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    let p = data.p();
    if selection.is_empty() {
        let t = pseudo_outcomes(data, filter_nuisances, config.pi_floor);
        return Ok(CateModel {
            strategy,
            fit: CateFit::Constant(mean(&t)),
            builtin_tems: strategy.has_builtin_tems().then(Vec::new),
            selected_columns: Some(Vec::new()),
            n_features: p,
            diagnostics: vec![String::from("empty TEM selection: constant CATE")],
        });
    }
    let restricted = data.select_columns(selection)?;
    let mut model = fit_strategy(strategy, &restricted, propensity, shared, config, seed)?;
    model.builtin_tems = model.builtin_tems.map(|t| t.into_iter().map(|k| selection[k]).collect());
    model.selected_columns = Some(selection.to_vec());
    model.n_features = p;
    Ok(model)
}

/// Filter, then fit `strategy` on the selection.
pub fn fit_filtered(
    data: &Dataset,
    temvip: &TemVipConfig,
    strategy: Strategy,
    propensity: &PropensityMode,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CateModel> {
    let filter = filter_covariates_detailed(data, temvip, propensity, config, seed)?;
    fit_on_selection(strategy, data, &filter.selected, propensity, &filter.nuisances, None, config, seed)
}
