//! Super Learner: cross-validated convex stacking of a small learner library.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::penalized::{fit_cv, Family, FittedLinearModel, RegressionProblem, PROB_CLAMP};
use crate::rng::{derive_seed, label};
use crate::stats::{kfold_assignment, mean, split_fold};
use crate::trees::{fit_gradient_boosting, fit_random_forest, BoostConfig, BoostLoss, BoostedTrees, ForestConfig, RandomForest};
use crate::{Error, Result};

const META_TOLERANCE: f64 = 1e-8;
const META_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Lasso,
    Ridge,
    /// Elastic net with α = ½.
    ElasticNet,
    RandomForest,
    GradientBoosting,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lasso => "lasso",
            Self::Ridge => "ridge",
            Self::ElasticNet => "elastic_net",
            Self::RandomForest => "random_forest",
            Self::GradientBoosting => "gradient_boosting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Folds for the penalty search of the penalized learners.
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_grid_size")]
    pub lambda_grid_size: usize,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub boost: BoostConfig,
}

fn default_cv_folds() -> usize {
    10
}

fn default_grid_size() -> usize {
    100
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            cv_folds: default_cv_folds(),
            lambda_grid_size: default_grid_size(),
            forest: ForestConfig::default(),
            boost: BoostConfig::default(),
        }
    }
}

/// Lasso, ridge, elastic net, random forest and gradient boosting.
pub fn default_library() -> Vec<LearnerSpec> {
    [
        LearnerKind::Lasso,
        LearnerKind::Ridge,
        LearnerKind::ElasticNet,
        LearnerKind::RandomForest,
        LearnerKind::GradientBoosting,
    ]
    .into_iter()
    .map(LearnerSpec::new)
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedLearner {
    Linear(FittedLinearModel),
    Forest(RandomForest),
    Boosted(BoostedTrees),
}

impl FittedLearner {
    /// Binomial learners return probabilities.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            Self::Linear(m) => m.predict(x),
            Self::Forest(f) => f.predict(x),
            Self::Boosted(b) => b.predict(x),
        }
    }
}

pub fn fit_learner(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64], family: Family, seed: u64) -> Result<FittedLearner> {
    let alpha = match spec.kind {
        LearnerKind::Lasso => 1.0,
        LearnerKind::Ridge => 0.0,
        LearnerKind::ElasticNet => 0.5,
        LearnerKind::RandomForest => {
            let cfg = ForestConfig { seed, ..spec.forest.clone() };
            return fit_random_forest(x, y, None, &cfg).map(FittedLearner::Forest);
        }
        LearnerKind::GradientBoosting => {
            let cfg = BoostConfig { seed, ..spec.boost.clone() };
            let loss = match family {
                Family::Gaussian => BoostLoss::Squared,
                Family::Binomial => BoostLoss::Logistic,
            };
            return fit_gradient_boosting(x, y, None, &cfg, loss).map(FittedLearner::Boosted);
        }
    };
    let response = ArrayView1::from(y);
    let problem = RegressionProblem::new(x, response, family).with_penalty_mix(alpha);
    let (_, model) = fit_cv(&problem, spec.cv_folds.min(y.len()), spec.lambda_grid_size, seed)?;
    Ok(FittedLearner::Linear(model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperLearnerModel {
    /// Names of the learners that survived cross-validation.
    pub names: Vec<&'static str>,
    /// Full-data refits; `None` where the weight is zero.
    pub learners: Vec<Option<FittedLearner>>,
    /// Nonnegative and summing to one.
    pub weights: Vec<f64>,
    pub folds: Vec<usize>,
    pub learner_cv_risk: Vec<f64>,
    pub cv_risk: f64,
    pub family: Family,
    pub n_features: usize,
    pub warnings: Vec<String>,
}

impl SuperLearnerModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                what: "super learner prediction design",
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let mut out = Array1::zeros(x.nrows());
        for (learner, &w) in self.learners.iter().zip(&self.weights) {
            if let Some(l) = learner {
                out.scaled_add(w, &l.predict(x)?);
            }
        }
        if self.family == Family::Binomial {
            out.mapv_inplace(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
        }
        Ok(out)
    }
}

pub fn predict_super_learner(model: &SuperLearnerModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    model.predict(x)
}

pub(crate) fn take_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Mean loss of the combination `Z w` against `y`.
pub fn meta_risk(z: ArrayView2<f64>, y: &[f64], w: &[f64], family: Family) -> f64 {
    let n = y.len() as f64;
    z.rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let f: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            match family {
                Family::Gaussian => (yi - f) * (yi - f),
                Family::Binomial => {
                    let p = f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    -(yi * libm::log(p) + (1.0 - yi) * libm::log(1.0 - p))
                }
            }
        })
        .sum::<f64>()
        / n
}

fn meta_gradient(z: ArrayView2<f64>, y: &[f64], w: &[f64], family: Family) -> Vec<f64> {
    let n = y.len() as f64;
    let mut g = vec![0.0; w.len()];
    for (row, &yi) in z.rows().into_iter().zip(y) {
        let f: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        let d = match family {
            Family::Gaussian => 2.0 * (f - yi),
            Family::Binomial => {
                if f <= PROB_CLAMP || f >= 1.0 - PROB_CLAMP {
                    0.0
                } else {
                    (f - yi) / (f * (1.0 - f))
                }
            }
        };
        for (gk, zk) in g.iter_mut().zip(row) {
            *gk += d * zk / n;
        }
    }
    g
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
}

/// Minimizes the meta risk over the simplex by projected gradient descent
/// with backtracking, then keeps whichever of the iterate and the vertices
/// has the lowest risk.
pub fn solve_simplex_weights(z: ArrayView2<f64>, y: &[f64], family: Family) -> Vec<f64> {
    let l = z.ncols();
    let mut w = vec![1.0 / l as f64; l];
    if l > 1 {
        let mut f = meta_risk(z, y, &w, family);
        let mut step = 1.0;
        for _ in 0..META_MAX_ITER {
            let g = meta_gradient(z, y, &w, family);
            let mut accepted = None;
            for _ in 0..60 {
                let cand = project_to_simplex(&w.iter().zip(&g).map(|(a, b)| a - step * b).collect::<Vec<_>>());
                let fc = meta_risk(z, y, &cand, family);
                let decrease: f64 = g.iter().zip(&cand).zip(&w).map(|((g, c), w)| g * (c - w)).sum();
                let dist: f64 = cand.iter().zip(&w).map(|(c, w)| (c - w) * (c - w)).sum();
                if fc <= f + decrease + dist / (2.0 * step) {
                    accepted = Some((cand, fc, dist));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc, dist)) = accepted else { break };
            let improvement = f - fc;
            w = cand;
            f = fc;
            step *= 2.0;
            if libm::sqrt(dist) < META_TOLERANCE || improvement.abs() < META_TOLERANCE * 1e-3 {
                break;
            }
        }
        // Drop negligible weights so fewer learners need refitting.
        let mut trimmed: Vec<f64> = w.iter().map(|&x| if x < 1e-6 { 0.0 } else { x }).collect();
        normalize(&mut trimmed);
        if meta_risk(z, y, &trimmed, family) <= f + 1e-10 {
            w = trimmed;
            f = meta_risk(z, y, &w, family);
        }
        for k in 0..l {
            let mut e = vec![0.0; l];
            e[k] = 1.0;
            if meta_risk(z, y, &e, family) < f {
                f = meta_risk(z, y, &e, family);
                w = e;
            }
        }
    }
    normalize(&mut w);
    w
}

pub fn fit_super_learner(
    library: &[LearnerSpec],
    x: ArrayView2<f64>,
    y: &[f64],
    family: Family,
    folds: usize,
    seed: u64,
) -> Result<SuperLearnerModel> {
    let n = x.nrows();
    if library.is_empty() {
        return Err(Error::Config("super learner library is empty".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            what: "super learner response",
            expected: n,
            found: y.len(),
        });
    }
    if folds < 2 || n < folds {
        return Err(Error::Config(format!("{folds}-fold super learner needs folds >= 2 and n >= folds (n = {n})")));
    }
    let assignment = kfold_assignment(n, folds, derive_seed(seed, &[label("super-learner-folds")]));
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds).map(|k| split_fold(&assignment, k)).collect();
    let mut warnings = Vec::new();
    let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();
    for (li, spec) in library.iter().enumerate() {
        let mut oof = vec![0.0; n];
        let mut failures = Vec::new();
        for (k, (train, test)) in splits.iter().enumerate() {
            let xt = take_rows(x, train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fitted = fit_learner(spec, xt.view(), &yt, family, derive_seed(seed, &[li as u64, k as u64]))
                .and_then(|m| m.predict(take_rows(x, test).view()));
            match fitted {
                Ok(pred) => test.iter().zip(pred.iter()).for_each(|(&i, &p)| oof[i] = p),
                Err(e) => {
                    let fallback = mean(&yt);
                    test.iter().for_each(|&i| oof[i] = fallback);
                    failures.push(e.to_string());
                }
            }
        }
        if failures.len() == folds {
            warnings.push(format!("{} dropped: failed on every fold ({})", spec.kind.name(), failures[0]));
        } else {
            if !failures.is_empty() {
                warnings.push(format!(
                    "{} failed on {} of {folds} folds; training means used there",
                    spec.kind.name(),
                    failures.len()
                ));
            }
            kept.push((li, oof));
        }
    }
    if kept.is_empty() {
        return Err(Error::AllLearnersFailed(warnings.join("; ")));
    }
    let z = Array2::from_shape_fn((n, kept.len()), |(i, k)| kept[k].1[i]);
    let learner_cv_risk: Vec<f64> = (0..kept.len())
        .map(|k| {
            let mut e = vec![0.0; kept.len()];
            e[k] = 1.0;
            meta_risk(z.view(), y, &e, family)
        })
        .collect();
    let mut weights = solve_simplex_weights(z.view(), y, family);
    let mut learners = Vec::with_capacity(kept.len());
    for (k, (li, _)) in kept.iter().enumerate() {
        if weights[k] == 0.0 {
            learners.push(None);
            continue;
        }
        match fit_learner(&library[*li], x, y, family, derive_seed(seed, &[*li as u64, u64::MAX])) {
            Ok(m) => learners.push(Some(m)),
            Err(e) => {
                warnings.push(format!("{} failed on the full data and was given zero weight ({e})", library[*li].kind.name()));
                weights[k] = 0.0;
                learners.push(None);
            }
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::AllLearnersFailed(warnings.join("; ")));
    }
    normalize(&mut weights);
    let cv_risk = meta_risk(z.view(), y, &weights, family);
    Ok(SuperLearnerModel {
        names: kept.iter().map(|(li, _)| library[*li].kind.name()).collect(),
        learners,
        weights,
        folds: assignment,
        learner_cv_risk,
        cv_risk,
        family,
        n_features: x.ncols(),
        warnings,
    })
}
