//! Second-order gradient boosting of depth-limited regression trees, in the
//! style of XGBoost's exact greedy algorithm: every column is presorted once
//! and each tree level is grown by one pass over every sorted column.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_shapes, Tree, TreeNode};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{logit, sigmoid, weighted_mean};
use crate::{Error, Result};

const MIN_SPLIT_GAIN: f64 = 1e-10;
const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    pub l2_leaf_penalty: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf_size: 1,
            l2_leaf_penalty: 1.0,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.l2_leaf_penalty >= 0.0) {
            return Err(Error::Config("l2 leaf penalty must be nonnegative".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {} outside (0, 1]", self.subsample_fraction)));
        }
        if self.min_leaf_size == 0 {
            return Err(Error::Config("minimum leaf size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostLoss {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub loss: BoostLoss,
    pub n_features: usize,
    /// Mean training loss before the first round and after every round.
    pub train_loss: Vec<f64>,
}

impl BoostedTrees {
    /// Additive score `base + Σ trees`, before any link function.
    pub fn predict_score(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                what: "boosting prediction design",
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>())
            .collect())
    }

    /// Squared loss: the score. Logistic loss: the probability.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let score = self.predict_score(x)?;
        Ok(match self.loss {
            BoostLoss::Squared => score,
            BoostLoss::Logistic => score.mapv(sigmoid),
        })
    }
}

pub fn fit_gradient_boosting(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &BoostConfig,
    loss: BoostLoss,
) -> Result<BoostedTrees> {
    fit(x, y, weights, config, loss, None)
}

/// Boosting where observation `i` sees the margin `cᵢ · F(xᵢ)` instead of
/// `F(xᵢ)`; the base score is fixed at zero.
pub fn fit_gradient_boosting_with_multipliers(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &BoostConfig,
    loss: BoostLoss,
    multipliers: &[f64],
) -> Result<BoostedTrees> {
    if multipliers.len() != y.len() {
        return Err(Error::Dimension {
            what: "margin multipliers",
            expected: y.len(),
            found: multipliers.len(),
        });
    }
    fit(x, y, weights, config, loss, Some(multipliers))
}

fn mean_loss(loss: BoostLoss, y: &[f64], w: &[f64], margin: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    let mut t = 0.0;
    for i in 0..y.len() {
        let m = margin(i);
        let l = match loss {
            BoostLoss::Squared => 0.5 * (y[i] - m) * (y[i] - m),
            BoostLoss::Logistic => {
                // log(1 + e^m) − y·m, evaluated stably.
                let sp = if m > 0.0 { m + libm::log1p(libm::exp(-m)) } else { libm::log1p(libm::exp(m)) };
                sp - y[i] * m
            }
        };
        s += w[i] * l;
        t += w[i];
    }
    s / t
}

struct SortedColumn {
    rows: Vec<u32>,
    values: Vec<f64>,
}

struct NodeStats {
    g: f64,
    h: f64,
    count: usize,
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    g_left: f64,
    h_left: f64,
    n_left: usize,
}

fn fit(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &BoostConfig,
    loss: BoostLoss,
    multipliers: Option<&[f64]>,
) -> Result<BoostedTrees> {
    check_shapes(x, y, weights)?;
    config.validate()?;
    let (n, d) = x.dim();
    if n < 2 * config.min_leaf_size {
        return Err(Error::Config(format!("{n} rows cannot fill two leaves of size {}", config.min_leaf_size)));
    }
    if loss == BoostLoss::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("logistic boosting needs a 0/1 response".into()));
    }
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let c = |i: usize| multipliers.map_or(1.0, |m| m[i]);
    let base_score = match (multipliers, loss) {
        (Some(_), _) => 0.0,
        (None, BoostLoss::Squared) => weighted_mean(y, w),
        (None, BoostLoss::Logistic) => logit(weighted_mean(y, w).clamp(1e-6, 1.0 - 1e-6)),
    };

    let mut order: Vec<SortedColumn> = Vec::with_capacity(d);
    for j in 0..d {
        let mut rows: Vec<u32> = (0..n as u32).collect();
        rows.sort_by(|&a, &b| x[[a as usize, j]].total_cmp(&x[[b as usize, j]]));
        let values = rows.iter().map(|&i| x[[i as usize, j]]).collect();
        order.push(SortedColumn { rows, values });
    }

    let mut score = vec![base_score; n];
    let mut current = mean_loss(loss, y, w, |i| c(i) * score[i]);
    let mut train_loss = vec![current];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut node_of = vec![NO_NODE; n];
    let n_sub = (libm::round(config.subsample_fraction * n as f64) as usize).clamp(1, n);

    for round in 0..config.n_rounds {
        for i in 0..n {
            let ci = c(i);
            let m = ci * score[i];
            let (g, h) = match loss {
                BoostLoss::Squared => (m - y[i], 1.0),
                BoostLoss::Logistic => {
                    let p = sigmoid(m);
                    (p - y[i], (p * (1.0 - p)).max(1e-16))
                }
            };
            grad[i] = w[i] * ci * g;
            hess[i] = w[i] * ci * ci * h;
        }
        if n_sub < n {
            node_of.iter_mut().for_each(|v| *v = NO_NODE);
            let mut rng = rng_from_seed(derive_seed(config.seed, &[round as u64]));
            for i in sample(&mut rng, n, n_sub) {
                node_of[i] = 0;
            }
        } else {
            node_of.iter_mut().for_each(|v| *v = 0);
        }

        let mut tree = grow_tree(x, &order, &grad, &hess, &mut node_of, config);
        for node in tree.nodes.iter_mut() {
            if let TreeNode::Leaf { value } = node {
                *value *= config.learning_rate;
            }
        }
        let step: Vec<f64> = (0..n).map(|i| tree.predict_row(x.row(i))).collect();
        // Halve the step until the training loss does not increase.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = mean_loss(loss, y, w, |i| c(i) * (score[i] + scale * step[i]));
            if cand <= current {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        if let Some(new_loss) = accepted {
            if scale != 1.0 {
                for node in tree.nodes.iter_mut() {
                    if let TreeNode::Leaf { value } = node {
                        *value *= scale;
                    }
                }
            }
            for i in 0..n {
                score[i] += scale * step[i];
            }
            current = new_loss;
            trees.push(tree);
        }
        train_loss.push(current);
    }
    Ok(BoostedTrees {
        base_score,
        trees,
        loss,
        n_features: d,
        train_loss,
    })
}

fn grow_tree(
    x: ArrayView2<f64>,
    order: &[SortedColumn],
    grad: &[f64],
    hess: &[f64],
    node_of: &mut [u32],
    config: &BoostConfig,
) -> Tree {
    let lambda = config.l2_leaf_penalty;
    let min_leaf = config.min_leaf_size;
    let mut root = NodeStats { g: 0.0, h: 0.0, count: 0 };
    for (i, &k) in node_of.iter().enumerate() {
        if k != NO_NODE {
            root.g += grad[i];
            root.h += hess[i];
            root.count += 1;
        }
    }
    let mut tree = Tree { nodes: vec![TreeNode::Leaf { value: 0.0 }] };
    let mut stats = vec![root];
    let mut frontier: Vec<usize> = vec![0];
    let score = |g: f64, h: f64| g * g / (h + lambda);

    for _depth in 0..config.max_depth {
        let splittable: Vec<usize> = frontier.iter().copied().filter(|&k| stats[k].count >= 2 * min_leaf).collect();
        if splittable.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; tree.nodes.len()];
        for (s, &k) in splittable.iter().enumerate() {
            slot[k] = s;
        }
        let m = splittable.len();
        let mut best: Vec<Option<SplitCandidate>> = (0..m).map(|_| None).collect();
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut nl = vec![0usize; m];
        let mut last = vec![f64::NAN; m];
        for (j, col) in order.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            nl.iter_mut().for_each(|v| *v = 0);
            for (&iu, &xv) in col.rows.iter().zip(&col.values) {
                let i = iu as usize;
                let k = node_of[i];
                if k == NO_NODE {
                    continue;
                }
                let s = slot[k as usize];
                if s == usize::MAX {
                    continue;
                }
                if nl[s] >= min_leaf && xv > last[s] {
                    let st = &stats[splittable[s]];
                    if st.count - nl[s] >= min_leaf {
                        let gain = 0.5 * (score(gl[s], hl[s]) + score(st.g - gl[s], st.h - hl[s]) - score(st.g, st.h));
                        if gain > MIN_SPLIT_GAIN && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                            best[s] = Some(SplitCandidate {
                                gain,
                                feature: j,
                                threshold: 0.5 * (last[s] + xv),
                                g_left: gl[s],
                                h_left: hl[s],
                                n_left: nl[s],
                            });
                        }
                    }
                }
                gl[s] += grad[i];
                hl[s] += hess[i];
                nl[s] += 1;
                last[s] = xv;
            }
        }
        let mut next_frontier = Vec::new();
        let mut split_of = vec![None; tree.nodes.len()];
        for (s, cand) in best.into_iter().enumerate() {
            let Some(b) = cand else { continue };
            let k = splittable[s];
            let left = tree.nodes.len();
            tree.nodes.push(TreeNode::Leaf { value: 0.0 });
            tree.nodes.push(TreeNode::Leaf { value: 0.0 });
            tree.nodes[k] = TreeNode::Split {
                feature: b.feature,
                threshold: b.threshold,
                left,
                right: left + 1,
            };
            let parent = &stats[k];
            let right_stats = NodeStats {
                g: parent.g - b.g_left,
                h: parent.h - b.h_left,
                count: parent.count - b.n_left,
            };
            stats.push(NodeStats {
                g: b.g_left,
                h: b.h_left,
                count: b.n_left,
            });
            stats.push(right_stats);
            split_of[k] = Some((b.feature, b.threshold, left));
            next_frontier.push(left);
            next_frontier.push(left + 1);
        }
        if next_frontier.is_empty() {
            break;
        }
        for (i, k) in node_of.iter_mut().enumerate() {
            if *k == NO_NODE {
                continue;
            }
            if let Some((f, t, left)) = split_of[*k as usize] {
                *k = if x[[i, f]] <= t { left as u32 } else { left as u32 + 1 };
            }
        }
        frontier = next_frontier;
    }
    for (k, node) in tree.nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            let st = &stats[k];
            let denom = st.h + lambda;
            *value = if denom > 0.0 { -st.g / denom } else { 0.0 };
        }
    }
    tree
}
