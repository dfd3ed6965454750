use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, ArrayView2};
use rand::seq::index::sample;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::{check_shapes, default_mtry, Tree, TreeNode};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until the leaf-size limit stops them.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    /// Candidate features per split; `None` means `⌈√d⌉`.
    pub features_per_split: Option<usize>,
    pub subsample_fraction: f64,
    /// Draw `subsample_fraction · n` rows with replacement instead of without.
    pub bootstrap: bool,
    /// Causal forests only: split on one half of each subsample and estimate
    /// leaves on the other.
    pub honesty: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: None,
            min_leaf_size: 5,
            features_per_split: None,
            subsample_fraction: 1.0,
            bootstrap: true,
            honesty: false,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// Defaults for the causal forest.
    pub fn causal() -> Self {
        Self {
            min_leaf_size: 10,
            subsample_fraction: 0.5,
            bootstrap: false,
            honesty: true,
            ..Self::default()
        }
    }

    pub fn mtry(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| default_mtry(d))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let m = self.mtry(d);
        if d == 0 || m == 0 || m > d {
            return Err(Error::Config(format!("features per split {m} outside [1, {d}]")));
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

/// Draws the rows of one tree as `(row, multiplicity)` pairs.
pub(crate) fn draw_rows(n: usize, cfg: &ForestConfig, rng: &mut Rng) -> Vec<(usize, u32)> {
    let m = (libm::round(cfg.subsample_fraction * n as f64) as usize).clamp(1, n);
    if cfg.bootstrap {
        let mut counts = vec![0u32; n];
        for _ in 0..m {
            counts[rng.random_range(0..n)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0)
            .map(|(i, c)| (i, c))
            .collect()
    } else {
        let mut rows = sample(rng, n, m).into_vec();
        rows.sort_unstable();
        rows.into_iter().map(|i| (i, 1)).collect()
    }
}

/// Scratch entry for split search: (feature value, weight·y, weight, count).
type Entry = (f64, f64, f64, u32);

struct RegressionBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    w: &'a [f64],
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
    buf: Vec<Entry>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl RegressionBuilder<'_> {
    fn leaf_value(&self, rows: &[(usize, u32)]) -> f64 {
        let (s, t) = rows.iter().fold((0.0, 0.0), |(s, t), &(i, c)| {
            let w = self.w[i] * c as f64;
            (s + w * self.y[i], t + w)
        });
        if t > 0.0 {
            s / t
        } else {
            0.0
        }
    }

    fn best_split(&mut self, rows: &[(usize, u32)], rng: &mut Rng) -> Option<Best> {
        let count: usize = rows.iter().map(|r| r.1 as usize).sum();
        if count < 2 * self.min_leaf {
            return None;
        }
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(i, _)| {
            (lo.min(self.y[i]), hi.max(self.y[i]))
        });
        if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
            return None;
        }
        let mean = self.leaf_value(rows);
        let d = self.x.ncols();
        let mut features = sample(rng, d, self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<Best> = None;
        for &j in &features {
            self.buf.clear();
            for &(i, c) in rows {
                let w = self.w[i] * c as f64;
                self.buf.push((self.x[[i, j]], w * (self.y[i] - mean), w, c));
            }
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let (total_s, total_w) = self.buf.iter().fold((0.0, 0.0), |(s, t), e| (s + e.1, t + e.2));
            let (mut sl, mut wl, mut nl) = (0.0, 0.0, 0usize);
            for k in 0..self.buf.len() - 1 {
                let e = self.buf[k];
                sl += e.1;
                wl += e.2;
                nl += e.3 as usize;
                let next = self.buf[k + 1].0;
                if next <= e.0 || nl < self.min_leaf || count - nl < self.min_leaf {
                    continue;
                }
                let wr = total_w - wl;
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let sr = total_s - sl;
                let gain = sl * sl / wl + sr * sr / wr - total_s * total_s / total_w;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: j,
                        threshold: 0.5 * (e.0 + next),
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<(usize, u32)>, rng: &mut Rng) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        tree.nodes.push(TreeNode::Leaf { value: 0.0 });
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((node, rows, depth)) = stack.pop() {
            let can_split = self.max_depth.is_none_or(|m| depth < m);
            let split = if can_split { self.best_split(&rows, rng) } else { None };
            match split {
                Some(b) => {
                    let (l, r): (Vec<_>, Vec<_>) = rows.into_iter().partition(|&(i, _)| self.x[[i, b.feature]] <= b.threshold);
                    let left = tree.nodes.len();
                    tree.nodes.push(TreeNode::Leaf { value: 0.0 });
                    tree.nodes.push(TreeNode::Leaf { value: 0.0 });
                    tree.nodes[node] = TreeNode::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
                None => {
                    tree.nodes[node] = TreeNode::Leaf {
                        value: self.leaf_value(&rows),
                    };
                }
            }
        }
        tree
    }
}

/// Breiman-style regression forest; the prediction is the mean of the
/// per-tree leaf means.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl RandomForest {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                what: "forest prediction design",
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
            .collect())
    }
}

pub fn fit_random_forest(x: ArrayView2<f64>, y: &[f64], weights: Option<&[f64]>, config: &ForestConfig) -> Result<RandomForest> {
    fit_inner(x, y, weights, config, false).map(|(f, _)| f)
}

/// Also returns out-of-bag predictions for the training rows. Rows that are
/// in-bag for every tree fall back to the full-forest prediction.
pub fn fit_random_forest_with_oob(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &ForestConfig,
) -> Result<(RandomForest, Array1<f64>)> {
    let (forest, oob) = fit_inner(x, y, weights, config, true)?;
    Ok((forest, oob.expect("requested")))
}

fn fit_inner(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &ForestConfig,
    want_oob: bool,
) -> Result<(RandomForest, Option<Array1<f64>>)> {
    check_shapes(x, y, weights)?;
    let (n, d) = x.dim();
    config.validate(d)?;
    if n < 2 * config.min_leaf_size {
        return Err(Error::Config(format!(
            "{n} rows cannot fill two leaves of size {}",
            config.min_leaf_size
        )));
    }
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let mut builder = RegressionBuilder {
        x,
        y,
        w,
        min_leaf: config.min_leaf_size,
        max_depth: config.max_depth,
        mtry: config.mtry(d),
        buf: Vec::with_capacity(n),
    };
    let mut oob_sum = vec![0.0; if want_oob { n } else { 0 }];
    let mut oob_cnt = vec![0u32; oob_sum.len()];
    let mut in_bag = vec![false; oob_sum.len()];
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[t as u64]));
        let rows = draw_rows(n, config, &mut rng);
        if want_oob {
            in_bag.iter_mut().for_each(|b| *b = false);
            rows.iter().for_each(|&(i, _)| in_bag[i] = true);
        }
        let tree = builder.build(rows, &mut rng);
        if want_oob {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                oob_sum[i] += tree.predict_row(x.row(i));
                oob_cnt[i] += 1;
            }
        }
        trees.push(tree);
    }
    let forest = RandomForest { trees, n_features: d };
    let oob = if want_oob {
        let mut pred = Array1::zeros(n);
        for i in 0..n {
            pred[i] = if oob_cnt[i] > 0 {
                oob_sum[i] / oob_cnt[i] as f64
            } else {
                let k = forest.trees.len() as f64;
                forest.trees.iter().map(|t| t.predict_row(x.row(i))).sum::<f64>() / k
            };
        }
        Some(pred)
    } else {
        None
    };
    Ok((forest, oob))
}
