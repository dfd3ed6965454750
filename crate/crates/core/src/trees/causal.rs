//! Causal forests: trees split to separate residual-on-residual slopes and the
//! forest predicts a leaf-co-occurrence weighted Robinson slope.
//!
//! With `αᵢ(x) = B⁻¹ Σ_b 1{i ∈ L_b(x)} / |L_b(x)|` the slope
//! `Σ αᵢ r̃ᵢ ãᵢ / Σ αᵢ ãᵢ²` equals `Σ_b (S_ay/|L|) / Σ_b (S_aa/|L|)`, so each
//! leaf only has to keep its two normalized sums.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, ArrayView2};
use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::forest::draw_rows;
use super::{check_shapes, ForestConfig, Tree, TreeNode};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

/// Denominators at or below this are treated as degenerate.
const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CausalTree {
    pub tree: Tree,
    /// `(S_ay / count, S_aa / count)` for every node; only leaves are read.
    pub leaf_stats: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalForestModel {
    pub trees: Vec<CausalTree>,
    pub n_features: usize,
    pub config: ForestConfig,
    /// `Y − m̂(W)` for the training rows.
    pub outcome_residuals: Vec<f64>,
    /// `A − π̂(W)` for the training rows.
    pub treatment_residuals: Vec<f64>,
    pub global_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalPrediction {
    pub cate: Array1<f64>,
    /// Rows whose neighbourhood had no treatment variation and got the global slope.
    pub fallbacks: usize,
}

impl CausalForestModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<CausalPrediction> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                what: "causal forest prediction design",
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let mut fallbacks = 0;
        let cate = x
            .rows()
            .into_iter()
            .map(|row| {
                let (mut num, mut den) = (0.0, 0.0);
                for t in &self.trees {
                    let (ay, aa) = t.leaf_stats[t.tree.leaf_index(row)];
                    num += ay;
                    den += aa;
                }
                if den > DEGENERATE {
                    num / den
                } else {
                    fallbacks += 1;
                    self.global_slope
                }
            })
            .collect();
        Ok(CausalPrediction { cate, fallbacks })
    }
}

fn slope(ry: &[f64], ra: &[f64]) -> f64 {
    let num: f64 = ry.iter().zip(ra).map(|(y, a)| y * a).sum();
    let den: f64 = ra.iter().map(|a| a * a).sum();
    if den > DEGENERATE {
        num / den
    } else {
        0.0
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    ry: &'a [f64],
    ra: &'a [f64],
    treated: &'a [bool],
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
    buf: Vec<(f64, usize)>,
}

impl Builder<'_> {
    /// Maximizes `n_L·n_R·(τ_L − τ_R)²` over splits leaving both children with
    /// `min_leaf` rows and at least one row of each arm.
    fn best_split(&mut self, rows: &[usize], rng: &mut Rng) -> Option<(usize, f64)> {
        let n = rows.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let n_treated = rows.iter().filter(|&&i| self.treated[i]).count();
        if n_treated < 2 || n - n_treated < 2 {
            return None;
        }
        let (tot_ay, tot_aa) = rows
            .iter()
            .fold((0.0, 0.0), |(s, t), &i| (s + self.ry[i] * self.ra[i], t + self.ra[i] * self.ra[i]));
        let mut features = sample(rng, self.x.ncols(), self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        for &j in &features {
            self.buf.clear();
            self.buf.extend(rows.iter().map(|&i| (self.x[[i, j]], i)));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let (mut ay, mut aa, mut tl) = (0.0, 0.0, 0usize);
            for k in 0..n - 1 {
                let (v, i) = self.buf[k];
                ay += self.ry[i] * self.ra[i];
                aa += self.ra[i] * self.ra[i];
                tl += self.treated[i] as usize;
                let nl = k + 1;
                let next = self.buf[k + 1].0;
                if next <= v || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let cl = nl - tl;
                let tr = n_treated - tl;
                let cr = (n - nl) - tr;
                if tl == 0 || cl == 0 || tr == 0 || cr == 0 {
                    continue;
                }
                let aar = tot_aa - aa;
                if aa <= DEGENERATE || aar <= DEGENERATE {
                    continue;
                }
                let diff = ay / aa - (tot_ay - ay) / aar;
                let crit = (nl * (n - nl)) as f64 * diff * diff;
                if crit > 0.0 && best.is_none_or(|b| crit > b.0) {
                    best = Some((crit, j, 0.5 * (v + next)));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }

    fn build(&mut self, split_rows: Vec<usize>, rng: &mut Rng) -> Tree {
        let mut tree = Tree { nodes: vec![TreeNode::Leaf { value: 0.0 }] };
        let mut stack = vec![(0usize, split_rows, 0usize)];
        while let Some((node, rows, depth)) = stack.pop() {
            let split = if self.max_depth.is_none_or(|m| depth < m) {
                self.best_split(&rows, rng)
            } else {
                None
            };
            if let Some((feature, threshold)) = split {
                let (l, r): (Vec<_>, Vec<_>) = rows.into_iter().partition(|&i| self.x[[i, feature]] <= threshold);
                let left = tree.nodes.len();
                tree.nodes.push(TreeNode::Leaf { value: 0.0 });
                tree.nodes.push(TreeNode::Leaf { value: 0.0 });
                tree.nodes[node] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
        tree
    }
}

/// Fits a causal forest on residuals `Y − m̂(W)` and `A − π̂(W)`; `m_hat` and
/// `pi_hat` are the nuisance values at the training rows (out-of-bag or
/// otherwise held out). `config.n_trees == 0` yields the global slope.
pub fn fit_causal_forest(
    x: ArrayView2<f64>,
    y: &[f64],
    a: &[bool],
    m_hat: &[f64],
    pi_hat: &[f64],
    config: &ForestConfig,
) -> Result<CausalForestModel> {
    check_shapes(x, y, None)?;
    let (n, d) = x.dim();
    for (what, len) in [("treatment", a.len()), ("outcome nuisance", m_hat.len()), ("propensity nuisance", pi_hat.len())] {
        if len != n {
            return Err(Error::Dimension { what, expected: n, found: len });
        }
    }
    if m_hat.iter().chain(pi_hat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("causal forest nuisances"));
    }
    if let Some(&p) = pi_hat.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Propensity(p));
    }
    ForestConfig {
        n_trees: config.n_trees.max(1),
        ..config.clone()
    }
    .validate(d)?;

    let ry: Vec<f64> = y.iter().zip(m_hat).map(|(y, m)| y - m).collect();
    let ra: Vec<f64> = a.iter().zip(pi_hat).map(|(&a, p)| a as u8 as f64 - p).collect();
    let global_slope = slope(&ry, &ra);

    let mut builder = Builder {
        x,
        ry: &ry,
        ra: &ra,
        treated: a,
        min_leaf: config.min_leaf_size,
        max_depth: config.max_depth,
        mtry: config.mtry(d),
        buf: Vec::with_capacity(n),
    };
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[t as u64]));
        let mut rows: Vec<usize> = draw_rows(n, config, &mut rng)
            .into_iter()
            .flat_map(|(i, c)| core::iter::repeat_n(i, c as usize))
            .collect();
        let (split_rows, est_rows) = if config.honesty && rows.len() >= 2 {
            rows.shuffle(&mut rng);
            let est = rows.split_off(rows.len() / 2);
            rows.sort_unstable();
            (rows, est)
        } else {
            (rows.clone(), rows)
        };
        let tree = builder.build(split_rows, &mut rng);
        let mut sums = vec![(0.0, 0.0, 0usize); tree.nodes.len()];
        for &i in &est_rows {
            let s = &mut sums[tree.leaf_index(x.row(i))];
            s.0 += ry[i] * ra[i];
            s.1 += ra[i] * ra[i];
            s.2 += 1;
        }
        let leaf_stats = sums
            .into_iter()
            .map(|(ay, aa, c)| if c > 0 { (ay / c as f64, aa / c as f64) } else { (0.0, 0.0) })
            .collect();
        trees.push(CausalTree { tree, leaf_stats });
    }
    Ok(CausalForestModel {
        trees,
        n_features: d,
        config: config.clone(),
        outcome_residuals: ry,
        treatment_residuals: ra,
        global_slope,
    })
}
