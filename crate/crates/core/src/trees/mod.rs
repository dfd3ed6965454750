//! Regression trees and the three ensembles built from them: random
//! forests, gradient-boosted trees and causal forests.
//!
//! A split sends `x[feature] <= threshold` to the left child. Thresholds are
//! midpoints between consecutive distinct values. Candidate splits are
//! scanned by increasing feature index and then increasing threshold and only
//! a strictly better split replaces the incumbent, so ties go to the lowest
//! feature index and then the lowest threshold.

use alloc::vec::Vec;

use ndarray::{ArrayView1, ArrayView2};

mod boost;
mod causal;
mod forest;

pub use boost::{fit_gradient_boosting, fit_gradient_boosting_with_multipliers, BoostConfig, BoostLoss, BoostedTrees};
pub use causal::{fit_causal_forest, CausalForestModel, CausalPrediction};
pub use forest::{fit_random_forest, fit_random_forest_with_oob, ForestConfig, RandomForest};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Arena-allocated binary tree; the root is node 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_index(&self, row: ArrayView1<f64>) -> usize {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { .. } => return k,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

pub(crate) fn check_shapes(x: ArrayView2<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension {
            what: "tree response",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != x.nrows() {
            return Err(Error::Dimension {
                what: "tree weights",
                expected: x.nrows(),
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("tree weights must be finite and nonnegative".into()));
        }
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tree inputs"));
    }
    Ok(())
}

/// `⌈√d⌉`, the default number of candidate features per split.
pub fn default_mtry(d: usize) -> usize {
    let mut m = libm::sqrt(d as f64) as usize;
    while m * m < d {
        m += 1;
    }
    m.clamp(1, d.max(1))
}
