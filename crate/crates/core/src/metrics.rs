//! Rule quality and interpretability metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cate::{Dataset, ItrRule};
use crate::{Error, Result};

/// Mean potential outcome on `test` under the given assignments.
pub fn rule_value(assignments: &[bool], test: &Dataset) -> Result<f64> {
    let (y0, y1) = test.potential_outcomes.as_ref().ok_or(Error::MissingPotentialOutcomes)?;
    if assignments.len() != test.n() {
        return Err(Error::Dimension {
            what: "rule assignments",
            expected: test.n(),
            found: assignments.len(),
        });
    }
    if assignments.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let total: f64 = assignments.iter().enumerate().map(|(i, &t)| if t { y1[i] } else { y0[i] }).sum();
    Ok(total / assignments.len() as f64)
}

pub fn rule_quality(rule: &ItrRule, test: &Dataset) -> Result<f64> {
    if test.potential_outcomes.is_none() {
        return Err(Error::MissingPotentialOutcomes);
    }
    rule_value(&rule.assign(test.w.view())?, test)
}

pub fn relative_rule_quality(value: f64, optimal_value: f64) -> Result<f64> {
    if optimal_value.abs() < 1e-9 {
        return Err(Error::UndefinedRatio {
            value,
            optimal: optimal_value,
        });
    }
    Ok(value / optimal_value)
}

/// False discovery, true negative and true positive proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interpretability {
    pub fdp: f64,
    pub tnp: f64,
    pub tpp: f64,
}

/// Compares a predicted modifier set with the truth among `p` covariates.
/// An empty prediction has no false discoveries; an empty truth gives a true
/// positive proportion of one, and `p = |truth|` a true negative proportion of one.
pub fn interpretability_metrics(predicted: &[usize], truth: &[usize], p: usize) -> Interpretability {
    let mut pred: Vec<usize> = predicted.iter().copied().filter(|&j| j < p).collect();
    pred.sort_unstable();
    pred.dedup();
    let mut is_true = alloc::vec![false; p];
    truth.iter().filter(|&&j| j < p).for_each(|&j| is_true[j] = true);
    let n_true = is_true.iter().filter(|&&t| t).count();
    let hits = pred.iter().filter(|&&j| is_true[j]).count();
    let false_pos = pred.len() - hits;
    let negatives = p - n_true;
    Interpretability {
        fdp: if pred.is_empty() { 0.0 } else { false_pos as f64 / pred.len() as f64 },
        tnp: if negatives == 0 { 1.0 } else { (negatives - false_pos) as f64 / negatives as f64 },
        tpp: if n_true == 0 { 1.0 } else { hits as f64 / n_true as f64 },
    }
}
