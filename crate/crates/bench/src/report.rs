//! Aggregation of replicate rows into appendix-style summary tables.

use std::fmt::Write as _;
use std::io::Write;

use itrbench_core::cate::Strategy;
use itrbench_core::dgp::DgpId;
use serde::{Deserialize, Serialize};

use crate::harness::{FitStatus, ReplicateResult};
use crate::io::{fmt_opt, NA};
use crate::{BenchError, Result};

/// Means over the replicates of one (dgp, estimator, filtered, n) cell.
/// Proportions are percentages. A metric is `None` when any successful
/// replicate lacks it, or when every replicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dgp: DgpId,
    pub estimator: Strategy,
    pub filtered: bool,
    pub n: usize,
    pub replicates: usize,
    pub failed: usize,
    pub rule_quality: Option<f64>,
    pub mean_test_outcome: Option<f64>,
    pub fdr_pct: Option<f64>,
    pub tpr_pct: Option<f64>,
    pub tnr_pct: Option<f64>,
    pub mean_fit_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v?;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Groups in order of first appearance.
pub fn aggregate(results: &[ReplicateResult]) -> SummaryTable {
    let mut keys: Vec<(DgpId, Strategy, bool, usize)> = Vec::new();
    for r in results {
        let key = (r.dgp, r.estimator, r.filtered, r.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let rows = keys
        .into_iter()
        .map(|(dgp, estimator, filtered, n)| {
            let group: Vec<&ReplicateResult> = results
                .iter()
                .filter(|r| r.dgp == dgp && r.estimator == estimator && r.filtered == filtered && r.n == n)
                .collect();
            let ok: Vec<&ReplicateResult> = group.iter().copied().filter(|r| r.status == FitStatus::Ok).collect();
            let pct = |f: fn(&ReplicateResult) -> Option<f64>| mean_of(ok.iter().map(|r| f(r))).map(|m| 100.0 * m);
            SummaryRow {
                dgp,
                estimator,
                filtered,
                n,
                replicates: group.len(),
                failed: group.len() - ok.len(),
                rule_quality: mean_of(ok.iter().map(|r| r.relative_rule_quality)),
                mean_test_outcome: mean_of(ok.iter().map(|r| r.mean_test_outcome)),
                fdr_pct: pct(|r| r.fdp),
                tpr_pct: pct(|r| r.tpp),
                tnr_pct: pct(|r| r.tnp),
                mean_fit_time: mean_of(ok.iter().map(|r| Some(r.fit_time_seconds))),
            }
        })
        .collect();
    SummaryTable { rows }
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "dgp",
    "estimator",
    "filtered",
    "n",
    "replicates",
    "failed",
    "rule_quality",
    "mean_test_outcome",
    "fdr_pct",
    "tpr_pct",
    "tnr_pct",
    "mean_fit_time_seconds",
];

fn fixed(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.digits$}"))
}

/// Display names used in the tables.
pub fn estimator_label(s: Strategy) -> &'static str {
    match s {
        Strategy::PluginLasso => "Plug-In LASSO",
        Strategy::PluginXgboost => "Plug-In XGBoost",
        Strategy::ModifiedOutcome => "Modified Outcome",
        Strategy::ModifiedCovariatesLasso => "Modified Covariates LASSO",
        Strategy::ModifiedCovariatesXgboost => "Modified Covariates XGBoost",
        Strategy::AugmentedModifiedCovariatesLasso => "Augmented Modified Covariates LASSO",
        Strategy::AugmentedModifiedCovariatesXgboost => "Augmented Modified Covariates XGBoost",
        Strategy::AipwLasso => "AIPW LASSO",
        Strategy::AipwSuperLearner => "AIPW Super Learner",
        Strategy::CausalForest => "Causal Forest",
    }
}

impl SummaryTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.dgp.to_string(),
                r.estimator.to_string(),
                r.filtered.to_string(),
                r.n.to_string(),
                r.replicates.to_string(),
                r.failed.to_string(),
                fmt_opt(r.rule_quality),
                fmt_opt(r.mean_test_outcome),
                fmt_opt(r.fdr_pct),
                fmt_opt(r.tpr_pct),
                fmt_opt(r.tnr_pct),
                fixed(r.mean_fit_time, 6),
            ])?;
        }
        w.flush().map_err(|e| BenchError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn find(&self, dgp: DgpId, estimator: Strategy, filtered: bool, n: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.dgp == dgp && r.estimator == estimator && r.filtered == filtered && r.n == n)
    }

    /// One table per DGP: an estimator block of five metric rows, with
    /// unfiltered sample sizes on the left and filtered ones on the right.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut dgps: Vec<DgpId> = Vec::new();
        for r in &self.rows {
            if !dgps.contains(&r.dgp) {
                dgps.push(r.dgp);
            }
        }
        for dgp in dgps {
            let rows: Vec<&SummaryRow> = self.rows.iter().filter(|r| r.dgp == dgp).collect();
            let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
            sizes.sort_unstable();
            sizes.dedup();
            let mut estimators: Vec<Strategy> = Vec::new();
            for r in &rows {
                if !estimators.contains(&r.estimator) {
                    estimators.push(r.estimator);
                }
            }
            let states: Vec<bool> = [false, true].into_iter().filter(|&f| rows.iter().any(|r| r.filtered == f)).collect();
            let _ = writeln!(out, "## {dgp}\n");
            let mut header = String::from("| CATE Estimator | Metric |");
            let mut rule = String::from("|---|---|");
            for &f in &states {
                for n in &sizes {
                    let tag = if f { "Filtered" } else { "Unfiltered" };
                    let _ = write!(header, " {tag} n = {n} |");
                    rule.push_str("---:|");
                }
            }
            let _ = writeln!(out, "{header}\n{rule}");
            let metrics: [(&str, fn(&SummaryRow) -> String); 5] = [
                ("Rule quality", |r| fixed(r.rule_quality, 2)),
                ("Empirical FDR (%)", |r| fixed(r.fdr_pct, 2)),
                ("Empirical TPR (%)", |r| fixed(r.tpr_pct, 2)),
                ("Empirical TNR (%)", |r| fixed(r.tnr_pct, 2)),
                ("Mean fit time (sec.)", |r| fixed(r.mean_fit_time, 2)),
            ];
            for &est in &estimators {
                for (k, (name, cell)) in metrics.iter().enumerate() {
                    let first = if k == 0 { estimator_label(est) } else { "" };
                    let mut line = format!("| {first} | {name} |");
                    for &f in &states {
                        for &n in &sizes {
                            let v = self.find(dgp, est, f, n).map_or_else(|| NA.to_string(), cell);
                            let _ = write!(line, " {v} |");
                        }
                    }
                    let _ = writeln!(out, "{line}");
                }
            }
            out.push('\n');
        }
        out
    }
}
