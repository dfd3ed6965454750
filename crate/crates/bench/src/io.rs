//! File formats: replicate results, simulated datasets, TEM-VIP reports
//! and the Monte Carlo reference cache.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use itrbench_core::cate::{Dataset, Strategy};
use itrbench_core::dgp::{DgpId, DgpSpec, PolicyValues};
use itrbench_core::temvip::TemVipEstimate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::harness::{FitStatus, ReplicateResult};
use crate::{BenchError, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";
pub const SUMMARY_MD_FILE: &str = "summary.md";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const ORACLE_CACHE_FILE: &str = "oracle_cache.json";

pub const NA: &str = "NA";

pub const RESULT_COLUMNS: [&str; 14] = [
    "dgp",
    "n",
    "replicate",
    "estimator",
    "filtered",
    "status",
    "mean_test_outcome",
    "relative_rule_quality",
    "fdp",
    "tnp",
    "tpp",
    "fit_time_seconds",
    "selected_tems",
    "diagnostics",
];

/// Shortest round-trip form, so reruns produce identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), fmt_f64)
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == NA {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| BenchError::Format(format!("not a number: `{s}`")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| BenchError::Format(format!("bad {what}: `{s}`")))
}

/// 1-based covariate names separated by spaces, `NA` when absent.
fn fmt_tems(t: &Option<Vec<usize>>) -> String {
    match t {
        None => NA.to_string(),
        Some(v) => v.iter().map(|j| format!("W{}", j + 1)).collect::<Vec<_>>().join(" "),
    }
}

fn parse_tems(s: &str) -> Result<Option<Vec<usize>>> {
    if s == NA {
        return Ok(None);
    }
    s.split_whitespace()
        .map(|t| {
            t.strip_prefix('W')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(|k| k - 1)
                .ok_or_else(|| BenchError::Format(format!("bad covariate name `{t}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn result_record(r: &ReplicateResult) -> Vec<String> {
    vec![
        r.dgp.to_string(),
        r.n.to_string(),
        r.replicate.to_string(),
        r.estimator.to_string(),
        r.filtered.to_string(),
        r.status.as_str().to_string(),
        fmt_opt(r.mean_test_outcome),
        fmt_opt(r.relative_rule_quality),
        fmt_opt(r.fdp),
        fmt_opt(r.tnp),
        fmt_opt(r.tpp),
        format!("{:.6}", r.fit_time_seconds),
        fmt_tems(&r.selected_tems),
        r.diagnostics.join("; "),
    ]
}

pub fn write_results<W: Write>(out: W, rows: &[ReplicateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(result_record(r))?;
    }
    w.flush().map_err(|e| BenchError::Format(e.to_string()))?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ReplicateResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(BenchError::Format("unexpected results header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let status = match f(5) {
            "ok" => FitStatus::Ok,
            "failed" => FitStatus::Failed,
            s => return Err(BenchError::Format(format!("bad status `{s}`"))),
        };
        let diagnostics = if f(13).is_empty() {
            Vec::new()
        } else {
            f(13).split("; ").map(String::from).collect()
        };
        out.push(ReplicateResult {
            dgp: parse::<DgpId>(f(0), "DGP id")?,
            n: parse(f(1), "n")?,
            replicate: parse(f(2), "replicate")?,
            estimator: parse::<Strategy>(f(3), "estimator")?,
            filtered: parse(f(4), "filtered flag")?,
            status,
            mean_test_outcome: parse_opt(f(6))?,
            relative_rule_quality: parse_opt(f(7))?,
            fdp: parse_opt(f(8))?,
            tnp: parse_opt(f(9))?,
            tpp: parse_opt(f(10))?,
            fit_time_seconds: parse(f(11), "fit time")?,
            selected_tems: parse_tems(f(12))?,
            diagnostics,
        });
    }
    Ok(out)
}

pub fn write_results_file(path: &Path, rows: &[ReplicateResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_results(std::io::BufWriter::new(file), rows)
}

pub fn read_results_file(path: &Path) -> Result<Vec<ReplicateResult>> {
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    read_results(std::io::BufReader::new(file))
}

/// Writes `a, y, W1..Wp`, then `Y0, Y1` when present, then `pi` when given.
pub fn write_dataset<W: Write>(out: W, data: &Dataset, pi: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["a".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("W{j}")));
    if data.potential_outcomes.is_some() {
        header.extend(["Y0".to_string(), "Y1".to_string()]);
    }
    if pi.is_some() {
        header.push("pi".to_string());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![u8::from(data.a[i]).to_string(), fmt_f64(data.y[i])];
        rec.extend(data.w.row(i).iter().map(|&v| fmt_f64(v)));
        if let Some((y0, y1)) = &data.potential_outcomes {
            rec.push(fmt_f64(y0[i]));
            rec.push(fmt_f64(y1[i]));
        }
        if let Some(pi) = pi {
            rec.push(fmt_f64(pi[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| BenchError::Format(e.to_string()))?;
    Ok(())
}

/// A dataset read back from CSV, with the `pi` column when there is one.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub pi: Option<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

/// Reads a CSV with columns `a` (0/1), `y`, optional `pi`, `Y0`, `Y1`; every
/// other column is a covariate, kept in file order.
pub fn read_dataset<R: Read>(input: R) -> Result<LoadedDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col_a = find("a").ok_or_else(|| BenchError::Format("missing column `a`".into()))?;
    let col_y = find("y").ok_or_else(|| BenchError::Format("missing column `y`".into()))?;
    let col_pi = find("pi");
    let col_po = find("Y0").zip(find("Y1"));
    let reserved = ["a", "y", "pi", "Y0", "Y1"];
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&j| !reserved.contains(&&headers[j])).collect();
    let covariate_names = cov_cols.iter().map(|&j| headers[j].to_string()).collect();
    let (mut a, mut y, mut pi, mut y0, mut y1, mut w) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| BenchError::Format(format!("row {}: column `{}` is not a number", line + 1, &headers[j])))
        };
        a.push(match num(col_a)? {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            v => return Err(BenchError::Format(format!("row {}: treatment must be 0 or 1, got {v}", line + 1))),
        });
        y.push(num(col_y)?);
        if let Some(j) = col_pi {
            pi.push(num(j)?);
        }
        if let Some((j0, j1)) = col_po {
            y0.push(num(j0)?);
            y1.push(num(j1)?);
        }
        for &j in &cov_cols {
            w.push(num(j)?);
        }
    }
    let n = a.len();
    let w = Array2::from_shape_vec((n, cov_cols.len()), w).map_err(|e| BenchError::Format(e.to_string()))?;
    let po = col_po.map(|_| (y0, y1));
    Ok(LoadedDataset {
        data: Dataset::new(w, a, y, po)?,
        pi: col_pi.map(|_| pi),
        covariate_names,
    })
}

pub const TEMVIP_COLUMNS: [&str; 9] = [
    "covariate",
    "psi_hat",
    "std_err",
    "ci_lower",
    "ci_upper",
    "p_value",
    "p_adjusted",
    "selected",
    "error",
];

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

pub fn write_temvip<W: Write>(out: W, report: &[TemVipEstimate], names: &[String]) -> Result<()> {
    let z = Z_975;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TEMVIP_COLUMNS)?;
    for e in report {
        let name = names.get(e.index).cloned().unwrap_or_else(|| format!("W{}", e.index + 1));
        w.write_record([
            name,
            fmt_f64(e.psi_hat),
            fmt_f64(e.std_err),
            fmt_f64(e.psi_hat - z * e.std_err),
            fmt_f64(e.psi_hat + z * e.std_err),
            fmt_f64(e.p_value),
            fmt_f64(e.p_adjusted),
            e.selected.to_string(),
            e.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| BenchError::Format(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub dgp: DgpId,
    pub p: usize,
    pub seed: u64,
    pub values: PolicyValues,
}

/// Monte Carlo reference values keyed by design, dimension, draws and seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleCache {
    pub entries: Vec<OracleEntry>,
}

impl OracleCache {
    pub fn lookup(&self, dgp: DgpId, p: usize, n_mc: usize, seed: u64) -> Option<PolicyValues> {
        self.entries
            .iter()
            .find(|e| e.dgp == dgp && e.p == p && e.seed == seed && e.values.n_mc == n_mc)
            .map(|e| e.values)
    }

    pub fn insert(&mut self, dgp: DgpId, p: usize, seed: u64, values: PolicyValues) {
        self.entries.retain(|e| !(e.dgp == dgp && e.p == p && e.seed == seed && e.values.n_mc == values.n_mc));
        self.entries.push(OracleEntry { dgp, p, seed, values });
    }

    /// A missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(BenchError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| BenchError::io(path, e))
    }
}

/// Known propensities of a design at the rows of `data`.
pub fn design_propensities(spec: &DgpSpec, data: &Dataset) -> Vec<f64> {
    data.w.rows().into_iter().map(|r| spec.propensity(&r.to_vec())).collect()
}
