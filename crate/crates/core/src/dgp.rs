//! The sixteen simulation designs: multivariate normal covariates with an
//! identity or block-diagonal covariance, a constant or logistic propensity,
//! and four outcome surfaces (sparse or dense, linear or arctan effects).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use ndarray::{s, Array2, ArrayView1};
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cate::Dataset;
use crate::rng::{derive_seed, label, rng_from_seed, Rng};
use crate::stats::sigmoid;
use crate::{Error, Result};

/// Number of diagonal blocks in the block covariance.
pub const N_BLOCKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    /// `π(w) = ½`, treated as unknown (observational).
    Pi1ConstantHalf,
    /// `π(w) = logit⁻¹((w₁+w₂+w₃+w₄)/5)`, treated as known (randomized).
    Pi2Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// `A + γᵀW + δ⁽¹⁰⁾ᵀW·A`
    Mu1,
    /// `A + γᵀW + δ⁽⁵⁰⁾ᵀW·A`
    Mu2,
    /// `γᵀW + 2·atan(δ⁽¹⁰⁾ᵀW·A)`
    Mu3,
    /// `γᵀW + 2·atan(δ⁽⁵⁰⁾ᵀW·A)`
    Mu4,
}

impl OutcomeKind {
    pub fn is_sparse(self) -> bool {
        matches!(self, Self::Mu1 | Self::Mu3)
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Self::Mu1 | Self::Mu2)
    }
}

pub fn propensity(kind: PropensityKind, w: &[f64]) -> f64 {
    match kind {
        PropensityKind::Pi1ConstantHalf => 0.5,
        PropensityKind::Pi2Logistic => sigmoid(w.iter().take(4).sum::<f64>() / 5.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub p: usize,
    pub covariance_kind: CovarianceKind,
    pub propensity_kind: PropensityKind,
    pub outcome_kind: OutcomeKind,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub noise_sd: f64,
    pub block_seed: u64,
}

impl DgpSpec {
    /// Standard coefficients, truncated when `p` is smaller than their support.
    pub fn new(covariance: CovarianceKind, propensity: PropensityKind, outcome: OutcomeKind, p: usize) -> Self {
        let mut gamma = vec![0.0; p];
        gamma.iter_mut().take(5).for_each(|g| *g = 2.0);
        let (k, v) = if outcome.is_sparse() { (10, 2.0) } else { (50, 0.5) };
        let mut delta = vec![0.0; p];
        delta.iter_mut().take(k).for_each(|d| *d = v);
        Self {
            p,
            covariance_kind: covariance,
            propensity_kind: propensity,
            outcome_kind: outcome,
            gamma,
            delta,
            noise_sd: 1.0,
            block_seed: 0,
        }
    }

    pub fn id(&self) -> DgpId {
        DgpId {
            propensity: self.propensity_kind,
            outcome: self.outcome_kind,
            covariance: self.covariance_kind,
        }
    }

    /// The randomized designs have a known propensity.
    pub fn is_rct(&self) -> bool {
        self.propensity_kind == PropensityKind::Pi2Logistic
    }

    pub fn true_tems(&self) -> Vec<usize> {
        support(&self.delta)
    }

    /// Number of leading coordinates that enter the outcome or propensity.
    pub fn relevant_dim(&self) -> usize {
        let last = |v: &[f64]| v.iter().rposition(|&x| x != 0.0).map_or(0, |j| j + 1);
        let prop = if self.is_rct() { 4 } else { 0 };
        last(&self.gamma).max(last(&self.delta)).max(prop).min(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.p || self.delta.len() != self.p {
            return Err(Error::Config(format!("coefficient vectors must have length p = {}", self.p)));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be positive".into()));
        }
        if self.covariance_kind == CovarianceKind::Block && self.p % N_BLOCKS != 0 {
            return Err(Error::Config(format!("block covariance needs p divisible by {N_BLOCKS}, got {}", self.p)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise sd must be nonnegative".into()));
        }
        Ok(())
    }

    fn linear_terms(&self, w: &[f64]) -> (f64, f64) {
        let dot = |c: &[f64]| c.iter().zip(w).filter(|(c, _)| **c != 0.0).map(|(c, x)| c * x).sum::<f64>();
        (dot(&self.gamma), dot(&self.delta))
    }

    /// Conditional mean outcome `μ(w, a)`.
    pub fn mean_outcome(&self, w: &[f64], a: bool) -> f64 {
        let (g, d) = self.linear_terms(w);
        let a = a as u8 as f64;
        if self.outcome_kind.is_linear() {
            a + g + d * a
        } else {
            g + 2.0 * libm::atan(d * a)
        }
    }

    pub fn true_cate(&self, w: &[f64]) -> f64 {
        let (_, d) = self.linear_terms(w);
        if self.outcome_kind.is_linear() {
            1.0 + d
        } else {
            2.0 * libm::atan(d)
        }
    }

    pub fn propensity(&self, w: &[f64]) -> f64 {
        propensity(self.propensity_kind, w)
    }
}

pub fn true_cate(spec: &DgpSpec, w: &[f64]) -> f64 {
    spec.true_cate(w)
}

pub fn support(v: &[f64]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(j, _)| j).collect()
}

/// Canonical name of a design: `{rct|obs}-{sparse|nonsparse}-{linear|nonlinear}-{identity|block}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DgpId {
    pub propensity: PropensityKind,
    pub outcome: OutcomeKind,
    pub covariance: CovarianceKind,
}

impl DgpId {
    pub fn spec(self, p: usize) -> DgpSpec {
        DgpSpec::new(self.covariance, self.propensity, self.outcome, p)
    }

    /// All sixteen designs in appendix-table order.
    pub fn all() -> Vec<DgpId> {
        let mut out = Vec::with_capacity(16);
        for outcome in [OutcomeKind::Mu1, OutcomeKind::Mu3, OutcomeKind::Mu2, OutcomeKind::Mu4] {
            for covariance in [CovarianceKind::Identity, CovarianceKind::Block] {
                for propensity in [PropensityKind::Pi2Logistic, PropensityKind::Pi1ConstantHalf] {
                    out.push(DgpId {
                        propensity,
                        outcome,
                        covariance,
                    });
                }
            }
        }
        out
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let design = match self.propensity {
            PropensityKind::Pi2Logistic => "rct",
            PropensityKind::Pi1ConstantHalf => "obs",
        };
        let sparsity = if self.outcome.is_sparse() { "sparse" } else { "nonsparse" };
        let shape = if self.outcome.is_linear() { "linear" } else { "nonlinear" };
        let cov = match self.covariance {
            CovarianceKind::Identity => "identity",
            CovarianceKind::Block => "block",
        };
        write!(f, "{design}-{sparsity}-{shape}-{cov}")
    }
}

impl FromStr for DgpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown DGP id `{s}`"));
        let parts: Vec<&str> = s.trim().split('-').collect();
        let [design, sparsity, shape, cov] = parts[..] else {
            return Err(bad());
        };
        let propensity = match design {
            "rct" => PropensityKind::Pi2Logistic,
            "obs" => PropensityKind::Pi1ConstantHalf,
            _ => return Err(bad()),
        };
        let outcome = match (sparsity, shape) {
            ("sparse", "linear") => OutcomeKind::Mu1,
            ("nonsparse", "linear") => OutcomeKind::Mu2,
            ("sparse", "nonlinear") => OutcomeKind::Mu3,
            ("nonsparse", "nonlinear") => OutcomeKind::Mu4,
            _ => return Err(bad()),
        };
        let covariance = match cov {
            "identity" => CovarianceKind::Identity,
            "block" => CovarianceKind::Block,
            _ => return Err(bad()),
        };
        Ok(DgpId {
            propensity,
            outcome,
            covariance,
        })
    }
}

impl Serialize for DgpId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DgpId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub kind: CovarianceKind,
    pub p: usize,
    /// Correlation blocks along the diagonal; empty for the identity.
    pub blocks: Vec<Array2<f64>>,
    /// Lower Cholesky factor of each block.
    pub cholesky: Vec<Array2<f64>>,
}

/// Lower-triangular `L` with `L Lᵀ = m`; `None` unless `m` is positive definite.
pub fn cholesky(m: &Array2<f64>) -> Option<Array2<f64>> {
    let k = m.nrows();
    let mut l = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|t| l[[i, t]] * l[[j, t]]).sum();
            if i == j {
                let d = m[[i, i]] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[[i, i]] = libm::sqrt(d);
            } else {
                l[[i, j]] = (m[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn random_correlation_block(size: usize, rng: &mut Rng) -> Array2<f64> {
    let g = Array2::from_shape_fn((size, size), |_| rng.sample::<f64, _>(StandardNormal));
    let mut m = g.t().dot(&g) / size as f64;
    for i in 0..size {
        m[[i, i]] += 0.1;
    }
    let d: Vec<f64> = (0..size).map(|i| 1.0 / libm::sqrt(m[[i, i]])).collect();
    Array2::from_shape_fn((size, size), |(i, j)| match i.cmp(&j) {
        core::cmp::Ordering::Equal => 1.0,
        core::cmp::Ordering::Less => m[[i, j]] * d[i] * d[j],
        core::cmp::Ordering::Greater => m[[j, i]] * d[j] * d[i],
    })
}

/// Identity, or `N_BLOCKS` random correlation blocks of size `p / N_BLOCKS`,
/// each `D^{-1/2}(GᵀG/k + 0.1 I)D^{-1/2}` for a standard normal `k × k` matrix `G`.
pub fn make_covariance(kind: CovarianceKind, p: usize, seed: u64) -> Result<CovarianceModel> {
    if p == 0 {
        return Err(Error::Config("p must be positive".into()));
    }
    match kind {
        CovarianceKind::Identity => Ok(CovarianceModel {
            kind,
            p,
            blocks: Vec::new(),
            cholesky: Vec::new(),
        }),
        CovarianceKind::Block => {
            if p % N_BLOCKS != 0 {
                return Err(Error::Config(format!("block covariance needs p divisible by {N_BLOCKS}, got {p}")));
            }
            let size = p / N_BLOCKS;
            let mut rng = rng_from_seed(derive_seed(seed, &[label("block-covariance")]));
            let blocks: Vec<Array2<f64>> = (0..N_BLOCKS).map(|_| random_correlation_block(size, &mut rng)).collect();
            let cholesky = blocks
                .iter()
                .map(|b| cholesky(b).ok_or_else(|| Error::InvalidInput("covariance block is not positive definite".into())))
                .collect::<Result<_>>()?;
            Ok(CovarianceModel {
                kind,
                p,
                blocks,
                cholesky,
            })
        }
    }
}

impl CovarianceModel {
    pub fn block_size(&self) -> usize {
        self.blocks.first().map_or(1, |b| b.nrows())
    }

    /// The dense `p × p` matrix.
    pub fn matrix(&self) -> Array2<f64> {
        match self.kind {
            CovarianceKind::Identity => Array2::eye(self.p),
            CovarianceKind::Block => {
                let k = self.block_size();
                let mut m = Array2::zeros((self.p, self.p));
                for (b, block) in self.blocks.iter().enumerate() {
                    m.slice_mut(s![b * k..(b + 1) * k, b * k..(b + 1) * k]).assign(block);
                }
                m
            }
        }
    }

    /// Leading dimension to sample so that the first `dim` coordinates are
    /// drawn jointly with everything they correlate with.
    fn covering_dim(&self, dim: usize) -> usize {
        let k = self.block_size();
        (dim.div_ceil(k) * k).min(self.p)
    }

    /// Overwrites `out` (length `dim`, a multiple of the block size or `p`)
    /// with a draw of the leading `dim` coordinates.
    fn fill_row(&self, out: &mut [f64], z: &mut Vec<f64>, rng: &mut Rng) {
        z.clear();
        z.extend((0..out.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        match self.kind {
            CovarianceKind::Identity => out.copy_from_slice(z),
            CovarianceKind::Block => {
                let k = self.block_size();
                for (b, l) in self.cholesky.iter().enumerate().take(out.len() / k) {
                    for i in 0..k {
                        out[b * k + i] = (0..=i).map(|t| l[[i, t]] * z[b * k + t]).sum();
                    }
                }
            }
        }
    }
}

/// Draws a dataset. Rows are generated one at a time from a single seeded
/// stream: `p` normals for the covariates, one uniform for the treatment and
/// two normals for the outcome noise under control and treatment.
pub fn sample_dataset(spec: &DgpSpec, cov: &CovarianceModel, n: usize, seed: u64, with_potential_outcomes: bool) -> Result<Dataset> {
    spec.validate()?;
    if cov.p != spec.p || cov.kind != spec.covariance_kind {
        return Err(Error::Config("covariance model does not match the design".into()));
    }
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = Array2::zeros((n, spec.p));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut row = vec![0.0; spec.p];
    let mut z = Vec::with_capacity(spec.p);
    for i in 0..n {
        cov.fill_row(&mut row, &mut z, &mut rng);
        let u: f64 = rng.random();
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let ai = u < spec.propensity(&row);
        let p0 = spec.mean_outcome(&row, false) + spec.noise_sd * e0;
        let p1 = spec.mean_outcome(&row, true) + spec.noise_sd * e1;
        w.row_mut(i).assign(&ArrayView1::from(&row[..]));
        a.push(ai);
        y.push(if ai { p1 } else { p0 });
        y0.push(p0);
        y1.push(p1);
    }
    let potential_outcomes = with_potential_outcomes.then_some((y0, y1));
    Dataset::new(w, a, y, potential_outcomes)
}

/// Monte Carlo values of the optimal, always-treat and never-treat rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValues {
    pub optimal: f64,
    pub optimal_se: f64,
    pub always_treat: f64,
    pub always_treat_se: f64,
    pub never_treat: f64,
    pub never_treat_se: f64,
    pub n_mc: usize,
}

/// Values of the reference rules from `n_mc` covariate draws. The outcome
/// noise has mean zero and is left out; only the leading coordinates that
/// the outcome depends on (and their blocks) are sampled.
pub fn monte_carlo_policy_values(spec: &DgpSpec, cov: &CovarianceModel, n_mc: usize, seed: u64) -> Result<PolicyValues> {
    spec.validate()?;
    if n_mc < 1000 {
        return Err(Error::Config(format!("at least 1000 Monte Carlo draws are needed, got {n_mc}")));
    }
    let dim = cov.covering_dim(spec.relevant_dim().max(1));
    let mut rng = rng_from_seed(seed);
    let mut row = vec![0.0; dim];
    let mut z = Vec::with_capacity(dim);
    let trimmed = DgpSpec {
        p: dim,
        gamma: spec.gamma[..dim].to_vec(),
        delta: spec.delta[..dim].to_vec(),
        ..spec.clone()
    };
    let mut acc = [(0.0f64, 0.0f64); 3];
    for _ in 0..n_mc {
        cov.fill_row(&mut row, &mut z, &mut rng);
        let m0 = trimmed.mean_outcome(&row, false);
        let m1 = trimmed.mean_outcome(&row, true);
        let opt = if trimmed.true_cate(&row) > 0.0 { m1 } else { m0 };
        for (slot, v) in acc.iter_mut().zip([opt, m1, m0]) {
            slot.0 += v;
            slot.1 += v * v;
        }
    }
    let nf = n_mc as f64;
    let summarize = |(s, ss): (f64, f64)| {
        let m = s / nf;
        let var = ((ss - nf * m * m) / (nf - 1.0)).max(0.0);
        (m, libm::sqrt(var / nf))
    };
    let (optimal, optimal_se) = summarize(acc[0]);
    let (always_treat, always_treat_se) = summarize(acc[1]);
    let (never_treat, never_treat_se) = summarize(acc[2]);
    Ok(PolicyValues {
        optimal,
        optimal_se,
        always_treat,
        always_treat_se,
        never_treat,
        never_treat_se,
        n_mc,
    })
}

pub fn monte_carlo_optimal_value(spec: &DgpSpec, cov: &CovarianceModel, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    monte_carlo_policy_values(spec, cov, n_mc, seed).map(|v| (v.optimal, v.optimal_se))
}
