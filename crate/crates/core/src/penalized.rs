//! Elastic-net penalized linear and logistic regression.
//!
//! The solver minimizes
//!
//! ```text
//! (1 / n) Σ wᵢ ℓ(yᵢ, b₀ + xᵢᵀβ) + λ (α‖β‖₁ + (1 − α)/2 ‖β‖²)
//! ```
//!
//! by cyclic coordinate descent on internally standardized columns, where
//! `ℓ` is half the squared error (gaussian) or the negative log-likelihood
//! (binomial, solved by penalized IRLS). Weights are rescaled to sum to `n`.
//! Coefficients are always reported on the original covariate scale and the
//! intercept is never penalized.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::stats::{kfold_assignment, sigmoid, split_fold};
use crate::{Error, Result};

/// Max-coordinate-change tolerance on the standardized scale.
pub const TOLERANCE: f64 = 1e-7;
/// Cap on coordinate-descent sweeps per penalty level.
pub const MAX_SWEEPS: usize = 10_000;
/// Probability clamp used by the binomial working weights and CV loss.
pub const PROB_CLAMP: f64 = 1e-5;
const MAX_IRLS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl Family {
    /// Smallest penalty on the default path, relative to `lambda_max`.
    pub fn min_lambda_ratio(self) -> f64 {
        match self {
            Family::Gaussian => 1e-3,
            Family::Binomial => 1e-2,
        }
    }
}

/// `sign(z) · max(|z| − gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct RegressionProblem<'a> {
    pub design: ArrayView2<'a, f64>,
    pub response: ArrayView1<'a, f64>,
    pub family: Family,
    pub weights: Option<ArrayView1<'a, f64>>,
    /// α in `[0, 1]`; 1 is the lasso, 0 is ridge.
    pub penalty_mix: f64,
    pub fit_intercept: bool,
    pub standardize: bool,
}

impl<'a> RegressionProblem<'a> {
    pub fn new(design: ArrayView2<'a, f64>, response: ArrayView1<'a, f64>, family: Family) -> Self {
        Self {
            design,
            response,
            family,
            weights: None,
            penalty_mix: 1.0,
            fit_intercept: true,
            standardize: true,
        }
    }

    pub fn with_weights(mut self, weights: ArrayView1<'a, f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_penalty_mix(mut self, alpha: f64) -> Self {
        self.penalty_mix = alpha;
        self
    }

    pub fn with_intercept(mut self, fit_intercept: bool) -> Self {
        self.fit_intercept = fit_intercept;
        self
    }

    pub fn with_standardize(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.design.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.design.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!("need at least 2 observations, got {n}")));
        }
        if self.response.len() != n {
            return Err(Error::Dimension {
                what: "response",
                expected: n,
                found: self.response.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.penalty_mix) {
            return Err(Error::Config(format!("penalty mix {} outside [0, 1]", self.penalty_mix)));
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        if self.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if self.family == Family::Binomial && self.response.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("binomial response must be 0/1".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(Error::Dimension {
                    what: "weights",
                    expected: n,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
            }
            if w.sum() <= 0.0 {
                return Err(Error::InvalidInput("weights sum to zero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedLinearModel {
    pub intercept: f64,
    /// Coefficients on the original covariate scale.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub family: Family,
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
}

impl FittedLinearModel {
    /// An intercept-only model, used when no covariate columns remain.
    pub fn constant(intercept: f64, family: Family) -> Self {
        Self {
            intercept,
            coefficients: Vec::new(),
            lambda: 0.0,
            family,
            column_means: Vec::new(),
            column_scales: Vec::new(),
        }
    }

    pub fn nonzero(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn linear_predictor_row(&self, row: ArrayView1<f64>) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row.iter())
                .filter(|(c, _)| **c != 0.0)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        predict_linear(self, x)
    }
}

/// Gaussian: `Xβ + b₀`; binomial: the logistic transform of it.
pub fn predict_linear(model: &FittedLinearModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::Dimension {
            what: "prediction design",
            expected: model.coefficients.len(),
            found: x.ncols(),
        });
    }
    let active: Vec<(usize, f64)> = model
        .coefficients
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| (j, *c))
        .collect();
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            let eta = model.intercept + active.iter().map(|&(j, c)| c * row[j]).sum::<f64>();
            match model.family {
                Family::Gaussian => eta,
                Family::Binomial => sigmoid(eta),
            }
        })
        .collect())
}

/// Standardized, column-major copy of (a row subset of) a problem.
struct Prepared {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    unit_weights: bool,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    family: Family,
    alpha: f64,
    intercept: bool,
}

impl Prepared {
    fn new(problem: &RegressionProblem, rows: Option<&[usize]>) -> Self {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..problem.n_obs()).collect();
                &all
            }
        };
        let n = rows.len();
        let d = problem.n_features();
        let mut w: Vec<f64> = match &problem.weights {
            Some(wv) => rows.iter().map(|&i| wv[i]).collect(),
            None => vec![1.0; n],
        };
        let wsum: f64 = w.iter().sum();
        let unit_weights = w.iter().all(|&v| v == w[0]);
        for v in w.iter_mut() {
            *v *= n as f64 / wsum;
        }
        let nf = n as f64;
        let mut x = vec![0.0; n * d];
        let mut means = vec![0.0; d];
        let mut scales = vec![1.0; d];
        for j in 0..d {
            let col = &mut x[j * n..(j + 1) * n];
            for (k, &i) in rows.iter().enumerate() {
                col[k] = problem.design[[i, j]];
            }
            let m = if problem.fit_intercept {
                col.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>() / nf
            } else {
                0.0
            };
            let ss = col.iter().zip(&w).map(|(v, wi)| wi * (v - m) * (v - m)).sum::<f64>() / nf;
            let s = libm::sqrt(ss);
            let scale = if problem.standardize {
                if s > 1e-12 * (1.0 + m.abs()) {
                    s
                } else {
                    0.0
                }
            } else if s > 0.0 {
                1.0
            } else {
                0.0
            };
            means[j] = m;
            scales[j] = scale;
            if scale == 0.0 {
                col.iter_mut().for_each(|v| *v = 0.0);
            } else {
                col.iter_mut().for_each(|v| *v = (*v - m) / scale);
            }
        }
        let raw_y: Vec<f64> = rows.iter().map(|&i| problem.response[i]).collect();
        let y_mean = raw_y.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>() / nf;
        let y = match problem.family {
            Family::Gaussian if problem.fit_intercept => raw_y.iter().map(|v| v - y_mean).collect(),
            _ => raw_y,
        };
        Self {
            n,
            d,
            x,
            y,
            w,
            unit_weights,
            means,
            scales,
            y_mean,
            family: problem.family,
            alpha: problem.penalty_mix,
            intercept: problem.fit_intercept,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    fn lambda_max(&self) -> f64 {
        let nf = self.n as f64;
        let centered: Vec<f64> = match self.family {
            Family::Gaussian => self.y.clone(),
            Family::Binomial => {
                let p0 = if self.intercept { self.y_mean } else { 0.5 };
                self.y.iter().map(|v| v - p0).collect()
            }
        };
        let mut best = 0.0f64;
        for j in 0..self.d {
            let g = self
                .col(j)
                .iter()
                .zip(&centered)
                .zip(&self.w)
                .map(|((x, r), w)| w * x * r)
                .sum::<f64>()
                / nf;
            best = best.max(g.abs());
        }
        best / self.alpha.max(1e-3)
    }

    fn to_model(&self, beta: &[f64], b0: f64, lambda: f64) -> FittedLinearModel {
        let coefficients: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s == 0.0 { 0.0 } else { b / s })
            .collect();
        let shift: f64 = coefficients.iter().zip(&self.means).map(|(c, m)| c * m).sum();
        let intercept = match self.family {
            Family::Gaussian if self.intercept => self.y_mean - shift,
            Family::Gaussian => 0.0,
            Family::Binomial if self.intercept => b0 - shift,
            Family::Binomial => 0.0,
        };
        FittedLinearModel {
            intercept,
            coefficients,
            lambda,
            family: self.family,
            column_means: self.means.clone(),
            column_scales: self.scales.clone(),
        }
    }

    /// `b0 + Xβ` on the standardized scale.
    fn linear_predictor(&self, beta: &[f64], b0: f64, eta: &mut [f64]) {
        eta.iter_mut().for_each(|e| *e = b0);
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.col(j), eta);
            }
        }
    }

    /// Weighted deviance of a fit; for the gaussian family `b0` is ignored
    /// because the response is already centred when there is an intercept.
    fn deviance(&self, beta: &[f64], b0: f64) -> f64 {
        let mut eta = vec![0.0; self.n];
        match self.family {
            Family::Gaussian => {
                self.linear_predictor(beta, 0.0, &mut eta);
                self.y.iter().zip(&eta).zip(&self.w).map(|((y, e), w)| w * (y - e) * (y - e)).sum()
            }
            Family::Binomial => {
                self.linear_predictor(beta, b0, &mut eta);
                eta.iter().zip(&self.y).zip(&self.w).map(|((e, y), w)| w * binomial_deviance(*y, sigmoid(*e))).sum()
            }
        }
    }

    fn null_deviance(&self) -> f64 {
        match self.family {
            Family::Gaussian => self.y.iter().zip(&self.w).map(|(y, w)| w * y * y).sum(),
            Family::Binomial => {
                let p = if self.intercept { self.y_mean } else { 0.5 };
                self.y.iter().zip(&self.w).map(|(y, w)| w * binomial_deviance(*y, p)).sum()
            }
        }
    }

    fn penalty(&self, beta: &[f64], lambda: f64) -> f64 {
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2: f64 = beta.iter().map(|b| b * b).sum();
        lambda * (self.alpha * l1 + 0.5 * (1.0 - self.alpha) * l2)
    }
}

/// Coordinate descent on a weighted quadratic `(1/2n) Σ ωᵢ rᵢ² + penalty`.
struct Quadratic<'p> {
    prep: &'p Prepared,
    /// ω∘x, column-major; `None` when ω is constant 1.
    xw: Option<Vec<f64>>,
    omega: Option<&'p [f64]>,
    omega_sum: f64,
    curvature: Vec<f64>,
    l1: f64,
    l2: f64,
    fit_intercept: bool,
    /// Stands in for the intercept as column `d` in the exact solves.
    ones: Vec<f64>,
}

struct SweepState<'s> {
    beta: &'s mut [f64],
    b0: &'s mut f64,
    r: &'s mut [f64],
}

impl<'p> Quadratic<'p> {
    fn new(prep: &'p Prepared, omega: Option<&'p [f64]>, lambda: f64, fit_intercept: bool) -> Self {
        let n = prep.n;
        let nf = n as f64;
        let (xw, curvature, omega_sum) = match omega {
            None => {
                let curv = (0..prep.d)
                    .map(|j| prep.col(j).iter().map(|v| v * v).sum::<f64>() / nf)
                    .collect();
                (None, curv, nf)
            }
            Some(om) => {
                let mut xw = vec![0.0; n * prep.d];
                let mut curv = vec![0.0; prep.d];
                for j in 0..prep.d {
                    let src = prep.col(j);
                    let dst = &mut xw[j * n..(j + 1) * n];
                    let mut c = 0.0;
                    for i in 0..n {
                        dst[i] = om[i] * src[i];
                        c += dst[i] * src[i];
                    }
                    curv[j] = c / nf;
                }
                (Some(xw), curv, om.iter().sum())
            }
        };
        Self {
            prep,
            xw,
            omega,
            omega_sum,
            curvature,
            l1: lambda * prep.alpha,
            l2: lambda * (1.0 - prep.alpha),
            fit_intercept,
            ones: if fit_intercept { vec![1.0; n] } else { Vec::new() },
        }
    }

    #[inline]
    fn update(&self, j: usize, st: &mut SweepState) -> f64 {
        let v = self.curvature[j];
        let denom = v + self.l2;
        if v == 0.0 || denom <= 0.0 {
            return 0.0;
        }
        let n = self.prep.n;
        let x = self.prep.col(j);
        let g = match &self.xw {
            Some(xw) => dot(&xw[j * n..(j + 1) * n], st.r),
            None => dot(x, st.r),
        } / n as f64;
        let old = st.beta[j];
        let new = soft_threshold(g + v * old, self.l1) / denom;
        if new != old {
            let delta = new - old;
            axpy(-delta, x, st.r);
            st.beta[j] = new;
            delta.abs()
        } else {
            0.0
        }
    }

    fn update_intercept(&self, st: &mut SweepState) -> f64 {
        if !self.fit_intercept {
            return 0.0;
        }
        let s = match self.omega {
            Some(om) => dot(om, st.r),
            None => st.r.iter().sum(),
        };
        let delta = s / self.omega_sum;
        if delta != 0.0 {
            st.r.iter_mut().for_each(|v| *v -= delta);
            *st.b0 += delta;
        }
        delta.abs()
    }

    fn objective(&self, st: &SweepState, lambda: f64) -> f64 {
        let loss = match self.omega {
            Some(om) => st.r.iter().zip(om).map(|(r, w)| w * r * r).sum::<f64>(),
            None => st.r.iter().map(|r| r * r).sum::<f64>(),
        };
        0.5 * loss / self.prep.n as f64 + self.prep.penalty(st.beta, lambda)
    }

    /// Full sweeps alternate with sweeps over the current nonzero set until a
    /// full sweep moves no coordinate by more than `TOLERANCE`.
    fn solve(
        &self,
        st: &mut SweepState,
        budget: &mut usize,
        mut trace: Option<(&mut Vec<f64>, f64)>,
        mut gram: Option<&mut GramCache>,
    ) -> core::result::Result<(), f64> {
        let d = self.prep.d;
        let mut active: Vec<usize> = Vec::with_capacity(d);
        loop {
            if *budget == 0 {
                return Err(f64::INFINITY);
            }
            *budget -= 1;
            let mut max_change = self.update_intercept(st);
            for j in 0..d {
                max_change = max_change.max(self.update(j, st));
            }
            if let Some((t, lambda)) = trace.as_mut() {
                t.push(self.objective(st, *lambda));
            }
            if max_change < TOLERANCE {
                return Ok(());
            }
            active.clear();
            active.extend((0..d).filter(|&j| st.beta[j] != 0.0));
            let mut since_newton = 0;
            loop {
                if *budget == 0 {
                    return Err(max_change);
                }
                *budget -= 1;
                let mut inner = self.update_intercept(st);
                for &j in &active {
                    inner = inner.max(self.update(j, st));
                }
                if let Some((t, lambda)) = trace.as_mut() {
                    t.push(self.objective(st, *lambda));
                }
                if inner < TOLERANCE {
                    break;
                }
                since_newton += 1;
                if let Some(cache) = gram.as_deref_mut().filter(|_| since_newton == NEWTON_AFTER && (self.l1 > 0.0 || self.l2 == 0.0)) {
                    since_newton = 0;
                    self.newton_step(&active, st, cache);
                    if let Some((t, lambda)) = trace.as_mut() {
                        t.push(self.objective(st, *lambda));
                    }
                }
            }
        }
    }
}

/// Slow coordinate descent on a stable active set switches to an exact
/// solve of the sign-fixed problem after this many unconverged sweeps.
const NEWTON_AFTER: usize = 2;

/// Inner products `n⁻¹ x_aᵀ Ω x_b` between columns that have been active,
/// kept across the penalty path of a fixed-weight problem, together with a
/// Cholesky factor of `G + l2·I` on the current active set. The factor is
/// updated column by column as the active set changes.
#[derive(Default)]
struct GramCache {
    slot: BTreeMap<usize, usize>,
    columns: Vec<usize>,
    /// Row `s` holds products of slot `s` with slots `0..=s`.
    rows: Vec<Vec<f64>>,
    /// Slots in factor order, and the lower-triangular factor by rows.
    factor_slots: Vec<usize>,
    factor: Vec<Vec<f64>>,
    factor_l2: f64,
    /// The unpenalized intercept column, if cached.
    intercept_slot: Option<usize>,
}

impl GramCache {
    fn ensure(&mut self, quad: &Quadratic, j: usize) -> usize {
        if let Some(&s) = self.slot.get(&j) {
            return s;
        }
        let nf = quad.prep.n as f64;
        let wj = quad.weighted_col(j);
        let mut row: Vec<f64> = self.columns.iter().map(|&c| dot(wj, quad.raw_col(c)) / nf).collect();
        row.push(dot(wj, quad.raw_col(j)) / nf);
        if j == quad.prep.d {
            self.intercept_slot = Some(self.columns.len());
        }
        let s = self.columns.len();
        self.slot.insert(j, s);
        self.columns.push(j);
        self.rows.push(row);
        s
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        if a >= b {
            self.rows[a][b]
        } else {
            self.rows[b][a]
        }
    }

    /// Makes the factor cover exactly `slots`. Returns false when some slot
    /// would make the factor numerically singular; it is then left out.
    fn sync_factor(&mut self, slots: &[usize], l2: f64) -> bool {
        if l2 != self.factor_l2 {
            self.factor_slots.clear();
            self.factor.clear();
            self.factor_l2 = l2;
        }
        let wanted: BTreeMap<usize, ()> = slots.iter().map(|&s| (s, ())).collect();
        for pos in (0..self.factor_slots.len()).rev() {
            if !wanted.contains_key(&self.factor_slots[pos]) {
                self.delete_factor_row(pos);
            }
        }
        let present: BTreeMap<usize, ()> = self.factor_slots.iter().map(|&s| (s, ())).collect();
        let mut complete = true;
        for &s in slots {
            if !present.contains_key(&s) {
                complete &= self.append_factor_row(s);
            }
        }
        complete
    }

    fn append_factor_row(&mut self, s: usize) -> bool {
        let k = self.factor_slots.len();
        let mut row: Vec<f64> = self.factor_slots.iter().map(|&t| self.get(s, t)).collect();
        for i in 0..k {
            let v = (row[i] - dot(&self.factor[i][..i], &row[..i])) / self.factor[i][i];
            row[i] = v;
        }
        let ridge = if self.intercept_slot == Some(s) { 0.0 } else { self.factor_l2 };
        let h = self.get(s, s) + ridge;
        let d = h - dot(&row, &row);
        if !(d > FACTOR_PIVOT_MIN * h) {
            return false;
        }
        row.push(libm::sqrt(d));
        self.factor.push(row);
        self.factor_slots.push(s);
        true
    }

    /// Drops one row and column, then restores the trailing block with a
    /// rank-one update by the removed column.
    fn delete_factor_row(&mut self, pos: usize) {
        self.factor.remove(pos);
        self.factor_slots.remove(pos);
        let k = self.factor.len();
        let mut x: Vec<f64> = (pos..k).map(|i| self.factor[i].remove(pos)).collect();
        for (a, i) in (pos..k).enumerate() {
            let lii = self.factor[i][i];
            let r = libm::sqrt(lii * lii + x[a] * x[a]);
            let c = r / lii;
            let sn = x[a] / lii;
            self.factor[i][i] = r;
            for (b, m) in (i + 1..k).enumerate() {
                let xb = &mut x[a + 1 + b];
                let l = (self.factor[m][i] + sn * *xb) / c;
                *xb = c * *xb - sn * l;
                self.factor[m][i] = l;
            }
        }
    }

    /// Solves `L Lᵀ z = b` in factor order.
    fn factor_solve(&self, b: &mut [f64]) {
        let k = self.factor.len();
        for i in 0..k {
            b[i] = (b[i] - dot(&self.factor[i][..i], &b[..i])) / self.factor[i][i];
        }
        for i in (0..k).rev() {
            let mut v = b[i];
            for m in i + 1..k {
                v -= self.factor[m][i] * b[m];
            }
            b[i] = v / self.factor[i][i];
        }
    }
}

/// Relative size below which a new pivot marks the active Gram as singular.
const FACTOR_PIVOT_MIN: f64 = 1e-10;

impl Quadratic<'_> {
    fn raw_col(&self, j: usize) -> &[f64] {
        if j == self.prep.d {
            &self.ones
        } else {
            self.prep.col(j)
        }
    }

    fn weighted_col(&self, j: usize) -> &[f64] {
        let n = self.prep.n;
        match (&self.xw, self.omega) {
            (_, Some(om)) if j == self.prep.d => om,
            (Some(xw), _) if j < self.prep.d => &xw[j * n..(j + 1) * n],
            _ => self.raw_col(j),
        }
    }

    /// Moves the active coefficients toward the minimizer of the objective
    /// with their signs held fixed. The objective never increases; nothing
    /// happens when the restricted Hessian is numerically singular. Returns
    /// whether the unclipped step was taken.
    fn newton_step(&self, active: &[usize], st: &mut SweepState, gram: &mut GramCache) -> bool {
        let nf = self.prep.n as f64;
        let d = self.prep.d;
        let mut wanted: Vec<usize> = active.iter().copied().filter(|&j| st.beta[j] != 0.0 && self.curvature[j] > 0.0).collect();
        if self.fit_intercept {
            wanted.push(d);
        }
        if wanted.is_empty() {
            return false;
        }
        let slots: Vec<usize> = wanted.iter().map(|&j| gram.ensure(self, j)).collect();
        if !gram.sync_factor(&slots, self.l2) {
            return false;
        }
        let cols: Vec<usize> = gram.factor_slots.iter().map(|&s| gram.columns[s]).collect();
        let coef = |st: &SweepState, j: usize| if j == d { *st.b0 } else { st.beta[j] };
        let penalty = |j: usize, b: f64| if j == d { 0.0 } else { self.l1 * b.abs() + 0.5 * self.l2 * b * b };
        // Gradient of the smooth part plus the fixed-sign penalty.
        let mut step: Vec<f64> = cols
            .iter()
            .map(|&j| {
                let g = -dot(self.weighted_col(j), st.r) / nf;
                if j == d {
                    g
                } else {
                    let b = st.beta[j];
                    g + self.l1 * b.signum() + self.l2 * b
                }
            })
            .collect();
        gram.factor_solve(&mut step);
        if !step.iter().all(|v| v.is_finite()) {
            return false;
        }
        // step now holds H⁻¹∇; the move is its negative. The full step with
        // sign changes clipped to zero is tried first and kept if it lowers
        // the objective; otherwise the step stops at the first zero crossing.
        // Without an l1 term nothing is clipped.
        let loss = |r: &[f64]| -> f64 {
            match self.omega {
                Some(om) => r.iter().zip(om).map(|(r, w)| w * r * r).sum::<f64>(),
                None => r.iter().map(|r| r * r).sum::<f64>(),
            }
        };
        let clipped: Vec<f64> = cols
            .iter()
            .zip(&step)
            .map(|(&j, s)| {
                let b = coef(st, j);
                let nb = b - s;
                if j == d || self.l1 == 0.0 || nb.signum() == b.signum() {
                    nb
                } else {
                    0.0
                }
            })
            .collect();
        let mut trial = st.r.to_vec();
        let mut pen_change = 0.0;
        for (&j, &nb) in cols.iter().zip(&clipped) {
            let b = coef(st, j);
            axpy(b - nb, self.raw_col(j), &mut trial);
            pen_change += penalty(j, nb) - penalty(j, b);
        }
        let apply = |st: &mut SweepState, j: usize, v: f64| {
            if j == d {
                *st.b0 = v;
            } else {
                st.beta[j] = v;
            }
        };
        if 0.5 * (loss(&trial) - loss(st.r)) / nf + pen_change <= 0.0 {
            let full = clipped.iter().zip(&cols).all(|(&b, &j)| j == d || b != 0.0);
            for (&j, nb) in cols.iter().zip(clipped) {
                apply(st, j, nb);
            }
            st.r.copy_from_slice(&trial);
            return full;
        }
        let mut t = 1.0f64;
        for (a, &j) in cols.iter().enumerate() {
            let b = coef(st, j);
            if j != d && b / step[a] > 0.0 {
                t = t.min(b / step[a]);
            }
        }
        if !(t > 0.0 && t.is_finite()) {
            return false;
        }
        for (a, &j) in cols.iter().enumerate() {
            let b = coef(st, j);
            let ratio = b / step[a];
            let nb = if j != d && ratio > 0.0 && ratio <= t { 0.0 } else { b - t * step[a] };
            axpy(b - nb, self.raw_col(j), st.r);
            apply(st, j, nb);
        }
        false
    }
}

fn binomial_deviance(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -2.0 * (y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorizable.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Warm-started solver state along a penalty path.
struct PathSolver<'p> {
    prep: &'p Prepared,
    beta: Vec<f64>,
    b0: f64,
    r: Vec<f64>,
    gram: GramCache,
}

impl<'p> PathSolver<'p> {
    fn new(prep: &'p Prepared) -> Self {
        let b0 = match prep.family {
            Family::Binomial if prep.intercept => {
                let p = prep.y_mean.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                libm::log(p / (1.0 - p))
            }
            _ => 0.0,
        };
        Self {
            prep,
            beta: vec![0.0; prep.d],
            b0,
            r: prep.y.clone(),
            gram: GramCache::default(),
        }
    }

    fn solve(&mut self, lambda: f64, trace: Option<&mut Vec<f64>>) -> Result<FittedLinearModel> {
        match self.prep.family {
            Family::Gaussian => self.solve_gaussian(lambda, trace),
            Family::Binomial => self.solve_binomial(lambda),
        }
    }

    fn not_converged(&self, lambda: f64, sweeps: usize, max_change: f64) -> Error {
        Error::NotConverged {
            sweeps,
            max_change,
            last: Box::new(self.prep.to_model(&self.beta, self.b0, lambda)),
        }
    }

    fn solve_gaussian(&mut self, lambda: f64, trace: Option<&mut Vec<f64>>) -> Result<FittedLinearModel> {
        let prep = self.prep;
        let omega = if prep.unit_weights { None } else { Some(prep.w.as_slice()) };
        let quad = Quadratic::new(prep, omega, lambda, false);
        let mut budget = MAX_SWEEPS;
        let mut b0 = 0.0;
        let mut st = SweepState {
            beta: &mut self.beta,
            b0: &mut b0,
            r: &mut self.r,
        };
        let outcome = quad.solve(&mut st, &mut budget, trace.map(|t| (t, lambda)), Some(&mut self.gram));
        match outcome {
            Ok(()) => Ok(prep.to_model(&self.beta, 0.0, lambda)),
            Err(mc) => Err(self.not_converged(lambda, MAX_SWEEPS, mc)),
        }
    }

    fn solve_binomial(&mut self, lambda: f64) -> Result<FittedLinearModel> {
        let prep = self.prep;
        let n = prep.n;
        let mut eta = vec![0.0; n];
        let mut omega = vec![0.0; n];
        let mut budget = MAX_SWEEPS;
        for _ in 0..MAX_IRLS {
            prep.linear_predictor(&self.beta, self.b0, &mut eta);
            for i in 0..n {
                let p = sigmoid(eta[i]).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let v = p * (1.0 - p);
                omega[i] = prep.w[i] * v;
                self.r[i] = (prep.y[i] - p) / v;
            }
            let before_b0 = self.b0;
            let before = self.beta.clone();
            let quad = Quadratic::new(prep, Some(&omega), lambda, prep.intercept);
            let mut st = SweepState {
                beta: &mut self.beta,
                b0: &mut self.b0,
                r: &mut self.r,
            };
            if let Err(mc) = quad.solve(&mut st, &mut budget, None, Some(&mut GramCache::default())) {
                return Err(self.not_converged(lambda, MAX_SWEEPS, mc));
            }
            let change = before
                .iter()
                .zip(&self.beta)
                .map(|(a, b)| (a - b).abs())
                .fold((before_b0 - self.b0).abs(), f64::max);
            if change < TOLERANCE {
                return Ok(prep.to_model(&self.beta, self.b0, lambda));
            }
        }
        Err(self.not_converged(lambda, MAX_SWEEPS - budget, f64::NAN))
    }
}

/// Largest useful penalty: every coefficient is exactly zero at or above it.
pub fn lambda_max(problem: &RegressionProblem) -> Result<f64> {
    problem.validate()?;
    Ok(Prepared::new(problem, None).lambda_max())
}

/// `size` log-spaced penalties from `lambda_max` down to
/// `family.min_lambda_ratio() · lambda_max`.
pub fn lambda_grid(lambda_max: f64, family: Family, size: usize) -> Vec<f64> {
    let top = if lambda_max > 0.0 && lambda_max.is_finite() { lambda_max } else { 1e-10 };
    let size = size.max(2);
    let ratio = family.min_lambda_ratio();
    (0..size)
        .map(|k| top * libm::pow(ratio, k as f64 / (size - 1) as f64))
        .collect()
}

pub fn fit_elastic_net(problem: &RegressionProblem, lambda: f64) -> Result<FittedLinearModel> {
    problem.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("penalty {lambda} must be nonnegative")));
    }
    let prep = Prepared::new(problem, None);
    PathSolver::new(&prep).solve(lambda, None)
}

/// Like [`fit_elastic_net`] (gaussian only) but also returns the penalized
/// objective after every coordinate-descent sweep.
pub fn fit_elastic_net_traced(problem: &RegressionProblem, lambda: f64) -> Result<(FittedLinearModel, Vec<f64>)> {
    problem.validate()?;
    if problem.family != Family::Gaussian {
        return Err(Error::Config("objective tracing is only available for the gaussian family".into()));
    }
    let prep = Prepared::new(problem, None);
    let mut trace = vec![0.5 * prep.y.iter().zip(&prep.w).map(|(y, w)| w * y * y).sum::<f64>() / prep.n as f64];
    let model = PathSolver::new(&prep).solve(lambda, Some(&mut trace))?;
    Ok((model, trace))
}

/// Warm-started fits along a decreasing penalty sequence.
pub fn fit_path(problem: &RegressionProblem, lambdas: &[f64]) -> Result<Vec<FittedLinearModel>> {
    problem.validate()?;
    let prep = Prepared::new(problem, None);
    let mut solver = PathSolver::new(&prep);
    lambdas.iter().map(|&l| solver.solve(l, None)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Decreasing penalties.
    pub lambda_grid: Vec<f64>,
    /// Mean held-out loss per penalty.
    pub cv_risk: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub fold_assignment: Vec<usize>,
}

fn held_out_loss(model: &FittedLinearModel, problem: &RegressionProblem, rows: &[usize]) -> f64 {
    let mut loss = 0.0;
    let mut wsum = 0.0;
    for &i in rows {
        let w = problem.weights.as_ref().map_or(1.0, |w| w[i]);
        let eta = model.linear_predictor_row(problem.design.row(i));
        let y = problem.response[i];
        let l = match model.family {
            Family::Gaussian => (y - eta) * (y - eta),
            Family::Binomial => {
                let p = sigmoid(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
            }
        };
        loss += w * l;
        wsum += w;
    }
    if wsum > 0.0 {
        loss / wsum
    } else {
        0.0
    }
}

/// Fits along `grid` and stops early, as glmnet does, once at least
/// `PATH_MIN_LENGTH` penalties are done and the deviance ratio exceeds
/// `PATH_DEV_RATIO_MAX` or grew by less than `PATH_DEV_GAIN_MIN` (relative).
fn fit_truncated_path(prep: &Prepared, grid: &[f64]) -> Result<Vec<FittedLinearModel>> {
    let null = prep.null_deviance();
    let mut solver = PathSolver::new(prep);
    let mut models = Vec::with_capacity(grid.len());
    let mut previous = 0.0;
    for &lambda in grid {
        let model = solver.solve(lambda, None)?;
        models.push(model);
        let ratio = if null > 0.0 {
            1.0 - prep.deviance(&solver.beta, solver.b0) / null
        } else {
            1.0
        };
        if models.len() >= PATH_MIN_LENGTH && (ratio > PATH_DEV_RATIO_MAX || ratio - previous < PATH_DEV_GAIN_MIN * ratio) {
            break;
        }
        previous = ratio;
    }
    Ok(models)
}

const PATH_MIN_LENGTH: usize = 5;
const PATH_DEV_RATIO_MAX: f64 = 0.999;
const PATH_DEV_GAIN_MIN: f64 = 1e-5;

fn cv_with_path(problem: &RegressionProblem, folds: usize, grid_size: usize, seed: u64) -> Result<(CvResult, Vec<FittedLinearModel>)> {
    problem.validate()?;
    let n = problem.n_obs();
    if folds < 2 || n < folds {
        return Err(Error::Config(format!("{folds}-fold cross-validation needs folds >= 2 and n >= folds (n = {n})")));
    }
    let full = Prepared::new(problem, None);
    let mut grid = lambda_grid(full.lambda_max(), problem.family, grid_size);
    let path = fit_truncated_path(&full, &grid)?;
    drop(full);
    grid.truncate(path.len().max(2));
    let assignment = kfold_assignment(n, folds, seed);
    let mut risk = vec![0.0; grid.len()];
    for k in 0..folds {
        let (train, test) = split_fold(&assignment, k);
        let prep = Prepared::new(problem, Some(&train));
        let mut solver = PathSolver::new(&prep);
        for (slot, &lambda) in risk.iter_mut().zip(&grid) {
            let model = solver.solve(lambda, None)?;
            *slot += held_out_loss(&model, problem, &test) / folds as f64;
        }
    }
    let best = risk.iter().copied().fold(f64::INFINITY, f64::min);
    let selected_index = risk.iter().rposition(|&r| r == best).unwrap_or(0);
    let cv = CvResult {
        selected_lambda: grid[selected_index],
        selected_index,
        lambda_grid: grid,
        cv_risk: risk,
        fold_assignment: assignment,
    };
    Ok((cv, path))
}

/// K-fold cross-validated penalty selection.
///
/// The grid comes from the full data and is cut where the full-data path
/// stops improving; each fold refits that path on the remaining folds. The
/// selected penalty minimizes the mean held-out loss, ties going to the
/// smallest penalty.
pub fn cv_select_lambda(problem: &RegressionProblem, folds: usize, grid_size: usize, seed: u64) -> Result<CvResult> {
    cv_with_path(problem, folds, grid_size, seed).map(|(cv, _)| cv)
}

/// Cross-validates the penalty and returns the full-data model at it.
pub fn fit_cv(problem: &RegressionProblem, folds: usize, grid_size: usize, seed: u64) -> Result<(CvResult, FittedLinearModel)> {
    let (cv, mut path) = cv_with_path(problem, folds, grid_size, seed)?;
    let model = if cv.selected_index < path.len() {
        path.swap_remove(cv.selected_index)
    } else {
        fit_path(problem, &cv.lambda_grid)?.pop().expect("non-empty path")
    };
    Ok((cv, model))
}
