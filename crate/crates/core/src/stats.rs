//! Small numerical helpers shared across modules.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::rng_from_seed;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let (s, w) = xs
        .iter()
        .zip(ws)
        .fold((0.0, 0.0), |(s, t), (x, w)| (s + w * x, t + w));
    s / w
}

/// Standard error of the mean, `sd / sqrt(n)`.
pub fn std_error(xs: &[f64]) -> f64 {
    libm::sqrt(variance(xs) / xs.len() as f64)
}

pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// Two-sided normal p-value for a Wald statistic.
pub fn two_sided_p_value(z: f64) -> f64 {
    libm::erfc(z.abs() / core::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + libm::exp(-eta))
    } else {
        let e = libm::exp(eta);
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Seed-deterministic balanced K-fold partition: a seeded permutation of the
/// rows is dealt round-robin into `k` folds.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = alloc::vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

/// Row indices inside / outside fold `k`.
pub fn split_fold(folds: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for (i, &f) in folds.iter().enumerate() {
        if f == k {
            held_out.push(i);
        } else {
            train.push(i);
        }
    }
    (train, held_out)
}
