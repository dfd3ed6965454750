use itrbench_core::penalized::{
    cv_select_lambda, fit_cv, fit_elastic_net, fit_elastic_net_traced, fit_path, lambda_grid, lambda_max, Family,
    FittedLinearModel, RegressionProblem,
};
use itrbench_core::rng::rng_from_seed;
use itrbench_core::stats::sigmoid;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::RngExt;
use rand_distr::StandardNormal;

fn random_problem(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut rng = rng_from_seed(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| if j < 3 { 1.5 - j as f64 } else { 0.0 }).collect();
    let y = Array1::from_shape_fn(n, |i| {
        0.7 + (0..p).map(|j| x[[i, j]] * beta[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
    });
    (x, y)
}

fn ols_with_intercept(x: &Array2<f64>, y: &Array1<f64>) -> DVector<f64> {
    let (n, p) = x.dim();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] });
    let yv = DVector::from_iterator(n, y.iter().copied());
    let xtx = design.transpose() * &design;
    xtx.cholesky().unwrap().solve(&(design.transpose() * yv))
}

#[test]
fn zero_penalty_matches_least_squares() {
    for (seed, n, p) in [(1, 60, 5), (2, 200, 12), (3, 40, 30)] {
        let (x, y) = random_problem(n, p, seed);
        let want = ols_with_intercept(&x, &y);
        for standardize in [true, false] {
            let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian).with_standardize(standardize);
            let m = fit_elastic_net(&problem, 0.0).unwrap();
            assert!((m.intercept - want[0]).abs() < 1e-6, "intercept {} vs {}", m.intercept, want[0]);
            for j in 0..p {
                assert!((m.coefficients[j] - want[j + 1]).abs() < 1e-6, "n={n} p={p} std={standardize} beta[{j}]: {} vs {}", m.coefficients[j], want[j + 1]);
            }
        }
    }
}

#[test]
fn ridge_matches_closed_form() {
    let (x, y) = random_problem(80, 10, 7);
    let (n, p) = x.dim();
    let nf = n as f64;
    let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / nf).collect();
    let y_mean = y.sum() / nf;
    let xc = DMatrix::from_fn(n, p, |i, j| x[[i, j]] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    for lambda in [0.01, 0.3, 2.0] {
        // (XcᵀXc/n + λI) β = Xcᵀyc/n
        let lhs = xc.transpose() * &xc / nf + DMatrix::identity(p, p) * lambda;
        let beta = lhs.cholesky().unwrap().solve(&(xc.transpose() * &yc / nf));
        let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian)
            .with_penalty_mix(0.0)
            .with_standardize(false);
        let m = fit_elastic_net(&problem, lambda).unwrap();
        for j in 0..p {
            assert!((m.coefficients[j] - beta[j]).abs() < 1e-6, "lambda {lambda} beta[{j}]");
        }
        let b0 = y_mean - (0..p).map(|j| means[j] * beta[j]).sum::<f64>();
        assert!((m.intercept - b0).abs() < 1e-6);
    }
}

/// Largest violation of the stationarity conditions on the standardized scale.
fn kkt_residual(m: &FittedLinearModel, problem: &RegressionProblem, lambda: f64) -> f64 {
    let (n, p) = problem.design.dim();
    let nf = n as f64;
    let raw_w: Vec<f64> = problem.weights.map_or(vec![1.0; n], |w| w.to_vec());
    let wsum: f64 = raw_w.iter().sum();
    let w: Vec<f64> = raw_w.iter().map(|v| v * nf / wsum).collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let eta = m.linear_predictor_row(problem.design.row(i));
            let fitted = match problem.family {
                Family::Gaussian => eta,
                Family::Binomial => sigmoid(eta),
            };
            problem.response[i] - fitted
        })
        .collect();
    let alpha = problem.penalty_mix;
    let mut worst = (0..n).map(|i| w[i] * resid[i]).sum::<f64>().abs() / nf;
    for j in 0..p {
        let s = m.column_scales[j];
        let mu = m.column_means[j];
        let g: f64 = (0..n).map(|i| w[i] * (problem.design[[i, j]] - mu) / s * resid[i]).sum::<f64>() / nf;
        let b = m.coefficients[j] * s;
        let v = if b == 0.0 {
            (g.abs() - lambda * alpha).max(0.0)
        } else {
            (g - lambda * (1.0 - alpha) * b - lambda * alpha * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[test]
fn kkt_conditions_hold_on_random_problems() {
    let mut rng = rng_from_seed(99);
    let mut worst = 0.0f64;
    for k in 0..200u64 {
        let n = rng.random_range(20..120);
        let p = rng.random_range(1..160);
        let (x, mut y) = random_problem(n, p, 1000 + k);
        let binomial = k % 4 == 3;
        if binomial {
            y.mapv_inplace(|v| if v > 0.7 { 1.0 } else { 0.0 });
            if y.sum() < 2.0 || y.sum() > n as f64 - 2.0 {
                continue;
            }
        }
        let family = if binomial { Family::Binomial } else { Family::Gaussian };
        let weights = Array1::from_shape_fn(n, |_| rng.random_range(0.2..2.0));
        let alpha = [1.0, 0.5, 0.1][(k % 3) as usize];
        let mut problem = RegressionProblem::new(x.view(), y.view(), family)
            .with_penalty_mix(alpha)
            .with_standardize(k % 5 != 0);
        if k % 2 == 0 {
            problem = problem.with_weights(weights.view());
        }
        let lmax = lambda_max(&problem).unwrap();
        let lambda = lmax * [0.5, 0.1, 0.02][(k % 3) as usize] * if binomial { 2.0 } else { 1.0 };
        let m = fit_elastic_net(&problem, lambda).unwrap();
        let r = kkt_residual(&m, &problem, lambda);
        worst = worst.max(r);
        assert!(r <= 1e-5, "problem {k} (n={n}, p={p}, {family:?}, alpha {alpha}): KKT residual {r:e}");
    }
    assert!(worst.is_finite());
}

#[test]
fn objective_never_increases_across_sweeps() {
    for (seed, n, p) in [(5, 50, 200), (6, 300, 20)] {
        let (x, y) = random_problem(n, p, seed);
        for alpha in [1.0, 0.5] {
            let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian).with_penalty_mix(alpha);
            let lmax = lambda_max(&problem).unwrap();
            let (_, trace) = fit_elastic_net_traced(&problem, 0.01 * lmax).unwrap();
            assert!(trace.len() >= 2);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14, "objective rose from {} to {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn lambda_max_zeroes_every_coefficient() {
    let (x, y) = random_problem(100, 40, 11);
    for alpha in [1.0, 0.3] {
        let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian).with_penalty_mix(alpha);
        let lmax = lambda_max(&problem).unwrap();
        assert!(fit_elastic_net(&problem, lmax * 1.0001).unwrap().nonzero().is_empty());
        assert!(!fit_elastic_net(&problem, lmax * 0.9).unwrap().nonzero().is_empty());
    }
}

#[test]
fn grid_is_log_spaced_down_to_the_family_ratio() {
    let g = lambda_grid(2.0, Family::Gaussian, 100);
    assert_eq!(g.len(), 100);
    assert!((g[0] - 2.0).abs() < 1e-12);
    assert!((g[99] - 0.002).abs() < 1e-12);
    let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
    let b = lambda_grid(1.0, Family::Binomial, 50);
    assert!((b[49] - 0.01).abs() < 1e-12);
}

#[test]
fn path_is_warm_started_and_matches_single_fits() {
    let (x, y) = random_problem(150, 60, 13);
    let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian);
    let grid = lambda_grid(lambda_max(&problem).unwrap(), Family::Gaussian, 20);
    let path = fit_path(&problem, &grid).unwrap();
    for (l, m) in grid.iter().zip(&path) {
        let single = fit_elastic_net(&problem, *l).unwrap();
        for (a, b) in m.coefficients.iter().zip(&single.coefficients) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    let sizes: Vec<usize> = path.iter().map(|m| m.nonzero().len()).collect();
    assert_eq!(sizes[0], 0);
    assert!(sizes[19] >= 3);
}

#[test]
fn cross_validation_picks_a_sparse_truth() {
    let (x, y) = random_problem(300, 50, 17);
    let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian);
    let (cv, model) = fit_cv(&problem, 10, 100, 3).unwrap();
    assert_eq!(cv.lambda_grid[cv.selected_index], cv.selected_lambda);
    let best = cv.cv_risk.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(cv.cv_risk[cv.selected_index], best);
    // Ties resolve to the largest penalty, which is the first on the grid.
    assert!(cv.cv_risk[..cv.selected_index].iter().all(|&r| r > best));
    for j in 0..3 {
        assert!(model.coefficients[j] != 0.0, "signal {j} dropped");
    }
    assert!((model.coefficients[0] - 1.5).abs() < 0.2);
    let again = cv_select_lambda(&problem, 10, 100, 3).unwrap();
    assert_eq!(again, cv);
}

#[test]
fn logistic_lasso_recovers_direction() {
    let mut rng = rng_from_seed(21);
    let n = 800;
    let x = Array2::from_shape_fn((n, 20), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |i| {
        let p = sigmoid(0.5 + 1.5 * x[[i, 0]] - x[[i, 1]]);
        f64::from(u8::from(rng.random::<f64>() < p))
    });
    let problem = RegressionProblem::new(x.view(), y.view(), Family::Binomial);
    let (_, m) = fit_cv(&problem, 5, 50, 1).unwrap();
    assert!(m.coefficients[0] > 1.0 && m.coefficients[1] < -0.6);
    let pred = m.predict(x.view()).unwrap();
    assert!(pred.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn rejects_bad_input() {
    let (x, y) = random_problem(30, 4, 1);
    let problem = RegressionProblem::new(x.view(), y.view(), Family::Binomial);
    assert!(fit_elastic_net(&problem, 0.1).is_err());
    let short = y.slice(ndarray::s![..10]).to_owned();
    let problem = RegressionProblem::new(x.view(), short.view(), Family::Gaussian);
    assert!(fit_elastic_net(&problem, 0.1).is_err());
    let problem = RegressionProblem::new(x.view(), y.view(), Family::Gaussian);
    assert!(fit_elastic_net(&problem, -1.0).is_err());
}
