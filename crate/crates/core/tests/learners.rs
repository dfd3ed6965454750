use itrbench_core::penalized::Family;
use itrbench_core::rng::rng_from_seed;
use itrbench_core::super_learner::{default_library, fit_super_learner, project_to_simplex, LearnerKind, LearnerSpec};
use itrbench_core::trees::{
    fit_causal_forest, fit_gradient_boosting, fit_random_forest, BoostConfig, BoostLoss, ForestConfig,
};
use ndarray::{Array1, Array2};
use rand::RngExt;
use rand_distr::StandardNormal;

fn features(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal))
}

fn mse(a: &Array1<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / b.len() as f64
}

#[test]
fn boosting_reduces_training_loss_and_learns_a_step() {
    let x = features(500, 4, 1);
    let truth: Vec<f64> = x.rows().into_iter().map(|r| if r[0] > 0.0 { 2.0 } else { -1.0 }).collect();
    let mut rng = rng_from_seed(2);
    let y: Vec<f64> = truth.iter().map(|t| t + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let cfg = BoostConfig::default();
    let model = fit_gradient_boosting(x.view(), &y, None, &cfg, BoostLoss::Squared).unwrap();
    assert!(model.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let x_test = features(500, 4, 3);
    let t_test: Vec<f64> = x_test.rows().into_iter().map(|r| if r[0] > 0.0 { 2.0 } else { -1.0 }).collect();
    assert!(mse(&model.predict(x_test.view()).unwrap(), &t_test) < 0.05);
}

#[test]
fn logistic_boosting_gives_probabilities() {
    let x = features(600, 3, 4);
    let mut rng = rng_from_seed(5);
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * r[1]).exp()))))
        .collect();
    let cfg = BoostConfig {
        n_rounds: 60,
        ..BoostConfig::default()
    };
    let model = fit_gradient_boosting(x.view(), &y, None, &cfg, BoostLoss::Logistic).unwrap();
    let p = model.predict(x.view()).unwrap();
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    let hi: f64 = x.rows().into_iter().zip(p.iter()).filter(|(r, _)| r[1] > 1.0).map(|(_, &v)| v).sum::<f64>()
        / x.column(1).iter().filter(|&&v| v > 1.0).count() as f64;
    assert!(hi > 0.75);
}

#[test]
fn random_forest_beats_the_mean() {
    let x = features(400, 5, 6);
    let f = |r: ndarray::ArrayView1<f64>| r[0] * r[0] + r[1];
    let mut rng = rng_from_seed(7);
    let y: Vec<f64> = x.rows().into_iter().map(|r| f(r) + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
    let cfg = ForestConfig {
        n_trees: 200,
        seed: 3,
        ..ForestConfig::default()
    };
    let forest = fit_random_forest(x.view(), &y, None, &cfg).unwrap();
    let x_test = features(400, 5, 8);
    let t: Vec<f64> = x_test.rows().into_iter().map(f).collect();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let baseline = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
    assert!(mse(&forest.predict(x_test.view()).unwrap(), &t) < 0.5 * baseline);
    assert_eq!(fit_random_forest(x.view(), &y, None, &cfg).unwrap(), forest);
}

#[test]
fn causal_forest_finds_the_sign_of_the_effect() {
    let n = 2000;
    let x = features(n, 4, 9);
    let mut rng = rng_from_seed(10);
    let a: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let tau = |r: ndarray::ArrayView1<f64>| if r[0] > 0.0 { 2.0 } else { -2.0 };
    let y: Vec<f64> = (0..n)
        .map(|i| x[[i, 1]] + if a[i] { tau(x.row(i)) } else { 0.0 } + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let m_hat: Vec<f64> = (0..n).map(|i| x[[i, 1]]).collect();
    let pi_hat = vec![0.5; n];
    let cfg = ForestConfig {
        n_trees: 200,
        seed: 1,
        ..ForestConfig::causal()
    };
    let cf = fit_causal_forest(x.view(), &y, &a, &m_hat, &pi_hat, &cfg).unwrap();
    let x_test = features(500, 4, 11);
    let pred = cf.predict(x_test.view()).unwrap();
    let agree = x_test.rows().into_iter().zip(pred.cate.iter()).filter(|(r, &c)| (c > 0.0) == (tau(*r) > 0.0)).count();
    assert!(agree as f64 > 0.9 * 500.0, "{agree} of 500");
}

#[test]
fn simplex_projection() {
    let w = project_to_simplex(&[0.5, 0.5, 0.5]);
    assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    let w = project_to_simplex(&[2.0, -1.0, 0.0]);
    assert_eq!(w, vec![1.0, 0.0, 0.0]);
    let w = project_to_simplex(&[0.3, 0.2, 0.1, -4.0]);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|&v| v >= 0.0));
}

fn quick_library() -> Vec<LearnerSpec> {
    default_library()
        .into_iter()
        .map(|mut s| {
            s.cv_folds = 3;
            s.lambda_grid_size = 30;
            s.forest.n_trees = 60;
            s.boost.n_rounds = 40;
            s
        })
        .collect()
}

#[test]
fn super_learner_weights_form_a_simplex_and_favor_the_right_learner() {
    let x = features(400, 20, 12);
    let mut rng = rng_from_seed(13);
    let y: Vec<f64> = x.rows().into_iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let sl = fit_super_learner(&quick_library(), x.view(), &y, Family::Gaussian, 5, 1).unwrap();
    assert!((sl.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(sl.weights.iter().all(|&w| w >= 0.0));
    let linear: f64 = sl
        .names
        .iter()
        .zip(&sl.weights)
        .filter(|(n, _)| ["lasso", "ridge", "elastic_net"].contains(n))
        .map(|(_, w)| w)
        .sum();
    assert!(linear > 0.8, "weights {:?} on {:?}", sl.weights, sl.names);
    // The ensemble is no worse than its best learner in cross-validation, up to noise.
    let best = sl.learner_cv_risk.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(sl.cv_risk <= best * 1.02);
    let x_test = features(300, 20, 14);
    let t: Vec<f64> = x_test.rows().into_iter().map(|r| 3.0 * r[0] - 2.0 * r[1]).collect();
    assert!(mse(&sl.predict(x_test.view()).unwrap(), &t) < 0.1);
}

#[test]
fn binomial_super_learner_predicts_probabilities() {
    let x = features(300, 6, 15);
    let mut rng = rng_from_seed(16);
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-r[0]).exp()))))
        .collect();
    let lib = vec![LearnerSpec::new(LearnerKind::Lasso), LearnerSpec::new(LearnerKind::GradientBoosting)];
    let sl = fit_super_learner(&lib, x.view(), &y, Family::Binomial, 3, 2).unwrap();
    let p = sl.predict(x.view()).unwrap();
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(fit_super_learner(&lib, x.view(), &y, Family::Binomial, 3, 2).unwrap(), sl);
}
