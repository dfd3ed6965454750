use std::path::PathBuf;
use std::process::Command;

use itr_bench::config::{ConfigFile, ExperimentConfig, Profile, TimingMode};
use itr_bench::harness::{design_spec, run_experiment, Experiment, FitStatus, ReplicateResult};
use itr_bench::io::{read_dataset, read_results, write_results};
use itr_bench::report::aggregate;
use itrbench_core::cate::Strategy;
use itrbench_core::dgp::DgpId;
use itrbench_core::super_learner::LearnerKind;

const SMALL: &str = r#"
dgps = ["rct-sparse-linear-identity", "obs-sparse-linear-identity"]
sample_sizes = [120]
test_size = 50
replicates = 2
estimators = ["plugin-lasso", "plugin-xgboost", "aipw-lasso", "causal-forest"]
p = 50
n_mc = 20000
master_seed = 7

[estimator]
cv_folds = 3
lambda_grid_size = 20
cross_fit_folds = 2
boost_rounds = 20
forest_trees = 20
causal_forest_trees = 40
super_learner_folds = 2
sl_cv_folds = 2
sl_lambda_grid_size = 15
sl_forest_trees = 20
sl_boost_rounds = 15
"#;

fn small_config() -> ExperimentConfig {
    ExperimentConfig::resolve(&ConfigFile::from_toml(SMALL).unwrap(), None, None).unwrap()
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("itr-bench-test-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn profiles_and_overrides_resolve() {
    let empty = ConfigFile::default();
    let desk = ExperimentConfig::resolve(&empty, None, None).unwrap();
    assert_eq!(desk.profile, Profile::Desk);
    assert_eq!((desk.replicates, desk.n_mc, desk.test_size), (20, 100_000, 100));
    assert_eq!(desk.sample_sizes, vec![250, 500, 1000]);
    assert_eq!(desk.dgps.len(), 16);
    assert_eq!(desk.estimators.len(), 9);
    assert_eq!(desk.filtered, vec![false, true]);
    assert_eq!(desk.estimator.super_learner_folds, 3);
    let paper = ExperimentConfig::resolve(&empty, Some(Profile::Paper), None).unwrap();
    assert_eq!(paper.replicates, 100);
    assert_eq!(paper.estimator.super_learner_folds, 10);

    let cfg = small_config();
    assert_eq!(cfg.estimator.cv_folds, 3);
    assert_eq!(cfg.estimator.causal_forest.n_trees, 40);
    // Only the penalized learners cross-validate their own penalty.
    assert!(cfg
        .estimator
        .super_learner_library
        .iter()
        .filter(|s| matches!(s.kind, LearnerKind::Lasso | LearnerKind::Ridge | LearnerKind::ElasticNet))
        .all(|s| s.cv_folds == 2));
    let seeded = ExperimentConfig::resolve(&ConfigFile::from_toml(SMALL).unwrap(), None, Some("99")).unwrap();
    assert_eq!(seeded.master_seed, 99);
    assert!(ExperimentConfig::resolve(&empty, None, Some("abc")).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        "replicates = 0",
        "test_size = 0",
        "estimators = [\"plugin-foo\"]",
        "dgps = [\"rct-sparse\"]",
        "p = 33\ndgps = [\"rct-sparse-linear-block\"]",
        "fdr_level = 1.5",
        "unknown_key = 1",
        "[estimator]\npi_floor = 0.7",
    ] {
        let parsed = ConfigFile::from_toml(bad).and_then(|f| ExperimentConfig::resolve(&f, None, None));
        assert!(parsed.is_err(), "accepted `{bad}`");
    }
}

#[test]
fn small_designs_shrink_supports_in_proportion() {
    let id: DgpId = "rct-sparse-linear-identity".parse().unwrap();
    let s = design_spec(id, 100);
    assert_eq!(s.true_tems(), vec![0, 1]);
    assert_eq!(s.gamma.iter().filter(|&&g| g != 0.0).count(), 1);
    let dense = design_spec("obs-nonsparse-linear-block".parse().unwrap(), 100);
    assert_eq!(dense.true_tems().len(), 10);
    assert_eq!(design_spec(id, 500).true_tems().len(), 10);
}

fn check_rows(rows: &[ReplicateResult], cfg: &ExperimentConfig) {
    assert_eq!(
        rows.len(),
        cfg.dgps.len() * cfg.sample_sizes.len() * cfg.replicates * cfg.estimators.len() * cfg.filtered.len()
    );
    for r in rows {
        assert_eq!(r.status, FitStatus::Ok, "{r:?}");
        let q = r.relative_rule_quality.unwrap();
        assert!(q.is_finite() && q < 2.0);
        // Interpretability is missing exactly for unfiltered fits without their own TEM set.
        let expect_na = !r.filtered && !r.estimator.has_builtin_tems();
        for v in [r.fdp, r.tnp, r.tpp] {
            assert_eq!(v.is_none(), expect_na, "{r:?}");
            if let Some(v) = v {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert_eq!(r.selected_tems.is_none(), expect_na);
        assert!(r.fit_time_seconds >= 0.0);
    }
}

#[test]
fn replicates_are_deterministic_and_well_formed() {
    let cfg = small_config();
    let exp = Experiment::prepare(cfg.clone(), None).unwrap();
    let a = run_experiment(&exp).unwrap();
    check_rows(&a, &cfg);
    let b = run_experiment(&exp).unwrap();
    let strip = |rows: &[ReplicateResult]| {
        rows.iter()
            .map(|r| ReplicateResult {
                fit_time_seconds: 0.0,
                ..r.clone()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));

    // Filtered rows within a replicate share the filter's selection.
    for r in a.iter().filter(|r| r.filtered) {
        let first = a
            .iter()
            .find(|s| s.filtered && s.dgp == r.dgp && s.replicate == r.replicate)
            .unwrap();
        assert_eq!(r.selected_tems, first.selected_tems);
    }

    // Parallel mode gives the same numbers in the same order.
    let par = Experiment::prepare(
        ExperimentConfig {
            timing_mode: TimingMode::Parallel,
            threads: Some(2),
            ..cfg.clone()
        },
        None,
    )
    .unwrap();
    assert_eq!(strip(&run_experiment(&par).unwrap()), strip(&a));

    // CSV round trip.
    let mut buf = Vec::new();
    write_results(&mut buf, &a).unwrap();
    let back = read_results(buf.as_slice()).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in back.iter().zip(&a) {
        assert_eq!(x.relative_rule_quality, y.relative_rule_quality);
        assert_eq!(x.selected_tems, y.selected_tems);
        assert_eq!(x.estimator, y.estimator);
        assert!((x.fit_time_seconds - y.fit_time_seconds).abs() < 1e-6);
    }

    let table = aggregate(&a);
    assert_eq!(table.rows.len(), 2 * 4 * 2);
    let md = table.to_markdown();
    assert!(md.contains("## rct-sparse-linear-identity"));
    assert!(md.contains("| Plug-In XGBoost | Rule quality |"));
    let row = table.find("obs-sparse-linear-identity".parse().unwrap(), Strategy::PluginXgboost, false, 120).unwrap();
    assert!(row.fdr_pct.is_none() && row.rule_quality.is_some());
}

#[test]
fn aggregation_means_and_percentages() {
    let base = ReplicateResult {
        dgp: "rct-sparse-linear-identity".parse().unwrap(),
        n: 250,
        replicate: 0,
        estimator: Strategy::PluginLasso,
        filtered: false,
        status: FitStatus::Ok,
        mean_test_outcome: Some(2.0),
        relative_rule_quality: Some(0.8),
        fdp: Some(0.5),
        tnp: Some(1.0),
        tpp: Some(1.0),
        fit_time_seconds: 1.0,
        selected_tems: Some(vec![0]),
        diagnostics: vec![],
    };
    let second = ReplicateResult {
        replicate: 1,
        relative_rule_quality: Some(1.0),
        fdp: Some(0.0),
        fit_time_seconds: 3.0,
        ..base.clone()
    };
    let failed = ReplicateResult {
        replicate: 2,
        status: FitStatus::Failed,
        relative_rule_quality: None,
        ..base.clone()
    };
    let t = aggregate(&[base.clone(), second, failed]);
    assert_eq!(t.rows.len(), 1);
    let r = &t.rows[0];
    assert!((r.rule_quality.unwrap() - 0.9).abs() < 1e-12);
    assert!((r.fdr_pct.unwrap() - 25.0).abs() < 1e-12);
    assert_eq!(r.mean_fit_time, Some(2.0));
    assert_eq!((r.replicates, r.failed), (3, 1));
    let single = aggregate(std::slice::from_ref(&base));
    assert_eq!(single.rows[0].rule_quality, Some(0.8));
    assert_eq!(single.rows[0].tpr_pct, Some(100.0));
}

#[test]
fn cli_simulate_temvip_run_and_report() {
    let exe = env!("CARGO_BIN_EXE_itr-bench");
    let dir = tmp_dir("cli");
    let data = dir.join("data.csv");
    let st = Command::new(exe)
        .args(["simulate", "--dgp", "rct-sparse-linear-identity", "--n", "400", "--seed", "3", "--p", "100", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());
    let loaded = read_dataset(std::fs::File::open(&data).unwrap()).unwrap();
    assert_eq!((loaded.data.n(), loaded.data.p()), (400, 100));
    assert!(loaded.pi.is_some() && loaded.data.potential_outcomes.is_some());

    let out = Command::new(exe).args(["temvip", "--mode", "rct", "--in"]).arg(&data).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines[0].starts_with("covariate,psi_hat,std_err,ci_lower,ci_upper"));
    let selected: Vec<&str> = lines[1..].iter().filter(|l| l.contains(",true,")).map(|l| l.split(',').next().unwrap()).collect();
    assert!(selected.contains(&"W1") && selected.contains(&"W2"));

    let cfg_path = dir.join("small.toml");
    std::fs::write(&cfg_path, SMALL.replace("replicates = 2", "replicates = 1")).unwrap();
    let run_dir = dir.join("run");
    let st = Command::new(exe)
        .args(["run", "--quiet", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run_dir)
        .env("ITR_BENCH_SEED", "11")
        .status()
        .unwrap();
    assert!(st.success());
    for f in ["results.csv", "summary.csv", "summary.md", "config.resolved.json", "oracle_cache.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let resolved = std::fs::read_to_string(run_dir.join("config.resolved.json")).unwrap();
    assert!(resolved.contains("\"master_seed\": 11"));
    let rep = Command::new(exe).args(["report", "--format", "csv", "--in"]).arg(&run_dir).output().unwrap();
    assert!(rep.status.success());
    assert_eq!(String::from_utf8(rep.stdout).unwrap().lines().count(), 1 + 2 * 4 * 2);

    // Unreadable input is an error.
    let bad = Command::new(exe).args(["temvip", "--mode", "rct", "--in"]).arg(dir.join("missing.csv")).status().unwrap();
    assert!(!bad.success());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn shipped_configs_resolve() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let file = ConfigFile::load(&path).unwrap();
            ExperimentConfig::resolve(&file, None, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
