use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand, ValueEnum};
use itrbench_core::cate::{estimate_lasso_interaction_nuisances, estimate_super_learner_nuisances, PropensityMode};
use itrbench_core::dgp::{make_covariance, sample_dataset, DgpId};
use itrbench_core::temvip::estimate_temvip_all;
use itr_bench::config::{profile_estimator, ConfigFile, ExperimentConfig, Profile, TimingMode, FULL_P};
use itr_bench::harness::{covariance_seed, design_spec, run_experiment_with, Experiment, FitStatus};
use itr_bench::io::{self as bio, OracleCache};
use itr_bench::report::aggregate;
use itr_bench::{BenchError, Result};

#[derive(Parser)]
#[command(name = "itr-bench", version, about = "Benchmark of CATE and treatment-rule estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rct,
    Obs,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Worker threads; more than one switches to parallel timing mode.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Summarize the results.csv in a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
    /// Draw one dataset with potential outcomes and propensities.
    Simulate {
        #[arg(long)]
        dgp: DgpId,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = FULL_P)]
        p: usize,
    },
    /// TEM-VIP estimates with BH adjustment for a CSV dataset.
    Temvip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Constant propensity when the file has no `pi` column.
        #[arg(long)]
        propensity: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        fdr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn run(config: &Path, profile: Option<Profile>, threads: Option<usize>, out: Option<PathBuf>, quiet: bool) -> Result<bool> {
    let file = ConfigFile::load(config)?;
    let mut cfg = ExperimentConfig::resolve_with_env(&file, profile)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    if let Some(t) = threads {
        cfg.threads = Some(t);
        if t > 1 {
            cfg.timing_mode = TimingMode::Parallel;
        }
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let cache = OracleCache::load(&dir.join(bio::ORACLE_CACHE_FILE))?;
    let exp = Experiment::prepare(cfg, Some(&cache))?;
    write_file(
        &dir.join(bio::RESOLVED_CONFIG_FILE),
        &(serde_json::to_string_pretty(&exp.config)? + "\n"),
    )?;
    exp.oracle_cache.save(&dir.join(bio::ORACLE_CACHE_FILE))?;
    let total = exp.tasks().len();
    let done = AtomicUsize::new(0);
    let results = run_experiment_with(&exp, |rows| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if !quiet {
            if let Some(r) = rows.first() {
                let failed = rows.iter().filter(|r| r.status == FitStatus::Failed).count();
                eprintln!("[{k}/{total}] {} n={} b={} ({failed} failed)", r.dgp, r.n, r.replicate);
            }
        }
    })?;
    bio::write_results_file(&dir.join(bio::RESULTS_FILE), &results)?;
    let summary = aggregate(&results);
    let path = dir.join(bio::SUMMARY_CSV_FILE);
    summary.write_csv(BufWriter::new(File::create(&path).map_err(|e| BenchError::io(&path, e))?))?;
    write_file(&dir.join(bio::SUMMARY_MD_FILE), &summary.to_markdown())?;
    let failed: Vec<_> = results.iter().filter(|r| r.status == FitStatus::Failed).collect();
    for r in &failed {
        eprintln!(
            "failed: {} n={} b={} {} filtered={}: {}",
            r.dgp,
            r.n,
            r.replicate,
            r.estimator,
            r.filtered,
            r.diagnostics.join("; ")
        );
    }
    if !quiet {
        eprintln!("wrote {} rows to {}", results.len(), dir.display());
    }
    Ok(failed.is_empty())
}

fn report(input: &Path, format: Format) -> Result<()> {
    let path = if input.is_dir() { input.join(bio::RESULTS_FILE) } else { input.to_path_buf() };
    let results = bio::read_results_file(&path)?;
    if results.is_empty() {
        return Err(BenchError::Format(format!("{} has no rows", path.display())));
    }
    let table = aggregate(&results);
    let stdout = io::stdout();
    match format {
        Format::Csv => table.write_csv(stdout.lock()),
        Format::Markdown => stdout
            .lock()
            .write_all(table.to_markdown().as_bytes())
            .map_err(|e| BenchError::io(Path::new("<stdout>"), e)),
    }
}

fn simulate(dgp: DgpId, n: usize, seed: u64, out: &Path, p: usize) -> Result<()> {
    let spec = design_spec(dgp, p);
    let cov = make_covariance(spec.covariance_kind, p, covariance_seed(seed))?;
    let data = sample_dataset(&spec, &cov, n, seed, true)?;
    let pi = bio::design_propensities(&spec, &data);
    let file = File::create(out).map_err(|e| BenchError::io(out, e))?;
    bio::write_dataset(BufWriter::new(file), &data, Some(&pi))
}

fn temvip(input: &Path, mode: Mode, propensity: Option<f64>, fdr: f64, seed: u64, profile: Profile, out: Option<&Path>) -> Result<()> {
    if !(fdr > 0.0 && fdr < 1.0) {
        return Err(BenchError::Config(format!("FDR level {fdr} outside (0, 1)")));
    }
    let file = File::open(input).map_err(|e| BenchError::io(input, e))?;
    let loaded = bio::read_dataset(io::BufReader::new(file))?;
    let data = &loaded.data;
    let est = profile_estimator(profile);
    let known = match (propensity, &loaded.pi) {
        (Some(c), _) => Some(vec![c; data.n()]),
        (None, Some(pi)) => Some(pi.clone()),
        (None, None) => None,
    };
    let nuisances = match mode {
        Mode::Rct => {
            let pi = known.ok_or_else(|| BenchError::Config("rct mode needs a `pi` column or --propensity".into()))?;
            estimate_lasso_interaction_nuisances(data, &pi, &est, seed)?
        }
        // Observational mode always estimates the propensity.
        Mode::Obs => estimate_super_learner_nuisances(data, &PropensityMode::Estimated, &est, seed)?,
    };
    for d in &nuisances.diagnostics {
        eprintln!("note: {d}");
    }
    let report = estimate_temvip_all(data, &nuisances, est.pi_floor, fdr)?;
    match out {
        Some(path) => {
            let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
            bio::write_temvip(BufWriter::new(f), &report, &loaded.covariate_names)
        }
        None => bio::write_temvip(io::stdout().lock(), &report, &loaded.covariate_names),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            profile,
            threads,
            out,
            quiet,
        } => run(&config, profile, threads, out, quiet),
        Command::Report { input, format } => report(&input, format).map(|_| true),
        Command::Simulate { dgp, n, seed, out, p } => simulate(dgp, n, seed, &out, p).map(|_| true),
        Command::Temvip {
            input,
            mode,
            propensity,
            fdr,
            seed,
            profile,
            out,
        } => temvip(&input, mode, propensity, fdr, seed, profile, out.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
