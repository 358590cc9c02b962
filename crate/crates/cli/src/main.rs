use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use eqc::binary::{FitOptions, ScalingMode};
use eqc::data::{load_dense_csv, Dataset};
use eqc::dtm::load_sparse_dtm;
use eqc::error::{EqcError, Result};
use eqc::experiment::{run_experiment, Classifier, ExperimentConfig};
use eqc::metalearner::SolverConfig;
use eqc::model_io::{load_model, save_model};
use eqc::scenario::{generate, Family, ScenarioSpec};
use eqc::selection::{log_grid, misclassification_rate, TuningGrid};
use eqc::selftest::run_selftest;

/// Ensemble quantile classifiers: simulate, fit, predict and benchmark.
#[derive(Parser, Debug)]
#[command(name = "eqc", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic location-shift dataset.
    Simulate(SimulateArgs),
    /// Tune and fit a classifier, then write the model file.
    Fit(FitArgs),
    /// Predict classes for a dataset with a saved model.
    Predict(PredictArgs),
    /// Run a benchmark described by a config file.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    T3,
    Lognormal,
    Heterogeneous,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::T3 => Family::T3,
            FamilyArg::Lognormal => Family::LogNormal,
            FamilyArg::Heterogeneous => Family::Heterogeneous,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Training sample size.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    /// Fraction of noise variables, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Location shift; the family default when omitted.
    #[arg(long)]
    delta: Option<f64>,
    /// Correlate variables through a Gaussian copula.
    #[arg(long)]
    dependent: bool,
    #[arg(long, default_value_t = 0.5)]
    beta_shape: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training set CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional test set CSV.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dense CSV with a leading `label` column.
    #[arg(long, conflicts_with_all = ["dtm_matrix", "dtm_labels"])]
    data: Option<PathBuf>,
    /// Sparse document-term matrix (`doc term count` triples).
    #[arg(long, requires = "dtm_labels")]
    dtm_matrix: Option<PathBuf>,
    #[arg(long, requires = "dtm_matrix")]
    dtm_labels: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match (&self.data, &self.dtm_matrix, &self.dtm_labels) {
            (Some(d), _, _) => load_dense_csv(d),
            (None, Some(m), Some(l)) => Ok(load_sparse_dtm(m, l)?.densify()),
            _ => Err(EqcError::Domain("give --data or --dtm-matrix with --dtm-labels".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScalingArg {
    None,
    Robust,
    Standard,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: DataArgs,
    /// QC, MC, EMC, EQC-ridge, EQC-lasso, EQC-hinge, EQC-logistic or multiclass-EQC.
    #[arg(long, default_value = "EQC-ridge")]
    classifier: String,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    theta_grid: Option<Vec<f64>>,
    /// Comma-separated penalty values.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value = "none")]
    scaling: ScalingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    /// Predictions CSV (`row,label,predicted`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment config (flat `key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EqcError::Experiment(format!("cannot start worker pool: {e}")))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = ScenarioSpec::new(a.family.into(), a.n, a.p, a.noise);
    spec.delta = a.delta.unwrap_or(spec.delta);
    spec.dependent = a.dependent;
    spec.beta_shape = a.beta_shape;
    spec.seed = a.seed;
    let g = generate(&spec, a.n_test.max(2))?;
    g.train.save_csv(&a.out)?;
    if let Some(t) = &a.test_out {
        g.test.save_csv(t)?;
    }
    info!("wrote {} training rows with {} informative variables", g.train.n(), spec.n_informative());
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let data = a.input.load()?;
    let classifier: Classifier = a.classifier.parse()?;
    let mut grid = TuningGrid { folds: a.folds, seed: a.seed, ..TuningGrid::default() };
    if let Some(t) = &a.theta_grid {
        grid.theta_grid = t.clone();
    }
    grid.alpha_grid = match &a.alpha_grid {
        Some(v) => v.clone(),
        None => log_grid(1e-4, 1e2, 15),
    };
    let options = FitOptions {
        solver: SolverConfig::default(),
        scaling: match a.scaling {
            ScalingArg::None => ScalingMode::None,
            ScalingArg::Robust => ScalingMode::Robust,
            ScalingArg::Standard => ScalingMode::Standard,
        },
    };
    let model = thread_pool(a.threads)?.install(|| classifier.train(&data, &grid, &options))?;
    save_model(&model, &a.out)?;
    let pred = model.predict_dataset(&data)?;
    eprintln!(
        "{classifier}: theta = {}, penalty = {}, training error = {:.4}",
        model.theta().values().first().copied().unwrap_or(f64::NAN),
        model.penalty().map_or("none".to_string(), |v| v.to_string()),
        misclassification_rate(&pred, data.labels())?
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = a.input.load()?;
    let pred = model.predict_dataset(&data)?;
    let mut s = String::from("row,label,predicted\n");
    for (i, (l, p)) in data.labels().iter().zip(&pred).enumerate() {
        writeln!(s, "{},{l},{p}", i + 1).expect("write to string");
    }
    fs::write(&a.out, s).map_err(|e| EqcError::Io { path: a.out.display().to_string(), source: e })?;
    info!("error against the label column: {:.4}", misclassification_rate(&pred, data.labels())?);
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(default_out(&a.config));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let report = run_experiment(&cfg)?;
    print!("{}", report.table_csv());
    eprintln!("reports written to {}", cfg.out_dir.as_ref().expect("set above").display());
    Ok(())
}

fn default_out(config: &Path) -> PathBuf {
    config.with_extension("out")
}

fn selftest(a: &SelftestArgs) -> Result<bool> {
    let mut all = true;
    for c in run_selftest(a.seed) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Fit(a) => fit(a).map(|_| true),
        Command::Predict(a) => predict(a).map(|_| true),
        Command::Bench(a) => bench(a).map(|_| true),
        Command::Selftest(a) => selftest(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
