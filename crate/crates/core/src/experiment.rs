//! Benchmark orchestration: repeated simulation or cross-validated dataset
//! runs over a set of classifiers, with long-format, summary, pivot and
//! sensitivity reports.
//!
//! Configuration is a flat `key = value` file; `#` starts a comment. See the
//! README for the full key list.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;

use crate::binary::{FitOptions, FittedEqc, MetalearnerKind, ScalingMode};
use crate::data::{load_dense_csv, Dataset};
use crate::dtm::load_sparse_dtm;
use crate::error::{domain, EqcError, Result};
use crate::fisher::{fisher_exact_select, Alternative};
use crate::metalearner::SolverConfig;
use crate::quantile::QuantileParams;
use crate::scenario::{generate, Family, ScenarioSpec};
use crate::seed::{derive_seed, derive_seed2};
use crate::selection::{fit_with_kind, make_folds, misclassification_rate, tune_and_train_with, TuningGrid};

/// Share of failed replications in any cell that aborts the run.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classifier {
    Qc,
    Mc,
    Emc,
    EqcRidge,
    EqcLasso,
    EqcHinge,
    EqcLogistic,
    MulticlassEqc,
}

impl Classifier {
    pub const ALL: [Classifier; 8] = [
        Classifier::Qc,
        Classifier::Mc,
        Classifier::Emc,
        Classifier::EqcRidge,
        Classifier::EqcLasso,
        Classifier::EqcHinge,
        Classifier::EqcLogistic,
        Classifier::MulticlassEqc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::Qc => "QC",
            Classifier::Mc => "MC",
            Classifier::Emc => "EMC",
            Classifier::EqcRidge => "EQC-ridge",
            Classifier::EqcLasso => "EQC-lasso",
            Classifier::EqcHinge => "EQC-hinge",
            Classifier::EqcLogistic => "EQC-logistic",
            Classifier::MulticlassEqc => "multiclass-EQC",
        }
    }

    /// Metalearner used for data with `n_classes` classes.
    pub fn kind(self, n_classes: usize) -> MetalearnerKind {
        match self {
            Classifier::Qc | Classifier::Mc => MetalearnerKind::UnitWeights,
            Classifier::Emc if n_classes > 2 => MetalearnerKind::MulticlassRidge,
            Classifier::Emc | Classifier::EqcRidge => MetalearnerKind::Ridge,
            Classifier::EqcLasso => MetalearnerKind::Lasso,
            Classifier::EqcHinge => MetalearnerKind::Hinge,
            Classifier::EqcLogistic => MetalearnerKind::Logistic,
            Classifier::MulticlassEqc => MetalearnerKind::MulticlassRidge,
        }
    }

    /// Median-based variants fix `θ = 0.5`.
    pub fn fixed_theta(self) -> Option<f64> {
        matches!(self, Classifier::Mc | Classifier::Emc).then_some(0.5)
    }

    pub fn supports(self, n_classes: usize) -> bool {
        n_classes == 2 || !matches!(self, Classifier::EqcRidge | Classifier::EqcLasso | Classifier::EqcHinge | Classifier::EqcLogistic)
    }

    /// Tunes on `train` (when anything is left to tune) and refits.
    pub fn train(self, train: &Dataset, grid: &TuningGrid, options: &FitOptions) -> Result<FittedEqc> {
        let k = train.class_ids().len();
        if !self.supports(k) {
            return Err(EqcError::Experiment(format!("{} needs two classes, data have {k}", self.name())));
        }
        let kind = self.kind(k);
        match self.fixed_theta() {
            Some(theta) if !kind.is_penalized() => {
                fit_with_kind(train, &QuantileParams::common(theta, train.p())?, kind, None, options)
            }
            Some(theta) => {
                let g = TuningGrid { theta_grid: vec![theta], ..grid.clone() };
                Ok(tune_and_train_with(train, &g, kind, options)?.0)
            }
            None => Ok(tune_and_train_with(train, grid, kind, options)?.0),
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Classifier {
    type Err = EqcError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('/', "-");
        Ok(match norm.as_str() {
            "qc" => Classifier::Qc,
            "mc" => Classifier::Mc,
            "emc" => Classifier::Emc,
            "eqc-ridge" => Classifier::EqcRidge,
            "eqc-lasso" => Classifier::EqcLasso,
            "eqc-hinge" | "eqc-lsvm" => Classifier::EqcHinge,
            "eqc-logistic" => Classifier::EqcLogistic,
            "multiclass-eqc" => Classifier::MulticlassEqc,
            _ => return Err(domain!("unknown classifier `{s}`")),
        })
    }
}

/// Column filter fitted on each training set only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FeatureSelection {
    #[default]
    None,
    Fisher { l: usize, alternative: Alternative },
    /// Keep variables non-zero in at least `min_docs` training rows.
    LowFrequency { min_docs: usize },
}

impl FeatureSelection {
    /// Selected column indices, from training data alone.
    pub fn select(&self, train: &Dataset) -> Result<Option<Vec<usize>>> {
        match *self {
            FeatureSelection::None => Ok(None),
            FeatureSelection::Fisher { l, alternative } => {
                let mut cols = fisher_exact_select(train, l, alternative)?;
                cols.sort_unstable();
                Ok(Some(cols))
            }
            FeatureSelection::LowFrequency { min_docs } => {
                let cols: Vec<usize> = (0..train.p())
                    .filter(|&j| train.x().column(j).iter().filter(|&&v| v != 0.0).count() >= min_docs)
                    .collect();
                if cols.is_empty() {
                    return Err(EqcError::Data(format!("no variable is non-zero in {min_docs} training rows")));
                }
                Ok(Some(cols))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataInput {
    Dense(PathBuf),
    Sparse { matrix: PathBuf, labels: PathBuf },
}

impl DataInput {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataInput::Dense(p) => load_dense_csv(p),
            DataInput::Sparse { matrix, labels } => Ok(load_sparse_dtm(matrix, labels)?.densify()),
        }
    }

    fn stem(&self) -> String {
        let p = match self {
            DataInput::Dense(p) => p,
            DataInput::Sparse { matrix, .. } => matrix,
        };
        p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh training and test samples per replication.
    Simulation { scenarios: Vec<ScenarioSpec> },
    /// Fixed data; a held-out test set, or `repeats × folds` cross-validation.
    Dataset { train: DataInput, test: Option<DataInput>, repeats: usize, folds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub classifiers: Vec<Classifier>,
    pub replications: usize,
    pub test_size: usize,
    pub grid: TuningGrid,
    pub source: DataSource,
    pub feature_selection: FeatureSelection,
    pub scaling: ScalingMode,
    pub solver: SolverConfig,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub name: Option<String>,
    pub class_names: Option<Vec<String>>,
}

impl ExperimentConfig {
    /// A simulation run of `spec` with the default grid.
    pub fn simulation(spec: ScenarioSpec, classifiers: Vec<Classifier>, replications: usize, test_size: usize) -> Self {
        ExperimentConfig {
            classifiers,
            replications,
            test_size,
            grid: TuningGrid::default(),
            source: DataSource::Simulation { scenarios: vec![spec] },
            feature_selection: FeatureSelection::None,
            scaling: ScalingMode::None,
            solver: SolverConfig::default(),
            out_dir: None,
            seed: 0,
            threads: 0,
            name: None,
            class_names: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() {
            return Err(EqcError::Experiment("no classifiers configured".into()));
        }
        if self.replications < 1 {
            return Err(EqcError::Experiment("replications must be at least 1".into()));
        }
        self.grid.validate()?;
        match &self.source {
            DataSource::Simulation { scenarios } => {
                if scenarios.is_empty() {
                    return Err(EqcError::Experiment("no scenarios configured".into()));
                }
                for s in scenarios {
                    s.validate()?;
                }
                if self.test_size < 2 {
                    return Err(EqcError::Experiment("test_size must be at least 2".into()));
                }
            }
            DataSource::Dataset { test, repeats, folds, .. } => {
                if test.is_none() && (*repeats < 1 || *folds < 2) {
                    return Err(EqcError::Experiment("dataset mode needs repeats >= 1 and outer_folds >= 2".into()));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EqcError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text; relative paths resolve against the file's directory.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let kv = KeyValues::parse(text, path)?;
        let mut cfg = ExperimentConfig::simulation(ScenarioSpec::new(Family::T3, 100, 50, 0.0), vec![], 1, 10_000);
        cfg.classifiers = match kv.get("classifiers") {
            Some(v) => kv.list(v, |s| s.parse::<Classifier>())?,
            None => return Err(EqcError::parse(path, 1, "missing key `classifiers`")),
        };
        if let Some(v) = kv.get("replications") {
            cfg.replications = kv.one(v)?;
        }
        if let Some(v) = kv.get("test_size") {
            cfg.test_size = kv.one(v)?;
        }
        if let Some(v) = kv.get("seed") {
            cfg.seed = kv.one(v)?;
        }
        if let Some(v) = kv.get("threads") {
            cfg.threads = kv.one(v)?;
        }
        if let Some(v) = kv.get("out") {
            cfg.out_dir = Some(base.join(v.value));
        }
        if let Some(v) = kv.get("name") {
            cfg.name = Some(v.value.to_string());
        }
        if let Some(v) = kv.get("class_names") {
            cfg.class_names = Some(kv.list(v, |s| Ok(s.to_string()))?);
        }
        if let Some(v) = kv.get("scaling") {
            cfg.scaling = match v.value {
                "none" => ScalingMode::None,
                "robust" => ScalingMode::Robust,
                "standard" => ScalingMode::Standard,
                other => return Err(kv.err(v, format!("unknown scaling `{other}`"))),
            };
        }
        if let Some(v) = kv.get("solver_tol") {
            cfg.solver.tol = kv.one(v)?;
        }
        if let Some(v) = kv.get("solver_max_iter") {
            cfg.solver.max_iter = kv.one(v)?;
        }

        let grid = &mut cfg.grid;
        if let Some(v) = kv.get("theta_grid") {
            grid.theta_grid = kv.float_list(v)?;
        }
        if let Some(v) = kv.get("alpha_grid") {
            grid.alpha_grid = kv.float_list(v)?;
        } else if kv.get("alpha_min").is_some() || kv.get("alpha_max").is_some() || kv.get("alpha_count").is_some() {
            let lo = kv.get("alpha_min").map(|v| kv.one(v)).transpose()?.unwrap_or(1e-4);
            let hi = kv.get("alpha_max").map(|v| kv.one(v)).transpose()?.unwrap_or(1e2);
            let m = kv.get("alpha_count").map(|v| kv.one(v)).transpose()?.unwrap_or(15);
            grid.alpha_grid = crate::selection::log_grid(lo, hi, m);
        }
        if let Some(v) = kv.get("cv_folds") {
            grid.folds = kv.one(v)?;
        }
        if let Some(v) = kv.get("stratified") {
            grid.stratified = kv.boolean(v)?;
        }

        cfg.feature_selection = match kv.get("feature_selection").map(|v| (v, v.value)) {
            None | Some((_, "none")) => FeatureSelection::None,
            Some((_, "fisher")) => {
                let l = match kv.get("fisher_l") {
                    Some(v) => kv.one(v)?,
                    None => return Err(EqcError::parse(path, 1, "feature_selection = fisher needs `fisher_l`")),
                };
                let alternative = match kv.get("fisher_alternative") {
                    Some(v) => v.value.parse().map_err(|e: EqcError| kv.err(v, e.to_string()))?,
                    None => Alternative::TwoSided,
                };
                FeatureSelection::Fisher { l, alternative }
            }
            Some((_, "low-frequency")) => {
                let min_docs = kv.get("min_docs").map(|v| kv.one(v)).transpose()?.unwrap_or(2);
                FeatureSelection::LowFrequency { min_docs }
            }
            Some((v, other)) => return Err(kv.err(v, format!("unknown feature selection `{other}`"))),
        };

        let mode = kv.get("mode").map(|v| v.value).unwrap_or("simulation");
        cfg.source = match mode {
            "simulation" => DataSource::Simulation { scenarios: scenarios_from(&kv)? },
            "dataset" => {
                let input = |dense: &str, matrix: &str, labels: &str| -> Result<Option<DataInput>> {
                    match (kv.get(dense), kv.get(matrix), kv.get(labels)) {
                        (Some(d), None, None) => Ok(Some(DataInput::Dense(base.join(d.value)))),
                        (None, Some(m), Some(l)) => {
                            Ok(Some(DataInput::Sparse { matrix: base.join(m.value), labels: base.join(l.value) }))
                        }
                        (None, None, None) => Ok(None),
                        _ => Err(EqcError::parse(path, 1, format!("give either `{dense}` or both `{matrix}` and `{labels}`"))),
                    }
                };
                let train = input("data", "dtm_matrix", "dtm_labels")?
                    .ok_or_else(|| EqcError::parse(path, 1, "dataset mode needs `data` or `dtm_matrix`/`dtm_labels`"))?;
                let test = input("test_data", "test_dtm_matrix", "test_dtm_labels")?;
                let repeats = kv.get("repeats").map(|v| kv.one(v)).transpose()?.unwrap_or(5);
                let folds = kv.get("outer_folds").map(|v| kv.one(v)).transpose()?.unwrap_or(10);
                DataSource::Dataset { train, test, repeats, folds }
            }
            other => return Err(kv.err(kv.get("mode").expect("present"), format!("unknown mode `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "mode", "classifiers", "replications", "test_size", "seed", "threads", "out", "name", "class_names",
    "scaling", "solver_tol", "solver_max_iter", "theta_grid", "alpha_grid", "alpha_min", "alpha_max",
    "alpha_count", "cv_folds", "stratified", "feature_selection", "fisher_l", "fisher_alternative", "min_docs",
    "family", "n_train", "p", "noise", "delta", "dependent", "beta_shape", "data", "dtm_matrix", "dtm_labels",
    "test_data", "test_dtm_matrix", "test_dtm_labels", "repeats", "outer_folds",
];

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

struct KeyValues<'a> {
    path: &'a Path,
    map: HashMap<&'a str, Entry<'a>>,
}

impl<'a> KeyValues<'a> {
    fn parse(text: &'a str, path: &'a Path) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EqcError::parse(path, idx + 1, format!("expected `key = value`, found `{line}`")))?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(EqcError::parse(path, idx + 1, format!("unknown key `{k}`")));
            }
            if map.insert(k, Entry { value: v.trim(), line: idx + 1 }).is_some() {
                return Err(EqcError::parse(path, idx + 1, format!("duplicate key `{k}`")));
            }
        }
        Ok(KeyValues { path, map })
    }

    fn get(&self, key: &str) -> Option<&Entry<'a>> {
        self.map.get(key)
    }

    fn err(&self, e: &Entry<'_>, msg: impl Into<String>) -> EqcError {
        EqcError::parse(self.path, e.line, msg)
    }

    fn one<T: FromStr>(&self, e: &Entry<'_>) -> Result<T> {
        e.value.parse().map_err(|_| self.err(e, format!("invalid value `{}`", e.value)))
    }

    fn boolean(&self, e: &Entry<'_>) -> Result<bool> {
        parse_bool(e.value).ok_or_else(|| self.err(e, format!("invalid boolean `{}`", e.value)))
    }

    fn list<T>(&self, e: &Entry<'_>, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| f(s).map_err(|err| self.err(e, err.to_string())))
            .collect()
    }

    /// Comma list, or `lo:hi:step` for an inclusive arithmetic range.
    fn float_list(&self, e: &Entry<'_>) -> Result<Vec<f64>> {
        let parts: Vec<&str> = e.value.split(':').map(str::trim).collect();
        if parts.len() == 3 {
            let nums: Vec<f64> = parts
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| self.err(e, format!("invalid range `{}`", e.value))))
                .collect::<Result<_>>()?;
            let (lo, hi, step) = (nums[0], nums[1], nums[2]);
            if !(step > 0.0) || hi < lo {
                return Err(self.err(e, format!("invalid range `{}`", e.value)));
            }
            let m = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            return Ok((0..m).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect());
        }
        self.list(e, |s| s.parse::<f64>().map_err(|_| domain!("invalid number `{s}`")))
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Cartesian product of the scenario keys, each of which may be a list.
fn scenarios_from(kv: &KeyValues<'_>) -> Result<Vec<ScenarioSpec>> {
    let families = match kv.get("family") {
        Some(v) => kv.list(v, |s| s.parse::<Family>())?,
        None => vec![Family::T3],
    };
    let ns: Vec<usize> = match kv.get("n_train") {
        Some(v) => kv.list(v, |s| s.parse().map_err(|_| domain!("invalid count `{s}`")))?,
        None => vec![100],
    };
    let ps: Vec<usize> = match kv.get("p") {
        Some(v) => kv.list(v, |s| s.parse().map_err(|_| domain!("invalid count `{s}`")))?,
        None => vec![50],
    };
    let noises = match kv.get("noise") {
        Some(v) => kv.float_list(v)?,
        None => vec![0.0],
    };
    let deps = match kv.get("dependent") {
        Some(v) => kv.list(v, |s| parse_bool(s).ok_or_else(|| domain!("invalid boolean `{s}`")))?,
        None => vec![false],
    };
    let delta: Option<f64> = match kv.get("delta") {
        Some(v) if v.value == "default" => None,
        Some(v) => Some(kv.one(v)?),
        None => None,
    };
    let beta_shape: f64 = kv.get("beta_shape").map(|v| kv.one(v)).transpose()?.unwrap_or(0.5);
    let mut out = Vec::new();
    for &family in &families {
        for &dependent in &deps {
            for &n_train in &ns {
                for &noise in &noises {
                    for &p in &ps {
                        let mut s = ScenarioSpec::new(family, n_train, p, noise);
                        s.delta = delta.unwrap_or(family.default_delta());
                        s.dependent = dependent;
                        s.beta_shape = beta_shape;
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Label of a simulation scenario, e.g. `t3_n100_p50_noise0`.
pub fn scenario_label(s: &ScenarioSpec) -> String {
    let mut l = format!("{}_n{}_p{}_noise{}", s.family, s.n_train, s.p, (s.noise_fraction * 100.0).round());
    if s.dependent {
        l.push_str("_dep");
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub classifier: Classifier,
    /// 1-based.
    pub replication: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub scenario: String,
    pub classifier: Classifier,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub classifier: Classifier,
    pub replications: usize,
    pub failures: usize,
    pub mean: f64,
    pub se: f64,
}

/// Pooled per-class recall over all replications of a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub scenario: String,
    pub classifier: Classifier,
    pub test_error: f64,
    pub classes: Vec<usize>,
    pub sensitivity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub results: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    pub summary: Vec<SummaryRow>,
    pub sensitivities: Vec<SensitivityRow>,
    /// Whether tables show percentages (simulation) or fractions (datasets).
    pub percent: bool,
}

/// Per-class recall; a class absent from `truth` gets `NaN`.
pub fn sensitivities(predictions: &[usize], truth: &[usize], classes: &[usize]) -> Vec<f64> {
    let (hits, totals) = class_hits(predictions, truth, classes);
    hits.iter().zip(&totals).map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 }).collect()
}

fn class_hits(predictions: &[usize], truth: &[usize], classes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut hits = vec![0; classes.len()];
    let mut totals = vec![0; classes.len()];
    for (p, t) in predictions.iter().zip(truth) {
        if let Some(k) = classes.iter().position(|c| c == t) {
            totals[k] += 1;
            if p == t {
                hits[k] += 1;
            }
        }
    }
    (hits, totals)
}

/// Mean and standard error `sd / √n` (two-pass).
pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `"27.1(0.3)"` for percentages, `"0.034(0.010)"` for fractions.
pub fn format_cell(mean: f64, se: f64, percent: bool) -> String {
    if percent {
        format!("{:.1}({:.1})", 100.0 * mean, 100.0 * se)
    } else {
        format!("{mean:.3}({se:.3})")
    }
}

/// One train/test evaluation: outcome per classifier.
struct Unit {
    scenario: usize,
    replication: usize,
    outcomes: Vec<std::result::Result<Evaluation, String>>,
}

struct Evaluation {
    error: f64,
    hits: Vec<usize>,
    totals: Vec<usize>,
}

fn evaluate(
    classifier: Classifier,
    train: &Dataset,
    test: &Dataset,
    classes: &[usize],
    cfg: &ExperimentConfig,
    grid_seed: u64,
) -> Result<Evaluation> {
    let (train, test) = match cfg.feature_selection.select(train)? {
        Some(cols) => (train.select_columns(&cols), test.select_columns(&cols)),
        None => (train.clone(), test.clone()),
    };
    let grid = TuningGrid { seed: grid_seed, ..cfg.grid.clone() };
    let options = FitOptions { solver: cfg.solver.clone(), scaling: cfg.scaling };
    let model = classifier.train(&train, &grid, &options)?;
    let pred = model.predict_dataset(&test)?;
    let (hits, totals) = class_hits(&pred, test.labels(), classes);
    Ok(Evaluation { error: misclassification_rate(&pred, test.labels())?, hits, totals })
}

fn run_unit(cfg: &ExperimentConfig, scenario: usize, replication: usize, train: &Dataset, test: &Dataset, classes: &[usize], seed: u64) -> Unit {
    let outcomes = cfg
        .classifiers
        .iter()
        .map(|&c| evaluate(c, train, test, classes, cfg, derive_seed(seed, 1)).map_err(|e| e.to_string()))
        .collect();
    Unit { scenario, replication, outcomes }
}

fn failed_unit(cfg: &ExperimentConfig, scenario: usize, replication: usize, msg: String) -> Unit {
    Unit { scenario, replication, outcomes: cfg.classifiers.iter().map(|_| Err(msg.clone())).collect() }
}

/// Runs every replication of every scenario and classifier; writes the
/// report files when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| EqcError::Experiment(format!("cannot start worker pool: {e}")))?;
    let (labels, classes, units, percent) = pool.install(|| collect_units(cfg))?;
    let report = assemble(cfg, &labels, &classes, units, percent)?;
    if let Some(dir) = &cfg.out_dir {
        write_report(&report, dir, cfg.class_names.as_deref())?;
    }
    abort_on_failures(&report)?;
    Ok(report)
}

type Collected = (Vec<String>, Vec<Vec<usize>>, Vec<Unit>, bool);

fn collect_units(cfg: &ExperimentConfig) -> Result<Collected> {
    match &cfg.source {
        DataSource::Simulation { scenarios } => {
            let labels: Vec<String> = scenarios.iter().map(scenario_label).collect();
            let tasks: Vec<(usize, usize)> =
                (0..scenarios.len()).flat_map(|s| (0..cfg.replications).map(move |r| (s, r))).collect();
            let units = tasks
                .par_iter()
                .map(|&(s, r)| {
                    let seed = derive_seed2(cfg.seed, s as u64, r as u64);
                    let spec = ScenarioSpec { seed: derive_seed(seed, 0), ..scenarios[s].clone() };
                    match generate(&spec, cfg.test_size) {
                        Ok(g) => run_unit(cfg, s, r, &g.train, &g.test, &[1, 2], seed),
                        Err(e) => failed_unit(cfg, s, r, e.to_string()),
                    }
                })
                .collect();
            Ok((labels, vec![vec![1, 2]; scenarios.len()], units, true))
        }
        DataSource::Dataset { train, test, repeats, folds } => {
            let data = train.load()?;
            let label = cfg.name.clone().unwrap_or_else(|| train.stem());
            if let Some(&c) = cfg.classifiers.iter().find(|c| !c.supports(data.class_ids().len())) {
                return Err(EqcError::Experiment(format!("{c} needs two classes, data have {}", data.class_ids().len())));
            }
            info!("{label}: {} rows, {} variables, classes {:?}", data.n(), data.p(), data.class_counts());
            let (units, classes) = match test {
                Some(t) => {
                    let test = t.load()?;
                    if test.p() != data.p() {
                        return Err(EqcError::Dimension(format!("train has {} variables, test has {}", data.p(), test.p())));
                    }
                    let mut classes = data.class_ids();
                    classes.extend(test.class_ids());
                    classes.sort_unstable();
                    classes.dedup();
                    (vec![run_unit(cfg, 0, 0, &data, &test, &classes, derive_seed(cfg.seed, 0))], classes)
                }
                None => {
                    let classes = data.class_ids();
                    let tasks: Vec<(usize, usize)> =
                        (0..*repeats).flat_map(|r| (0..*folds).map(move |f| (r, f))).collect();
                    let assignments: Vec<Vec<usize>> = (0..*repeats)
                        .map(|r| make_folds(data.labels(), *folds, true, derive_seed2(cfg.seed, 0, r as u64)))
                        .collect::<Result<_>>()?;
                    let units = tasks
                        .par_iter()
                        .map(|&(r, f)| {
                            let a = &assignments[r];
                            let test_rows: Vec<usize> = (0..data.n()).filter(|&i| a[i] == f).collect();
                            let train_rows: Vec<usize> = (0..data.n()).filter(|&i| a[i] != f).collect();
                            let seed = derive_seed2(cfg.seed, 1 + r as u64, f as u64);
                            run_unit(cfg, 0, r * folds + f, &data.subset(&train_rows), &data.subset(&test_rows), &classes, seed)
                        })
                        .collect();
                    (units, classes)
                }
            };
            Ok((vec![label], vec![classes], units, false))
        }
    }
}

fn assemble(cfg: &ExperimentConfig, labels: &[String], classes: &[Vec<usize>], units: Vec<Unit>, percent: bool) -> Result<ExperimentReport> {
    let mut report = ExperimentReport { percent, ..Default::default() };
    // (scenario, classifier) -> (errors, hits, totals)
    let mut cells: BTreeMap<(usize, usize), (Vec<f64>, Vec<usize>, Vec<usize>, usize)> = BTreeMap::new();
    for unit in &units {
        for (ci, outcome) in unit.outcomes.iter().enumerate() {
            let k = classes[unit.scenario].len();
            let cell = cells.entry((unit.scenario, ci)).or_insert_with(|| (Vec::new(), vec![0; k], vec![0; k], 0));
            let classifier = cfg.classifiers[ci];
            match outcome {
                Ok(ev) => {
                    cell.0.push(ev.error);
                    for j in 0..k {
                        cell.1[j] += ev.hits[j];
                        cell.2[j] += ev.totals[j];
                    }
                    report.results.push(ResultRow {
                        scenario: labels[unit.scenario].clone(),
                        classifier,
                        replication: unit.replication + 1,
                        error: ev.error,
                    });
                }
                Err(msg) => {
                    warn!("{} {classifier} replication {}: {msg}", labels[unit.scenario], unit.replication + 1);
                    cell.3 += 1;
                    report.failures.push(FailureRow {
                        scenario: labels[unit.scenario].clone(),
                        classifier,
                        replication: unit.replication + 1,
                        message: msg.clone(),
                    });
                }
            }
        }
    }
    for (&(s, ci), (errors, hits, totals, failures)) in &cells {
        let (mean, se) = mean_and_se(errors);
        let classifier = cfg.classifiers[ci];
        report.summary.push(SummaryRow {
            scenario: labels[s].clone(),
            classifier,
            replications: errors.len(),
            failures: *failures,
            mean,
            se,
        });
        report.sensitivities.push(SensitivityRow {
            scenario: labels[s].clone(),
            classifier,
            test_error: mean,
            classes: classes[s].clone(),
            sensitivity: hits
                .iter()
                .zip(totals)
                .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
                .collect(),
        });
    }
    Ok(report)
}

fn abort_on_failures(report: &ExperimentReport) -> Result<()> {
    for row in &report.summary {
        let total = row.replications + row.failures;
        if total > 0 && row.failures as f64 >= MAX_FAILURE_FRACTION * total as f64 {
            let first = report
                .failures
                .iter()
                .find(|f| f.scenario == row.scenario && f.classifier == row.classifier)
                .map(|f| f.message.as_str())
                .unwrap_or("");
            return Err(EqcError::Experiment(format!(
                "{} on {}: {} of {total} replications failed (first: {first})",
                row.classifier, row.scenario, row.failures
            )));
        }
    }
    Ok(())
}

impl ExperimentReport {
    pub fn results_csv(&self) -> String {
        let mut s = String::from("scenario,classifier,replication,error\n");
        for r in &self.results {
            writeln!(s, "{},{},{},{}", r.scenario, r.classifier, r.replication, r.error).unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("scenario,classifier,replications,failures,mean_error,se,formatted\n");
        for r in &self.summary {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.scenario,
                r.classifier,
                r.replications,
                r.failures,
                r.mean,
                r.se,
                format_cell(r.mean, r.se, self.percent)
            )
            .unwrap();
        }
        s
    }

    /// Classifiers down, scenarios across, `m(se)` cells.
    pub fn table_csv(&self) -> String {
        let mut scenarios: Vec<&str> = Vec::new();
        let mut classifiers: Vec<Classifier> = Vec::new();
        for r in &self.summary {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
            if !classifiers.contains(&r.classifier) {
                classifiers.push(r.classifier);
            }
        }
        let mut s = String::from("classifier");
        for sc in &scenarios {
            write!(s, ",{sc}").unwrap();
        }
        s.push('\n');
        for c in classifiers {
            s.push_str(c.name());
            for sc in &scenarios {
                let cell = self
                    .summary
                    .iter()
                    .find(|r| r.classifier == c && r.scenario == *sc)
                    .map(|r| format_cell(r.mean, r.se, self.percent))
                    .unwrap_or_default();
                write!(s, ",{cell}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Test error then per-class sensitivity; `class_names[k - 1]` names class `k`.
    pub fn sensitivities_csv(&self, class_names: Option<&[String]>) -> String {
        let mut s = String::new();
        let mut header: Option<&[usize]> = None;
        for r in &self.sensitivities {
            if header != Some(&r.classes) {
                s.push_str("scenario,classifier,test_error");
                for &k in &r.classes {
                    match class_names.and_then(|n| n.get(k - 1)) {
                        Some(name) => write!(s, ",{name}").unwrap(),
                        None => write!(s, ",class{k}").unwrap(),
                    }
                }
                s.push('\n');
                header = Some(&r.classes);
            }
            write!(s, "{},{},{:.3}", r.scenario, r.classifier, r.test_error).unwrap();
            for v in &r.sensitivity {
                if v.is_nan() {
                    s.push_str(",NA");
                } else {
                    write!(s, ",{v:.3}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("scenario,classifier,replication,message\n");
        for f in &self.failures {
            writeln!(s, "{},{},{},\"{}\"", f.scenario, f.classifier, f.replication, f.message.replace('"', "'")).unwrap();
        }
        s
    }
}

fn write_report(report: &ExperimentReport, dir: &Path, class_names: Option<&[String]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EqcError::io(dir, e))?;
    let files = [
        ("results.csv", report.results_csv()),
        ("summary.csv", report.summary_csv()),
        ("table.csv", report.table_csv()),
        ("sensitivities.csv", report.sensitivities_csv(class_names)),
        ("failures.csv", report.failures_csv()),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| EqcError::io(&p, e))?;
    }
    Ok(())
}
