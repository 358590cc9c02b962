//! Cross-validated tuning of `(θ, α)` over a grid, then a refit on all data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binary::{
    binary_labels, fit_binary_eqc_with, fit_features, FitOptions, FittedEqc, Learner, MetalearnerKind, ModelCoefficients,
    Scaling,
};
use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};
use crate::metalearner::Coefficients;
use crate::multiclass::{fit_design, fit_multiclass_eqc_with, predict_design, MulticlassCoefficients, MulticlassDesign};
use crate::quantile::{estimate_quantile_table, transform_matrix, QuantileParams, SortedColumns};

/// The tuning sets for `θ` (common across variables) and the penalty `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub theta_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub folds: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for TuningGrid {
    /// `θ ∈ {0.05, …, 0.95}`, 15 log-spaced `α` in `[1e-4, 1e2]`, 5 stratified folds.
    fn default() -> Self {
        TuningGrid {
            theta_grid: (1..=19).map(|i| i as f64 * 0.05).collect(),
            alpha_grid: log_grid(1e-4, 1e2, 15),
            folds: 5,
            stratified: true,
            seed: 0,
        }
    }
}

/// `m` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..m).map(|i| 10f64.powf(a + (b - a) * i as f64 / (m - 1) as f64)).collect()
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        if self.theta_grid.is_empty() || self.alpha_grid.is_empty() {
            return Err(domain!("tuning grids must be non-empty"));
        }
        if let Some(t) = self.theta_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(domain!("theta grid value {t} is outside (0, 1)"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(domain!("alpha grid value {a} must be positive"));
        }
        if self.folds < 2 {
            return Err(domain!("need at least 2 folds, got {}", self.folds));
        }
        Ok(())
    }
}

/// Error of one `(θ, α)` cell on one fold. `alpha` is `None` for
/// metalearners without a penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldError {
    pub theta: f64,
    pub alpha: Option<f64>,
    pub fold: usize,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvCell {
    pub theta: f64,
    pub alpha: Option<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Mean misclassification per cell, in `(θ, α)` grid order.
    pub table: Vec<CvCell>,
    pub chosen: (f64, Option<f64>),
    pub per_fold: Vec<FoldError>,
    /// Folds left out of the averages, with the reason.
    pub skipped_folds: Vec<(usize, String)>,
}

impl CvResult {
    pub fn chosen_cell(&self) -> &CvCell {
        self.table
            .iter()
            .find(|c| c.theta == self.chosen.0 && c.alpha == self.chosen.1)
            .expect("chosen cell is in the table")
    }

    /// One line per fold and cell: `theta,alpha,fold,error`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("theta,alpha,fold,error\n");
        for e in &self.per_fold {
            let alpha = e.alpha.map_or_else(|| "NA".to_string(), |a| a.to_string());
            writeln!(out, "{},{},{},{}", e.theta, alpha, e.fold + 1, e.error).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| EqcError::io(path, e))
    }
}

/// Zero-based fold of each observation.
pub fn make_folds(labels: &[usize], t: usize, stratified: bool, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if t < 2 {
        return Err(domain!("need at least 2 folds, got {t}"));
    }
    if t > n {
        return Err(domain!("{t} folds for {n} observations"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];
    let groups: Vec<Vec<usize>> = if stratified {
        let mut ids = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.iter()
            .map(|&k| (0..n).filter(|&i| labels[i] == k).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    // Round robin continues across groups so fold sizes differ by at most one.
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[i] = next;
            next = (next + 1) % t;
        }
    }
    Ok(folds)
}

pub fn misclassification_rate(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(domain!("{} predictions for {} labels", predictions.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(domain!("misclassification rate of an empty set"));
    }
    let wrong = predictions.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Penalty values in fitting order, strongest regularization first so each
/// fit warm-starts the next.
fn alpha_path(kind: MetalearnerKind, grid: &[f64]) -> Vec<Option<f64>> {
    if !kind.is_penalized() {
        return vec![None];
    }
    let mut a = grid.to_vec();
    a.sort_by(f64::total_cmp);
    a.dedup();
    if kind.larger_is_stronger() {
        a.reverse();
    }
    a.into_iter().map(Some).collect()
}

/// Unit weights and zero intercepts: the nearest-class rule in quantile distance.
fn unit_multiclass(p: usize, n_classes: usize) -> MulticlassCoefficients {
    MulticlassCoefficients { weights: vec![1.0; p], intercepts: vec![0.0; n_classes - 1] }
}

/// Errors for one fold and one `θ` over the whole `α` path.
fn fold_theta_errors(
    train: &Dataset,
    test: &Dataset,
    sorted: &SortedColumns,
    ids: &[usize],
    theta: f64,
    path: &[Option<f64>],
    kind: MetalearnerKind,
    options: &FitOptions,
) -> Result<Vec<f64>> {
    let table = sorted.table(&QuantileParams::common(theta, train.p())?)?;
    let mut errors = Vec::with_capacity(path.len());
    if kind == MetalearnerKind::MulticlassRidge {
        let d_train = MulticlassDesign::new(train.x().view(), &table, train.labels())?;
        let d_test = MulticlassDesign::new(test.x().view(), &table, test.labels())?;
        let mut init: Option<MulticlassCoefficients> = None;
        for alpha in path {
            let (coef, _) = fit_design(&d_train, alpha.expect("penalized"), &options.solver, init.as_ref())?;
            let pred = predict_design(&d_test, &coef);
            errors.push(misclassification_rate(&pred, d_test.class_index())?);
            init = Some(coef);
        }
        return Ok(errors);
    }
    if ids.len() > 2 {
        let d_test = MulticlassDesign::new(test.x().view(), &table, test.labels())?;
        let pred = predict_design(&d_test, &unit_multiclass(train.p(), ids.len()));
        return Ok(vec![misclassification_rate(&pred, d_test.class_index())?]);
    }
    let z_train = transform_matrix(train.x().view(), &table, ids[0], ids[1])?;
    let z_test = transform_matrix(test.x().view(), &table, ids[0], ids[1])?;
    let y_train = binary_labels(train.labels(), ids)?;
    let y_test = binary_labels(test.labels(), ids)?;
    let mut init: Option<Coefficients> = None;
    for alpha in path {
        let learner = Learner::from_kind(kind, *alpha)?;
        let (coef, _) = fit_features(z_train.view(), &y_train, &learner, &options.solver, init.as_ref())?;
        let pred: Vec<usize> = z_test.outer_iter().map(|z| 1 + usize::from(coef.decision(z) > 0.0)).collect();
        errors.push(misclassification_rate(&pred, &y_test)?);
        init = Some(coef);
    }
    Ok(errors)
}

struct FoldData {
    train: Dataset,
    test: Dataset,
    sorted: SortedColumns,
}

/// Runs the cross-validation grid and returns per-fold errors without refitting.
pub fn cross_validate(
    data: &Dataset,
    grid: &TuningGrid,
    kind: MetalearnerKind,
    options: &FitOptions,
) -> Result<CvResult> {
    grid.validate()?;
    let ids = data.class_ids();
    if ids.len() < 2 {
        return Err(EqcError::Tuning(format!("need at least two classes, found {}", ids.len())));
    }
    if ids.len() > 2 && !matches!(kind, MetalearnerKind::MulticlassRidge | MetalearnerKind::UnitWeights) {
        return Err(EqcError::Tuning(format!("{} is binary but the data have {} classes", kind.name(), ids.len())));
    }
    let assignment = make_folds(data.labels(), grid.folds, grid.stratified, grid.seed)?;

    let mut skipped = Vec::new();
    let mut fold_data: Vec<(usize, FoldData)> = Vec::new();
    for t in 0..grid.folds {
        let test_rows: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] == t).collect();
        let train_rows: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] != t).collect();
        let mut train = data.subset(&train_rows);
        let mut test = data.subset(&test_rows);
        let missing: Vec<usize> = ids.iter().copied().filter(|k| !train.labels().contains(k)).collect();
        if test_rows.is_empty() || !missing.is_empty() {
            let reason = if test_rows.is_empty() {
                "empty test fold".to_string()
            } else {
                format!("training part lacks classes {missing:?}")
            };
            warn!("skipping fold {}: {reason}", t + 1);
            skipped.push((t, reason));
            continue;
        }
        if let Some(s) = Scaling::estimate(train.x().view(), options.scaling) {
            train = Dataset::with_names(s.apply(train.x().view()), train.labels().to_vec(), train.names().to_vec())?;
            test = Dataset::with_names(s.apply(test.x().view()), test.labels().to_vec(), test.names().to_vec())?;
        }
        let sorted = SortedColumns::new(&train, &ids)?;
        fold_data.push((t, FoldData { train, test, sorted }));
    }
    if fold_data.is_empty() {
        return Err(EqcError::Tuning("every fold was skipped".into()));
    }

    let path = alpha_path(kind, &grid.alpha_grid);
    let tasks: Vec<(usize, usize)> = (0..fold_data.len())
        .flat_map(|f| (0..grid.theta_grid.len()).map(move |h| (f, h)))
        .collect();
    let results: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(f, h)| {
            let fd = &fold_data[f].1;
            fold_theta_errors(&fd.train, &fd.test, &fd.sorted, &ids, grid.theta_grid[h], &path, kind, options)
        })
        .collect::<Result<_>>()?;

    // Cells in grid order: θ outer, α inner (grid order, not path order).
    let alphas: Vec<Option<f64>> = if kind.is_penalized() {
        grid.alpha_grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let path_pos = |a: Option<f64>| path.iter().position(|&x| x == a).expect("alpha on path");
    let mut per_fold = Vec::new();
    let mut table = Vec::new();
    for (h, &theta) in grid.theta_grid.iter().enumerate() {
        for &alpha in &alphas {
            let mut sum = 0.0;
            for (f, (t, _)) in fold_data.iter().enumerate() {
                let error = results[f * grid.theta_grid.len() + h][path_pos(alpha)];
                sum += error;
                per_fold.push(FoldError { theta, alpha, fold: *t, error });
            }
            table.push(CvCell { theta, alpha, mean_error: sum / fold_data.len() as f64 });
        }
    }
    let chosen = choose(&table, kind);
    Ok(CvResult { table, chosen, per_fold, skipped_folds: skipped })
}

/// Smallest mean error; ties go to stronger regularization, then to `θ`
/// closer to 0.5, then to grid order.
fn choose(table: &[CvCell], kind: MetalearnerKind) -> (f64, Option<f64>) {
    const TIE: f64 = 1e-12;
    let strength = |a: Option<f64>| match a {
        Some(v) if kind.larger_is_stronger() => v,
        Some(v) => -v,
        None => 0.0,
    };
    let mut best = &table[0];
    for c in &table[1..] {
        let better = if c.mean_error < best.mean_error - TIE {
            true
        } else if (c.mean_error - best.mean_error).abs() <= TIE {
            let (sc, sb) = (strength(c.alpha), strength(best.alpha));
            if sc != sb {
                sc > sb
            } else {
                (c.theta - 0.5).abs() < (best.theta - 0.5).abs()
            }
        } else {
            false
        };
        if better {
            best = c;
        }
    }
    (best.theta, best.alpha)
}

/// Fits with fixed `(θ, α)` on all of `data`.
pub fn fit_with_kind(
    data: &Dataset,
    theta: &QuantileParams,
    kind: MetalearnerKind,
    alpha: Option<f64>,
    options: &FitOptions,
) -> Result<FittedEqc> {
    match kind {
        MetalearnerKind::MulticlassRidge => {
            let lambda = alpha.ok_or_else(|| domain!("multiclass-ridge needs a penalty value"))?;
            fit_multiclass_eqc_with(data, theta, lambda, options)
        }
        MetalearnerKind::UnitWeights if data.class_ids().len() > 2 => {
            let scaling = Scaling::estimate(data.x().view(), options.scaling);
            let table = match &scaling {
                Some(s) => estimate_quantile_table(
                    &Dataset::with_names(s.apply(data.x().view()), data.labels().to_vec(), data.names().to_vec())?,
                    theta,
                )?,
                None => estimate_quantile_table(data, theta)?,
            };
            let coef = ModelCoefficients::Multiclass(unit_multiclass(data.p(), table.n_classes()));
            FittedEqc::new(table, coef, kind, None, scaling)
        }
        _ => fit_binary_eqc_with(data, theta, &Learner::from_kind(kind, alpha)?, options),
    }
}

/// Cross-validates the grid, then refits on all of `train` with the chosen cell.
pub fn tune_and_train(train: &Dataset, grid: &TuningGrid, kind: MetalearnerKind) -> Result<(FittedEqc, CvResult)> {
    tune_and_train_with(train, grid, kind, &FitOptions::default())
}

pub fn tune_and_train_with(
    train: &Dataset,
    grid: &TuningGrid,
    kind: MetalearnerKind,
    options: &FitOptions,
) -> Result<(FittedEqc, CvResult)> {
    let cv = cross_validate(train, grid, kind, options)?;
    let (theta, alpha) = cv.chosen;
    let model = fit_with_kind(train, &QuantileParams::common(theta, train.p())?, kind, alpha, options)?;
    Ok((model, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearner::SolverConfig;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, StudentT};

    fn t3_data(seed: u64, n_per: usize, p: usize, shift: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t3 = StudentT::new(3.0).unwrap();
        let labels: Vec<usize> = (0..2 * n_per).map(|i| 1 + i % 2).collect();
        let x = Array2::from_shape_fn((2 * n_per, p), |(i, _)| {
            t3.sample(&mut rng) / 3f64.sqrt() + if labels[i] == 2 { shift } else { 0.0 }
        });
        Dataset::new(x, labels).unwrap()
    }

    #[test]
    fn balanced_stratified_folds() {
        let labels = vec![1, 2, 1, 2, 1, 2, 1, 2, 1, 2];
        let f = make_folds(&labels, 5, true, 3).unwrap();
        for t in 0..5 {
            let members: Vec<usize> = (0..10).filter(|&i| f[i] == t).map(|i| labels[i]).collect();
            assert_eq!(members.len(), 2);
            assert!(members.contains(&1) && members.contains(&2));
        }
        assert_eq!(f, make_folds(&labels, 5, true, 3).unwrap());
        assert!(make_folds(&labels, 11, true, 3).is_err());
    }

    #[test]
    fn stratified_proportions_within_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..103).map(|_| rng.random_range(1..4)).collect();
        let f = make_folds(&labels, 7, true, 9).unwrap();
        for k in 1..4 {
            let counts: Vec<usize> = (0..7).map(|t| (0..103).filter(|&i| f[i] == t && labels[i] == k).count()).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
        }
        let u = make_folds(&labels, 7, false, 9).unwrap();
        assert!(u.iter().all(|&t| t < 7));
    }

    #[test]
    fn misclassification_examples() {
        assert_eq!(misclassification_rate(&[1, 2, 1, 2], &[1, 1, 1, 2]).unwrap(), 0.25);
        assert_eq!(misclassification_rate(&[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(misclassification_rate(&[1, 2, 2], &[2, 1, 1]).unwrap(), 1.0);
        assert!(misclassification_rate(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn grid_validation() {
        let mut g = TuningGrid::default();
        assert_eq!(g.theta_grid.len(), 19);
        assert_eq!(g.alpha_grid.len(), 15);
        assert!((g.alpha_grid[0] - 1e-4).abs() < 1e-18 && (g.alpha_grid[14] - 100.0).abs() < 1e-12);
        g.validate().unwrap();
        g.theta_grid.push(1.0);
        assert!(g.validate().is_err());
    }

    #[test]
    fn single_cell_grid_is_a_direct_fit() {
        let d = t3_data(2, 40, 3, 1.0);
        let grid = TuningGrid { theta_grid: vec![0.4], alpha_grid: vec![0.01], ..TuningGrid::default() };
        let (m, cv) = tune_and_train(&d, &grid, MetalearnerKind::Ridge).unwrap();
        assert_eq!(cv.table.len(), 1);
        assert_eq!(cv.chosen, (0.4, Some(0.01)));
        let direct = fit_with_kind(&d, &QuantileParams::common(0.4, 3).unwrap(), MetalearnerKind::Ridge, Some(0.01), &FitOptions::default()).unwrap();
        assert_eq!(m.coefficients(), direct.coefficients());
        let csv = cv.to_csv_string();
        assert!(csv.starts_with("theta,alpha,fold,error\n"));
        assert_eq!(csv.lines().count(), 1 + 5);
    }

    #[test]
    fn chosen_cell_attains_minimum_and_is_deterministic() {
        let d = t3_data(3, 40, 4, 0.8);
        let grid = TuningGrid { theta_grid: vec![0.2, 0.5, 0.8], alpha_grid: vec![1e-3, 1e-1, 10.0], seed: 5, ..TuningGrid::default() };
        for kind in [MetalearnerKind::Ridge, MetalearnerKind::Lasso, MetalearnerKind::Hinge, MetalearnerKind::UnitWeights, MetalearnerKind::MulticlassRidge] {
            let a = cross_validate(&d, &grid, kind, &FitOptions::default()).unwrap();
            let b = cross_validate(&d, &grid, kind, &FitOptions::default()).unwrap();
            assert_eq!(a, b);
            let min = a.table.iter().map(|c| c.mean_error).fold(f64::INFINITY, f64::min);
            assert!((a.chosen_cell().mean_error - min).abs() <= 1e-12);
            assert!(a.per_fold.iter().all(|e| (0.0..=1.0).contains(&e.error)));
        }
    }

    #[test]
    fn ties_prefer_stronger_regularization_then_central_theta() {
        let cell = |theta, alpha, e| CvCell { theta, alpha: Some(alpha), mean_error: e };
        let t = vec![cell(0.3, 0.1, 0.2), cell(0.3, 1.0, 0.2), cell(0.5, 1.0, 0.2), cell(0.7, 1.0, 0.3)];
        assert_eq!(choose(&t, MetalearnerKind::Ridge), (0.5, Some(1.0)));
        assert_eq!(choose(&t, MetalearnerKind::Hinge), (0.3, Some(0.1)));
        let u = vec![CvCell { theta: 0.45, alpha: None, mean_error: 0.1 }, CvCell { theta: 0.55, alpha: None, mean_error: 0.1 }];
        assert_eq!(choose(&u, MetalearnerKind::UnitWeights).0, 0.45);
    }

    #[test]
    fn test_fold_labels_do_not_leak() {
        let d = t3_data(4, 30, 3, 1.0);
        let grid = TuningGrid { theta_grid: vec![0.3, 0.5], alpha_grid: vec![0.01, 1.0], folds: 3, seed: 11, ..TuningGrid::default() };
        let folds = make_folds(d.labels(), 3, true, 11).unwrap();
        let ids = d.class_ids();
        // Per-fold models fitted on S \ S_t must not change when labels in S_t change.
        for t in 0..3 {
            let train_rows: Vec<usize> = (0..d.n()).filter(|&i| folds[i] != t).collect();
            let mut corrupted = d.labels().to_vec();
            for i in 0..d.n() {
                if folds[i] == t {
                    corrupted[i] = 3 - corrupted[i];
                }
            }
            let dc = d.with_labels(corrupted).unwrap();
            let fit = |data: &Dataset| {
                let tr = data.subset(&train_rows);
                let sorted = SortedColumns::new(&tr, &ids).unwrap();
                let table = sorted.table(&QuantileParams::common(0.3, 3).unwrap()).unwrap();
                let z = transform_matrix(tr.x().view(), &table, 1, 2).unwrap();
                let y = binary_labels(tr.labels(), &ids).unwrap();
                fit_features(z.view(), &y, &Learner::from_kind(MetalearnerKind::Ridge, Some(0.01)).unwrap(), &SolverConfig::default(), None).unwrap().0
            };
            assert_eq!(fit(&d), fit(&dc));
        }
        let a = cross_validate(&d, &grid, MetalearnerKind::Ridge, &FitOptions::default()).unwrap();
        assert_eq!(a.per_fold.len(), 2 * 2 * 3);
    }

    #[test]
    fn skipped_folds_are_recorded() {
        // Class 2 has a single member, so the fold holding it trains without class 2.
        let mut labels = vec![1; 12];
        labels[5] = 2;
        let x = Array2::from_shape_fn((12, 2), |(i, j)| (i * 3 + j) as f64);
        let d = Dataset::new(x, labels).unwrap();
        let grid = TuningGrid { theta_grid: vec![0.5], alpha_grid: vec![1.0], folds: 3, ..TuningGrid::default() };
        let cv = cross_validate(&d, &grid, MetalearnerKind::UnitWeights, &FitOptions::default()).unwrap();
        assert_eq!(cv.skipped_folds.len(), 1);
        assert!(cv.skipped_folds[0].1.contains("lacks classes [2]"));
        let pair = Dataset::new(Array2::zeros((2, 1)), vec![1, 2]).unwrap();
        let g2 = TuningGrid { folds: 2, ..grid };
        assert!(matches!(cross_validate(&pair, &g2, MetalearnerKind::UnitWeights, &FitOptions::default()), Err(EqcError::Tuning(_))));
    }

    #[test]
    fn qc_tuning_on_symmetric_t3_prefers_median() {
        let grid = TuningGrid { alpha_grid: vec![1.0], ..TuningGrid::default() };
        let seeds = 40;
        let mut hits = 0;
        for seed in 0..seeds {
            let d = t3_data(1000 + seed, 2000, 10, 0.3);
            let g = TuningGrid { seed, ..grid.clone() };
            let cv = cross_validate(&d, &g, MetalearnerKind::UnitWeights, &FitOptions::default()).unwrap();
            if (cv.chosen.0 - 0.5).abs() <= 0.05 + 1e-12 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.9 * seeds as f64, "{hits}/{seeds}");
    }

    #[test]
    fn multiclass_unit_weights_pick_the_nearest_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for k in 1..=3usize {
            for _ in 0..60 {
                for j in 0..4 {
                    let shift = if j == k - 1 { 2.0 } else { 0.0 };
                    x.push(rng.random::<f64>() - 0.5 + shift);
                }
                labels.push(k);
            }
        }
        let d = Dataset::new(Array2::from_shape_vec((180, 4), x).unwrap(), labels).unwrap();
        let grid = TuningGrid { theta_grid: vec![0.3, 0.5], ..TuningGrid::default() };
        let (model, cv) = tune_and_train(&d, &grid, MetalearnerKind::UnitWeights).unwrap();
        assert_eq!(cv.table.len(), 2);
        let pred = model.predict_dataset(&d).unwrap();
        assert!(misclassification_rate(&pred, d.labels()).unwrap() < 0.02);
        // Same rule written directly: smallest total quantile distance.
        let t = model.table();
        for i in 0..d.n() {
            let dist: Vec<f64> = (0..3)
                .map(|k| (0..4).map(|j| crate::quantile::rho(d.x()[[i, j]] - t.q()[[k, j]], t.theta().values()[j])).sum())
                .collect();
            let best = (0..3).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
            assert_eq!(pred[i], best + 1);
        }
        assert!(cross_validate(&d, &grid, MetalearnerKind::Lasso, &FitOptions::default()).is_err());
    }
}