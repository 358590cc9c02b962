//! Binary discriminants (QC, MC, EQC) and the fitted-model bundle shared
//! with the multiclass classifier.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};
use crate::metalearner::{
    self, fit_linear_svm, fit_logistic, fit_penalized_logistic_from, softplus, Coefficients, PenaltyKind,
    PenaltySpec, SolverConfig, SolverReport,
};
use crate::multiclass::{self, MulticlassCoefficients};
use crate::quantile::{constant_columns, estimate_quantile_table, transform_matrix, transform_rows_into, QuantileParams, QuantileTable};

/// How the transformed features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetalearnerKind {
    Ridge,
    Lasso,
    Hinge,
    Logistic,
    /// `β_0 = 0, β = 1`: the plain quantile classifier.
    UnitWeights,
    MulticlassRidge,
}

impl MetalearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            MetalearnerKind::Ridge => "ridge",
            MetalearnerKind::Lasso => "lasso",
            MetalearnerKind::Hinge => "hinge",
            MetalearnerKind::Logistic => "unregularized-logistic",
            MetalearnerKind::UnitWeights => "unit-weights",
            MetalearnerKind::MulticlassRidge => "multiclass-ridge",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "ridge" => MetalearnerKind::Ridge,
            "lasso" => MetalearnerKind::Lasso,
            "hinge" => MetalearnerKind::Hinge,
            "unregularized-logistic" | "logistic" => MetalearnerKind::Logistic,
            "unit-weights" => MetalearnerKind::UnitWeights,
            "multiclass-ridge" => MetalearnerKind::MulticlassRidge,
            _ => return None,
        })
    }

    /// Whether the kind takes a penalty value from the tuning grid.
    pub fn is_penalized(self) -> bool {
        matches!(
            self,
            MetalearnerKind::Ridge | MetalearnerKind::Lasso | MetalearnerKind::Hinge | MetalearnerKind::MulticlassRidge
        )
    }

    /// True when a larger penalty value means stronger regularization.
    pub(crate) fn larger_is_stronger(self) -> bool {
        !matches!(self, MetalearnerKind::Hinge)
    }
}

/// Binary metalearner choice with its penalty value, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learner {
    Penalized(PenaltySpec),
    Logistic,
    UnitWeights,
}

impl Learner {
    pub fn kind(&self) -> MetalearnerKind {
        match self {
            Learner::Penalized(p) => match p.kind() {
                PenaltyKind::Ridge => MetalearnerKind::Ridge,
                PenaltyKind::Lasso => MetalearnerKind::Lasso,
                PenaltyKind::Hinge => MetalearnerKind::Hinge,
            },
            Learner::Logistic => MetalearnerKind::Logistic,
            Learner::UnitWeights => MetalearnerKind::UnitWeights,
        }
    }

    pub fn penalty_value(&self) -> Option<f64> {
        match self {
            Learner::Penalized(p) => Some(p.value()),
            _ => None,
        }
    }

    /// Builds a learner of `kind`; `value` is required for penalized kinds.
    pub fn from_kind(kind: MetalearnerKind, value: Option<f64>) -> Result<Self> {
        let need = |v: Option<f64>| v.ok_or_else(|| domain!("{} needs a penalty value", kind.name()));
        Ok(match kind {
            MetalearnerKind::Ridge => Learner::Penalized(PenaltySpec::ridge(need(value)?)?),
            MetalearnerKind::Lasso => Learner::Penalized(PenaltySpec::lasso(need(value)?)?),
            MetalearnerKind::Hinge => Learner::Penalized(PenaltySpec::hinge(need(value)?)?),
            MetalearnerKind::Logistic => Learner::Logistic,
            MetalearnerKind::UnitWeights => Learner::UnitWeights,
            MetalearnerKind::MulticlassRidge => {
                return Err(domain!("multiclass-ridge is not a binary metalearner"))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalingMode {
    #[default]
    None,
    /// Median and MAD.
    Robust,
    /// Mean and standard deviation.
    Standard,
}

/// Per-variable `(x - center) / scale`, estimated on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn new(center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if center.len() != scale.len() {
            return Err(EqcError::Dimension("scaling center/scale lengths differ".into()));
        }
        if scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) || center.iter().any(|c| !c.is_finite()) {
            return Err(domain!("scaling needs finite centers and positive scales"));
        }
        Ok(Scaling { center, scale })
    }

    pub fn estimate(x: ArrayView2<'_, f64>, mode: ScalingMode) -> Option<Scaling> {
        let fallback = |s: f64| if s.is_finite() && s > 0.0 { s } else { 1.0 };
        match mode {
            ScalingMode::None => None,
            ScalingMode::Standard => {
                let n = x.nrows() as f64;
                let center: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
                let scale = x
                    .columns()
                    .into_iter()
                    .zip(&center)
                    .map(|(c, m)| fallback((c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()))
                    .collect();
                Some(Scaling { center, scale })
            }
            ScalingMode::Robust => {
                let mut center = Vec::with_capacity(x.ncols());
                let mut scale = Vec::with_capacity(x.ncols());
                for col in x.columns() {
                    let mut v = col.to_vec();
                    v.sort_by(f64::total_cmp);
                    let med = crate::quantile::quantile_of_sorted(&v, 0.5);
                    let mut dev: Vec<f64> = v.iter().map(|a| (a - med).abs()).collect();
                    dev.sort_by(f64::total_cmp);
                    let mad = 1.4826 * crate::quantile::quantile_of_sorted(&dev, 0.5);
                    center.push(med);
                    scale.push(fallback(mad));
                }
                Some(Scaling { center, scale })
            }
        }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.center[j]) / self.scale[j];
            }
        }
        out
    }

    fn apply_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().enumerate().map(|(j, v)| (v - self.center[j]) / self.scale[j]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelCoefficients {
    Binary(Coefficients),
    Multiclass(MulticlassCoefficients),
}

/// A frozen classifier: quantile levels, quantile table, metalearner
/// coefficients and optional input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEqc {
    pub(crate) table: QuantileTable,
    pub(crate) coef: ModelCoefficients,
    pub(crate) kind: MetalearnerKind,
    pub(crate) penalty: Option<f64>,
    pub(crate) scaling: Option<Scaling>,
    pub(crate) report: Option<SolverReport>,
}

impl FittedEqc {
    pub fn new(
        table: QuantileTable,
        coef: ModelCoefficients,
        kind: MetalearnerKind,
        penalty: Option<f64>,
        scaling: Option<Scaling>,
    ) -> Result<Self> {
        let p = table.p();
        match &coef {
            ModelCoefficients::Binary(c) => {
                if table.n_classes() != 2 {
                    return Err(domain!("binary coefficients need a two-class table"));
                }
                if c.weights.len() != p {
                    return Err(EqcError::Dimension(format!("{} weights for {p} variables", c.weights.len())));
                }
            }
            ModelCoefficients::Multiclass(c) => {
                if c.weights.len() != p || c.intercepts.len() + 1 != table.n_classes() {
                    return Err(EqcError::Dimension("multiclass coefficients do not match the table".into()));
                }
            }
        }
        if let Some(s) = &scaling {
            if s.center.len() != p {
                return Err(EqcError::Dimension("scaling length differs from p".into()));
            }
        }
        Ok(FittedEqc { table, coef, kind, penalty, scaling, report: None })
    }

    pub fn theta(&self) -> &QuantileParams {
        self.table.theta()
    }

    pub fn table(&self) -> &QuantileTable {
        &self.table
    }

    pub fn coefficients(&self) -> &ModelCoefficients {
        &self.coef
    }

    pub fn binary_coefficients(&self) -> Option<&Coefficients> {
        match &self.coef {
            ModelCoefficients::Binary(c) => Some(c),
            _ => None,
        }
    }

    pub fn kind(&self) -> MetalearnerKind {
        self.kind
    }

    pub fn penalty(&self) -> Option<f64> {
        self.penalty
    }

    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    pub fn report(&self) -> Option<&SolverReport> {
        self.report.as_ref()
    }

    pub fn class_ids(&self) -> &[usize] {
        self.table.class_ids()
    }

    pub fn p(&self) -> usize {
        self.table.p()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.p() {
            return Err(EqcError::Dimension(format!("input has {len} variables, model has {}", self.p())));
        }
        Ok(())
    }

    fn scaled_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.scaling {
            Some(s) => s.apply_row(x),
            None => x.to_owned(),
        }
    }

    /// Class predicted for one observation.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        match &self.coef {
            ModelCoefficients::Binary(_) => {
                let s = eqc_discriminant(x, self)?;
                Ok(self.table.class_ids()[usize::from(s > 0.0)])
            }
            ModelCoefficients::Multiclass(_) => multiclass::predict_multiclass(x, self),
        }
    }

    pub fn predict_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.check_dim(x.ncols())?;
        match &self.coef {
            ModelCoefficients::Binary(_) => Ok(self
                .binary_decisions(x)?
                .into_iter()
                .map(|s| self.table.class_ids()[usize::from(s > 0.0)])
                .collect()),
            ModelCoefficients::Multiclass(_) => x.outer_iter().map(|r| self.predict(r)).collect(),
        }
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<usize>> {
        self.predict_matrix(data.x().view())
    }

    /// Binary discriminant values for every row of `x`.
    pub fn binary_decisions(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x.ncols())?;
        let coef = self
            .binary_coefficients()
            .ok_or_else(|| domain!("model is not binary"))?;
        let scaled;
        let x = match &self.scaling {
            Some(s) => {
                scaled = s.apply(x);
                scaled.view()
            }
            None => x,
        };
        let mut buf = vec![0.0; self.p()];
        Ok(x
            .outer_iter()
            .map(|row| {
                transform_rows_into(row, &self.table, 0, 1, &mut buf);
                coef.intercept + buf.iter().zip(&coef.weights).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }
}

fn require_binary(table: &QuantileTable) -> Result<()> {
    if table.n_classes() != 2 {
        return Err(domain!("binary discriminant needs exactly 2 classes, table has {}", table.n_classes()));
    }
    Ok(())
}

/// Quantile classifier discriminant `Σ_j Q_j(x)`; class 1 when `≤ 0`.
pub fn qc_discriminant(x: ArrayView1<'_, f64>, table: &QuantileTable) -> Result<f64> {
    require_binary(table)?;
    if x.len() != table.p() {
        return Err(EqcError::Dimension(format!("input has {} variables, table has {}", x.len(), table.p())));
    }
    let mut buf = vec![0.0; x.len()];
    transform_rows_into(x, table, 0, 1, &mut buf);
    Ok(buf.iter().sum())
}

/// Median classifier discriminant `Σ_j (|x_j - m_1j| - |x_j - m_2j|) / 2`,
/// reading the medians from the table rows.
pub fn mc_discriminant(x: ArrayView1<'_, f64>, medians: &QuantileTable) -> Result<f64> {
    require_binary(medians)?;
    if x.len() != medians.p() {
        return Err(EqcError::Dimension(format!("input has {} variables, table has {}", x.len(), medians.p())));
    }
    let q = medians.q();
    Ok((0..x.len())
        .map(|j| ((x[j] - q[[0, j]]).abs() - (x[j] - q[[1, j]]).abs()) / 2.0)
        .sum())
}

/// EQC discriminant `β_0 + Σ_j β_j Q_j(x)` after optional scaling.
pub fn eqc_discriminant(x: ArrayView1<'_, f64>, model: &FittedEqc) -> Result<f64> {
    model.check_dim(x.len())?;
    let coef = model
        .binary_coefficients()
        .ok_or_else(|| domain!("model is not binary"))?;
    let x = model.scaled_row(x);
    let mut buf = vec![0.0; x.len()];
    transform_rows_into(x.view(), &model.table, 0, 1, &mut buf);
    Ok(coef.intercept + buf.iter().zip(&coef.weights).map(|(a, b)| a * b).sum::<f64>())
}

/// Labels mapped to `1` (first class of the table) and `2` (second).
pub(crate) fn binary_labels(labels: &[usize], class_ids: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l == class_ids[0] {
                Ok(1)
            } else if l == class_ids[1] {
                Ok(2)
            } else {
                Err(domain!("label {l} is not one of the model classes {class_ids:?}"))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub solver: SolverConfig,
    pub scaling: ScalingMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { solver: SolverConfig::default(), scaling: ScalingMode::None }
    }
}

/// Fits the metalearner on transformed features, dropping columns that are
/// constant on `z` (their weights are reported as 0).
pub(crate) fn fit_features(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    learner: &Learner,
    config: &SolverConfig,
    init: Option<&Coefficients>,
) -> Result<(Coefficients, Option<SolverReport>)> {
    let p = z.ncols();
    if let Learner::UnitWeights = learner {
        return Ok((Coefficients { intercept: 0.0, weights: vec![1.0; p] }, None));
    }
    let keep: Vec<usize> = constant_columns(z)
        .iter()
        .enumerate()
        .filter_map(|(j, &c)| (!c).then_some(j))
        .collect();
    let zk = if keep.len() == p { None } else { Some(z.select(Axis(1), &keep)) };
    let zv = zk.as_ref().map(|a| a.view()).unwrap_or(z);
    let init_k = init.map(|c| Coefficients {
        intercept: c.intercept,
        weights: keep.iter().map(|&j| c.weights[j]).collect(),
    });
    let (ck, report) = match learner {
        Learner::Penalized(pen) if pen.kind() == PenaltyKind::Hinge => fit_linear_svm(zv, y, pen.value(), config)?,
        Learner::Penalized(pen) => fit_penalized_logistic_from(zv, y, pen, config, init_k.as_ref())?,
        Learner::Logistic => fit_logistic(zv, y, config)?,
        Learner::UnitWeights => unreachable!(),
    };
    let mut weights = vec![0.0; p];
    for (w, &j) in ck.weights.iter().zip(&keep) {
        weights[j] = *w;
    }
    Ok((Coefficients { intercept: ck.intercept, weights }, Some(report)))
}

/// Fits a binary EQC with a given penalty: quantile table on `train`,
/// transform, then the metalearner.
pub fn fit_binary_eqc(
    train: &Dataset,
    theta: &QuantileParams,
    penalty: &PenaltySpec,
    config: &SolverConfig,
) -> Result<FittedEqc> {
    let opts = FitOptions { solver: config.clone(), ..FitOptions::default() };
    fit_binary_eqc_with(train, theta, &Learner::Penalized(*penalty), &opts)
}

/// Binary EQC with any metalearner and fitting options.
pub fn fit_binary_eqc_with(
    train: &Dataset,
    theta: &QuantileParams,
    learner: &Learner,
    options: &FitOptions,
) -> Result<FittedEqc> {
    let ids = train.class_ids();
    if ids.len() != 2 {
        return Err(EqcError::Fit(format!("binary EQC needs exactly two classes, found {}", ids.len())));
    }
    if theta.len() != train.p() {
        return Err(EqcError::Dimension(format!("{} quantile levels for {} variables", theta.len(), train.p())));
    }
    let scaling = Scaling::estimate(train.x().view(), options.scaling);
    let scaled;
    let data = match &scaling {
        Some(s) => {
            scaled = Dataset::with_names(s.apply(train.x().view()), train.labels().to_vec(), train.names().to_vec())?;
            &scaled
        }
        None => train,
    };
    let table = estimate_quantile_table(data, theta)?;
    let z = transform_matrix(data.x().view(), &table, ids[0], ids[1])?;
    let y = binary_labels(data.labels(), &ids)?;
    let (coef, report) = fit_features(z.view(), &y, learner, &options.solver, None)?;
    let mut model = FittedEqc::new(table, ModelCoefficients::Binary(coef), learner.kind(), learner.penalty_value(), scaling)?;
    model.report = report;
    Ok(model)
}

/// Unpenalized mean binomial loss of the model's discriminant on `data`.
pub fn empirical_loss(model: &FittedEqc, data: &Dataset) -> Result<f64> {
    let y = binary_labels(data.labels(), model.class_ids())?;
    let s = model.binary_decisions(data.x().view())?;
    Ok(s.iter()
        .zip(&y)
        .map(|(&c, &yi)| softplus(c) - (yi - 1) as f64 * c)
        .sum::<f64>()
        / y.len() as f64)
}

/// A two-class data-generating distribution with class priors.
pub trait Population {
    /// Number of variables.
    fn p(&self) -> usize;
    /// Prior probabilities of the two classes.
    fn priors(&self) -> (f64, f64);
    /// Draws `n` observations of class `class` (1 or 2).
    fn sample_class(&self, class: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64>;

    /// Draws `n` labeled observations, labels drawn from the priors.
    fn sample_mixture(&self, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        use rand::Rng;
        let (pi1, _) = self.priors();
        let labels: Vec<usize> = (0..n).map(|_| if rng.random::<f64>() < pi1 { 1 } else { 2 }).collect();
        let n1 = labels.iter().filter(|&&l| l == 1).count();
        let x1 = self.sample_class(1, n1, rng);
        let x2 = self.sample_class(2, n - n1, rng);
        let mut x = Array2::zeros((n, self.p()));
        let (mut a, mut b) = (0, 0);
        for (i, &l) in labels.iter().enumerate() {
            if l == 1 {
                x.row_mut(i).assign(&x1.row(a));
                a += 1;
            } else {
                x.row_mut(i).assign(&x2.row(b));
                b += 1;
            }
        }
        Dataset::new(x, labels).expect("population samples are finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationLossEstimate {
    pub value: f64,
    pub mc_standard_error: f64,
    pub sample_size: usize,
}

/// Monte Carlo estimate of the population binomial loss of a binary model.
/// Class `1` of the population is the model's first class.
pub fn estimate_population_loss(
    model: &FittedEqc,
    population: &dyn Population,
    mc_samples: usize,
    seed: u64,
) -> Result<PopulationLossEstimate> {
    if mc_samples == 0 {
        return Err(domain!("need at least one Monte Carlo sample"));
    }
    if population.p() != model.p() {
        return Err(EqcError::Dimension("population and model dimensions differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = population.sample_mixture(mc_samples, &mut rng);
    let s = model.binary_decisions(sample.x().view())?;
    let terms: Vec<f64> = s
        .iter()
        .zip(sample.labels())
        .map(|(&c, &yi)| softplus(c) - (yi - 1) as f64 * c)
        .collect();
    let m = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / m;
    let var = if terms.len() > 1 {
        terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(PopulationLossEstimate { value: mean, mc_standard_error: (var / m).sqrt(), sample_size: terms.len() })
}

/// Mean regularized loss used by tests to cross-check [`empirical_loss`].
#[doc(hidden)]
pub fn penalized_training_loss(model: &FittedEqc, data: &Dataset, penalty: &PenaltySpec) -> Result<f64> {
    let coef = model.binary_coefficients().ok_or_else(|| domain!("model is not binary"))?;
    let x = match &model.scaling {
        Some(s) => s.apply(data.x().view()),
        None => data.x().clone(),
    };
    let ids = model.class_ids();
    let z = transform_matrix(x.view(), &model.table, ids[0], ids[1])?;
    let y = binary_labels(data.labels(), ids)?;
    metalearner::binomial_loss(coef, penalty, z.view(), &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn toy(seed: u64, n: usize, p: usize, shift: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| 1 + i % 2).collect();
        let x = Array2::from_shape_fn((n, p), |(i, j)| {
            let e: f64 = -rng.random::<f64>().ln();
            e + if labels[i] == 2 && j % 2 == 0 { shift } else { 0.0 }
        });
        Dataset::new(x, labels).unwrap()
    }

    fn two_row_table(q1: Vec<f64>, q2: Vec<f64>, theta: f64) -> QuantileTable {
        let p = q1.len();
        let mut q = Array2::zeros((2, p));
        q.row_mut(0).assign(&Array1::from(q1));
        q.row_mut(1).assign(&Array1::from(q2));
        QuantileTable::new(q, QuantileParams::common(theta, p).unwrap(), vec![1, 2]).unwrap()
    }

    #[test]
    fn qc_examples() {
        let t = two_row_table(vec![0.0], vec![2.0], 0.5);
        assert_eq!(qc_discriminant(array![1.5].view(), &t).unwrap(), 0.5);
        let t = two_row_table(vec![1.0, -2.0], vec![1.0, -2.0], 0.3);
        assert_eq!(qc_discriminant(array![1.0, -2.0].view(), &t).unwrap(), 0.0);
        let three = QuantileTable::new(Array2::zeros((3, 1)), QuantileParams::common(0.5, 1).unwrap(), vec![1, 2, 3]).unwrap();
        assert!(qc_discriminant(array![0.0].view(), &three).is_err());
    }

    #[test]
    fn tie_goes_to_first_class() {
        let t = two_row_table(vec![1.0, -2.0], vec![1.0, -2.0], 0.3);
        let m = FittedEqc::new(t, ModelCoefficients::Binary(Coefficients { intercept: 0.0, weights: vec![1.0, 1.0] }), MetalearnerKind::UnitWeights, None, None).unwrap();
        assert_eq!(m.predict(array![5.0, 5.0].view()).unwrap(), 1);
    }

    #[test]
    fn reduction_chain_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q1: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let q2: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let t = two_row_table(q1.clone(), q2.clone(), 0.5);
        let m = FittedEqc::new(t.clone(), ModelCoefficients::Binary(Coefficients { intercept: 0.0, weights: vec![1.0; 5] }), MetalearnerKind::UnitWeights, None, None).unwrap();
        for _ in 0..100 {
            let x = Array1::from_iter((0..5).map(|_| rng.random::<f64>() * 10.0 - 5.0));
            let qc = qc_discriminant(x.view(), &t).unwrap();
            assert_eq!(qc.to_bits(), eqc_discriminant(x.view(), &m).unwrap().to_bits());
            assert_eq!(qc.to_bits(), mc_discriminant(x.view(), &t).unwrap().to_bits());
        }
    }

    #[test]
    fn zero_weights_give_constant_intercept() {
        let t = two_row_table(vec![0.0, 1.0], vec![2.0, 3.0], 0.4);
        let m = FittedEqc::new(t, ModelCoefficients::Binary(Coefficients { intercept: -0.7, weights: vec![0.0; 2] }), MetalearnerKind::Ridge, Some(1.0), None).unwrap();
        for x in [array![0.0, 0.0], array![100.0, -3.0]] {
            assert_eq!(eqc_discriminant(x.view(), &m).unwrap(), -0.7);
        }
        assert!(eqc_discriminant(array![1.0].view(), &m).is_err());
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let d = toy(2, 60, 3, 1.0);
        let mut x = d.x().clone();
        x.column_mut(1).fill(4.0);
        let d = Dataset::new(x, d.labels().to_vec()).unwrap();
        let m = fit_binary_eqc(&d, &QuantileParams::common(0.5, 3).unwrap(), &PenaltySpec::ridge(0.01).unwrap(), &SolverConfig::default()).unwrap();
        assert_eq!(m.binary_coefficients().unwrap().weights[1], 0.0);
    }

    #[test]
    fn mirrored_classes_give_zero_intercept() {
        let base = toy(3, 40, 2, 0.0);
        let n = base.n();
        let mut x = Array2::zeros((2 * n, 2));
        let mut labels = Vec::new();
        for i in 0..n {
            x.row_mut(i).assign(&base.row(i));
            x.row_mut(n + i).assign(&base.row(i).mapv(|v| -v));
            labels.push(1);
        }
        labels.extend(std::iter::repeat(2).take(n));
        let d = Dataset::new(x, labels).unwrap();
        let m = fit_binary_eqc(&d, &QuantileParams::common(0.5, 2).unwrap(), &PenaltySpec::ridge(0.1).unwrap(), &SolverConfig::default()).unwrap();
        assert!(m.binary_coefficients().unwrap().intercept.abs() < 1e-6);
    }

    #[test]
    fn location_shift_leaves_predictions_unchanged() {
        let d = toy(4, 80, 4, 0.8);
        let test = toy(5, 50, 4, 0.8);
        let theta = QuantileParams::common(0.3, 4).unwrap();
        let pen = PenaltySpec::ridge(0.05).unwrap();
        let m = fit_binary_eqc(&d, &theta, &pen, &SolverConfig::default()).unwrap();
        let shift = |ds: &Dataset| {
            let mut x = ds.x().clone();
            x.column_mut(2).mapv_inplace(|v| v + 7.25);
            Dataset::new(x, ds.labels().to_vec()).unwrap()
        };
        let m2 = fit_binary_eqc(&shift(&d), &theta, &pen, &SolverConfig::default()).unwrap();
        assert_eq!(m.predict_dataset(&test).unwrap(), m2.predict_dataset(&shift(&test)).unwrap());
    }

    #[test]
    fn empirical_loss_cross_checks() {
        let d = toy(6, 60, 3, 1.0);
        let theta = QuantileParams::common(0.4, 3).unwrap();
        let lambda = 1e-3;
        let pen = PenaltySpec::ridge(lambda).unwrap();
        let m = fit_binary_eqc(&d, &theta, &pen, &SolverConfig::default()).unwrap();
        let loss = empirical_loss(&m, &d).unwrap();
        let reg = penalized_training_loss(&m, &d, &pen).unwrap();
        let c = m.binary_coefficients().unwrap();
        let pen_term = lambda / 2.0 * c.weights.iter().map(|w| w * w).sum::<f64>();
        assert!((reg - pen_term - loss).abs() < 1e-12);
        assert!(loss <= std::f64::consts::LN_2);
        let zero = FittedEqc::new(m.table().clone(), ModelCoefficients::Binary(Coefficients::zeros(3)), MetalearnerKind::Ridge, None, None).unwrap();
        assert!((empirical_loss(&zero, &d).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn scaling_is_recorded_and_applied() {
        let d = toy(7, 60, 3, 1.0);
        let opts = FitOptions { scaling: ScalingMode::Robust, ..FitOptions::default() };
        let m = fit_binary_eqc_with(&d, &QuantileParams::common(0.5, 3).unwrap(), &Learner::Penalized(PenaltySpec::ridge(0.1).unwrap()), &opts).unwrap();
        let s = m.scaling().unwrap();
        assert_eq!(s.center.len(), 3);
        assert!(s.scale.iter().all(|&v| v > 0.0));
        let preds = m.predict_dataset(&d).unwrap();
        for i in 0..5 {
            assert_eq!(preds[i], m.predict(d.row(i)).unwrap());
        }
    }
}
