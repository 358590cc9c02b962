//! Synthetic location-shift benchmarks: T3, LOGNORMAL and HETEROGENEOUS
//! variables, Gaussian noise columns and optional Gaussian-copula dependence.

use std::f64::consts::{E, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal, StudentT};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    T3,
    LogNormal,
    Heterogeneous,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::T3 => "t3",
            Family::LogNormal => "lognormal",
            Family::Heterogeneous => "heterogeneous",
        }
    }

    /// Shift that puts QC near 10% error at `n = 100`.
    pub fn default_delta(self) -> f64 {
        match self {
            Family::T3 => 0.32,
            Family::LogNormal => 0.06,
            Family::Heterogeneous => 0.14,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = EqcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t3" => Ok(Family::T3),
            "lognormal" => Ok(Family::LogNormal),
            "heterogeneous" => Ok(Family::Heterogeneous),
            other => Err(domain!("unknown scenario family `{other}` (expected t3, lognormal or heterogeneous)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub family: Family,
    pub n_train: usize,
    pub p: usize,
    pub noise_fraction: f64,
    pub delta: f64,
    pub dependent: bool,
    /// Shape of the symmetric Beta law of the vine partial correlations.
    pub beta_shape: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(family: Family, n_train: usize, p: usize, noise_fraction: f64) -> Self {
        ScenarioSpec {
            family,
            n_train,
            p,
            noise_fraction,
            delta: family.default_delta(),
            dependent: false,
            beta_shape: 0.5,
            seed: 0,
        }
    }

    pub fn n_informative(&self) -> usize {
        (self.p as f64 * (1.0 - self.noise_fraction)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(domain!("noise fraction {} must be in [0, 1)", self.noise_fraction));
        }
        if self.n_informative() < 1 {
            return Err(domain!("p = {} with noise {} leaves no informative variable", self.p, self.noise_fraction));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(domain!("delta must be finite and non-negative, got {}", self.delta));
        }
        if self.n_train < 2 {
            return Err(domain!("need at least two training observations"));
        }
        if !(self.beta_shape > 0.0) {
            return Err(domain!("beta shape must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Dataset,
    pub test: Dataset,
    pub spec: ScenarioSpec,
    pub informative_mask: Vec<bool>,
    /// The copula correlation, for dependent scenarios.
    pub correlation: Option<Array2<f64>>,
}

/// `Φ(z)` via `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Quantile function of Student's t with 3 degrees of freedom.
pub fn t3_quantile(u: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, 3.0).expect("valid t3");
    t.inverse_cdf(u)
}

/// `F⁻¹(Φ(z))` for t3, using symmetry so the upper tail keeps precision.
fn t3_from_normal(z: f64) -> f64 {
    if z > 0.0 {
        -t3_quantile(normal_cdf(-z))
    } else {
        t3_quantile(normal_cdf(z))
    }
}

fn lognormal_std(z: f64) -> f64 {
    (z.exp() - 0.5f64.exp()) / ((E - 1.0) * E).sqrt()
}

/// Mean and standard deviation of `log|W|`: `-(γ + ln 2)/2` and `π/√8`.
fn log_abs_moments() -> (f64, f64) {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    (-(EULER_GAMMA + 2f64.ln()) / 2.0, PI / 8f64.sqrt())
}

/// Mean and standard deviation of `|W|^{1/2}`: `E = 2^{1/4} Γ(3/4) / √π`, `E|W| = √(2/π)`.
fn sqrt_abs_moments() -> (f64, f64) {
    let m = 2f64.powf(0.25) * gamma(0.75) / PI.sqrt();
    (m, ((2.0 / PI).sqrt() - m * m).sqrt())
}

/// Standardized HETEROGENEOUS transform number `j mod 5` of a standard normal `w`.
fn heterogeneous(j: usize, w: f64) -> f64 {
    match j % 5 {
        0 => w,
        1 => lognormal_std(w),
        2 => {
            let (m, s) = log_abs_moments();
            (w.abs().ln() - m) / s
        }
        3 => (w * w - 1.0) / SQRT_2,
        _ => {
            let (m, s) = sqrt_abs_moments();
            (w.abs().sqrt() - m) / s
        }
    }
}

/// Standardized marginal of variable `j` of `family` as a function of a
/// latent standard normal `z`, i.e. `F⁻¹(Φ(z))`.
pub fn marginal_from_normal(family: Family, j: usize, z: f64) -> f64 {
    match family {
        Family::T3 => t3_from_normal(z) / 3f64.sqrt(),
        Family::LogNormal => lognormal_std(z),
        Family::Heterogeneous => heterogeneous(j, z),
    }
}

fn draw_base(family: Family, j: usize, rng: &mut ChaCha8Rng, t3: &StudentT<f64>) -> f64 {
    match family {
        Family::T3 => t3.sample(rng) / 3f64.sqrt(),
        _ => marginal_from_normal(family, j, rng.sample(StandardNormal)),
    }
}

/// `n` independent standardized draws of variable `variable_index`.
pub fn sample_base_variable(family: Family, variable_index: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t3 = StudentT::new(3.0).expect("valid t3");
    (0..n).map(|_| draw_base(family, variable_index, &mut rng, &t3)).collect()
}

/// Random correlation matrix by the C-vine method: partial correlations
/// `2·Beta(b, b) - 1`, converted by the vine recursion.
pub fn random_correlation_matrix(p: usize, beta_shape: f64, seed: u64) -> Result<Array2<f64>> {
    Ok(vine_correlation(p, beta_shape, seed)?.0)
}

/// The vine correlation together with its lower Cholesky factor, built
/// directly from the partial correlations. Strong draws make the matrix
/// numerically singular, where a generic factorization breaks down.
fn vine_correlation(p: usize, beta_shape: f64, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    if p < 2 {
        return Err(domain!("correlation matrix needs p >= 2, got {p}"));
    }
    let beta = Beta::new(beta_shape, beta_shape).map_err(|e| domain!("invalid beta shape {beta_shape}: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partial = Array2::<f64>::zeros((p, p));
    let mut r = Array2::<f64>::eye(p);
    for k in 0..p - 1 {
        for i in k + 1..p {
            partial[[k, i]] = (2.0 * beta.sample(&mut rng) - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let mut rho = partial[[k, i]];
            for l in (0..k).rev() {
                rho = rho * ((1.0 - partial[[l, i]].powi(2)) * (1.0 - partial[[l, k]].powi(2))).sqrt()
                    + partial[[l, i]] * partial[[l, k]];
            }
            r[[k, i]] = rho;
            r[[i, k]] = rho;
        }
    }
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        let mut rest = 1.0f64;
        for k in 0..i {
            l[[i, k]] = partial[[k, i]] * rest.sqrt();
            rest *= 1.0 - partial[[k, i]].powi(2);
        }
        l[[i, i]] = rest.sqrt();
    }
    Ok((r, l))
}

fn cholesky_lower(correlation: &Array2<f64>) -> Result<DMatrix<f64>> {
    let p = correlation.nrows();
    if correlation.ncols() != p {
        return Err(EqcError::Dimension("correlation matrix is not square".into()));
    }
    let m = DMatrix::from_fn(p, p, |a, b| correlation[[a, b]]);
    Cholesky::new(m)
        .map(|c| c.l())
        .ok_or_else(|| domain!("correlation matrix is not positive definite"))
}

/// Correlates rows of independent standard normals with `correlation`, maps
/// each coordinate through `Φ` and then through `marginal(j, u)`.
pub fn apply_gaussian_copula(
    independent_normals: ArrayView2<'_, f64>,
    correlation: &Array2<f64>,
    marginal: &dyn Fn(usize, f64) -> f64,
) -> Result<Array2<f64>> {
    let z = correlate(independent_normals, correlation)?;
    Ok(Array2::from_shape_fn(z.dim(), |(i, j)| marginal(j, normal_cdf(z[[i, j]]))))
}

/// `Z Lᵀ` for the Cholesky factor `L` of `correlation`.
fn correlate(independent_normals: ArrayView2<'_, f64>, correlation: &Array2<f64>) -> Result<Array2<f64>> {
    let p = independent_normals.ncols();
    if correlation.nrows() != p {
        return Err(EqcError::Dimension(format!("{p} columns but a {0}×{0} correlation", correlation.nrows())));
    }
    let l = cholesky_lower(correlation)?;
    let lt = Array2::from_shape_fn((p, p), |(a, b)| l[(b, a)]);
    Ok(independent_normals.dot(&lt))
}

/// Rows of one class; `shift` is added to informative columns.
fn sample_rows(
    spec: &ScenarioSpec,
    n: usize,
    shift: f64,
    chol_t: Option<&Array2<f64>>,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let p = spec.p;
    let m = spec.n_informative();
    let mut x = Array2::zeros((n, p));
    match chol_t {
        None => {
            let t3 = StudentT::new(3.0).expect("valid t3");
            for mut row in x.outer_iter_mut() {
                for j in 0..p {
                    row[j] = if j < m { draw_base(spec.family, j, rng, &t3) + shift } else { rng.sample(StandardNormal) };
                }
            }
        }
        Some(lt) => {
            let e = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
            let z = e.dot(lt);
            for (i, mut row) in x.outer_iter_mut().enumerate() {
                for j in 0..p {
                    row[j] = if j < m { marginal_from_normal(spec.family, j, z[[i, j]]) + shift } else { z[[i, j]] };
                }
            }
        }
    }
    x
}

fn balanced(spec: &ScenarioSpec, n: usize, chol_t: Option<&Array2<f64>>, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let n1 = n.div_ceil(2);
    let n2 = n - n1;
    let x1 = sample_rows(spec, n1, 0.0, chol_t, rng);
    let x2 = sample_rows(spec, n2, spec.delta, chol_t, rng);
    let x = ndarray::concatenate(ndarray::Axis(0), &[x1.view(), x2.view()]).expect("same width");
    let labels = std::iter::repeat(1).take(n1).chain(std::iter::repeat(2).take(n2)).collect();
    Dataset::new(x, labels)
}

/// Class-balanced training and test sets. The first `n_informative`
/// columns carry the shift; the rest are standard Gaussian noise.
pub fn generate(spec: &ScenarioSpec, n_test: usize) -> Result<GeneratedData> {
    spec.validate()?;
    if n_test < 2 {
        return Err(domain!("need at least two test observations"));
    }
    let (correlation, chol_t) = if spec.dependent {
        let (r, l) = vine_correlation(spec.p, spec.beta_shape, derive_seed(spec.seed, 0))?;
        (Some(r), Some(l.reversed_axes()))
    } else {
        (None, None)
    };
    let mut rng_train = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut rng_test = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2));
    let train = balanced(spec, spec.n_train, chol_t.as_ref(), &mut rng_train)?;
    let test = balanced(spec, n_test, chol_t.as_ref(), &mut rng_test)?;
    let m = spec.n_informative();
    Ok(GeneratedData {
        train,
        test,
        spec: spec.clone(),
        informative_mask: (0..spec.p).map(|j| j < m).collect(),
        correlation,
    })
}

/// Column means of `class` rows.
#[doc(hidden)]
pub fn class_means(d: &Dataset, class: usize) -> Array1<f64> {
    let rows = d.rows_of_class(class);
    d.subset(&rows).x().mean_axis(ndarray::Axis(0)).expect("non-empty class")
}
