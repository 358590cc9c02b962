//! Asymmetric Laplace distributions, their two-class Bayes discriminant and
//! the EQC coefficients that reproduce it exactly.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;

use crate::binary::{FittedEqc, MetalearnerKind, ModelCoefficients, Population, Scaling};
use crate::error::{domain, EqcError, Result};
use crate::metalearner::Coefficients;
use crate::quantile::{QuantileParams, QuantileTable};

/// Location `m`, scale `λ > 0` and skewness `κ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ALParams {
    pub m: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl ALParams {
    pub fn new(m: f64, lambda: f64, kappa: f64) -> Result<Self> {
        if !m.is_finite() || !(lambda > 0.0 && lambda.is_finite()) || !(kappa > 0.0 && kappa.is_finite()) {
            return Err(domain!("AL parameters need finite m and positive lambda, kappa (got {m}, {lambda}, {kappa})"));
        }
        Ok(ALParams { m, lambda, kappa })
    }

    /// `κ² / (1 + κ²)`, the quantile level of `m`.
    pub fn theta(&self) -> f64 {
        let k2 = self.kappa * self.kappa;
        k2 / (1.0 + k2)
    }

    /// `√(1 + κ⁴) / (λ κ)`.
    pub fn std_dev(&self) -> f64 {
        (1.0 + self.kappa.powi(4)).sqrt() / (self.lambda * self.kappa)
    }
}

pub fn al_pdf(x: f64, params: &ALParams) -> f64 {
    let ALParams { m, lambda, kappa } = *params;
    let c = lambda / (kappa + 1.0 / kappa);
    if x < m {
        c * ((lambda / kappa) * (x - m)).exp()
    } else {
        c * (-lambda * kappa * (x - m)).exp()
    }
}

pub fn al_cdf(x: f64, params: &ALParams) -> f64 {
    let ALParams { m, lambda, kappa } = *params;
    let theta = params.theta();
    if x < m {
        theta * ((lambda / kappa) * (x - m)).exp()
    } else {
        1.0 - (1.0 - theta) * (-lambda * kappa * (x - m)).exp()
    }
}

/// Inverse CDF at `u ∈ (0, 1)`.
pub fn al_quantile(u: f64, params: &ALParams) -> f64 {
    let ALParams { m, lambda, kappa } = *params;
    let theta = params.theta();
    if u < theta {
        m + (kappa / lambda) * (u / theta).ln()
    } else {
        m - (1.0 / (lambda * kappa)) * ((1.0 - u) / (1.0 - theta)).ln()
    }
}

fn draw(params: &ALParams, rng: &mut ChaCha8Rng) -> f64 {
    al_quantile(rng.sample(Open01), params)
}

/// `n` inverse-CDF draws from a ChaCha8 stream seeded with `seed`.
pub fn al_sample(params: &ALParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(domain!("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw(params, &mut rng)).collect())
}

/// Two classes of independent AL coordinates sharing `(κ_j, λ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ALPopulation {
    class1: Vec<ALParams>,
    class2: Vec<ALParams>,
    priors: (f64, f64),
}

impl ALPopulation {
    pub fn new(class1: Vec<ALParams>, class2: Vec<ALParams>, priors: (f64, f64)) -> Result<Self> {
        if class1.len() != class2.len() || class1.is_empty() {
            return Err(EqcError::Dimension("both classes need the same, non-zero number of coordinates".into()));
        }
        if class1.iter().zip(&class2).any(|(a, b)| a.kappa != b.kappa || a.lambda != b.lambda) {
            return Err(domain!("kappa and lambda must be shared across classes per coordinate"));
        }
        if !(priors.0 > 0.0 && priors.1 > 0.0 && (priors.0 + priors.1 - 1.0).abs() < 1e-12) {
            return Err(domain!("priors must be positive and sum to 1"));
        }
        Ok(ALPopulation { class1, class2, priors })
    }

    /// Builds a population from per-coordinate locations and shared `(λ, κ)`.
    pub fn from_locations(m1: &[f64], m2: &[f64], lambda: &[f64], kappa: &[f64], priors: (f64, f64)) -> Result<Self> {
        if m1.len() != m2.len() || m1.len() != lambda.len() || m1.len() != kappa.len() {
            return Err(EqcError::Dimension("location, scale and skewness vectors differ in length".into()));
        }
        let c1 = (0..m1.len()).map(|j| ALParams::new(m1[j], lambda[j], kappa[j])).collect::<Result<_>>()?;
        let c2 = (0..m1.len()).map(|j| ALParams::new(m2[j], lambda[j], kappa[j])).collect::<Result<_>>()?;
        ALPopulation::new(c1, c2, priors)
    }

    pub fn class_params(&self, class: usize) -> &[ALParams] {
        if class == 1 {
            &self.class1
        } else {
            &self.class2
        }
    }
}

impl Population for ALPopulation {
    fn p(&self) -> usize {
        self.class1.len()
    }

    fn priors(&self) -> (f64, f64) {
        self.priors
    }

    fn sample_class(&self, class: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let params = self.class_params(class);
        let mut x = Array2::zeros((n, params.len()));
        for mut row in x.outer_iter_mut() {
            for (v, pr) in row.iter_mut().zip(params) {
                *v = draw(pr, rng);
            }
        }
        x
    }
}

/// The three-branch function `S_al` for `m1 < m2`, extended by antisymmetry
/// to `m1 > m2` and to 0 when `m1 = m2`.
pub fn s_al(x: f64, m1: f64, m2: f64, kappa: f64) -> f64 {
    if m1 == m2 {
        return 0.0;
    }
    if m1 > m2 {
        return -s_al(x, m2, m1, kappa);
    }
    let k2 = kappa * kappa;
    if x < m1 {
        -(m2 - m1) / (k2 + 1.0)
    } else if x < m2 {
        x - k2 / (k2 + 1.0) * m1 - m2 / (k2 + 1.0)
    } else {
        k2 / (k2 + 1.0) * (m2 - m1)
    }
}

/// `log(π₂/π₁) + Σ_j λ_j (κ_j + 1/κ_j) S_al(x_j, m_1j, m_2j, κ_j)`; class 1 when `≤ 0`.
pub fn al_bayes_discriminant(x: ArrayView1<'_, f64>, pop: &ALPopulation) -> Result<f64> {
    if x.len() != pop.p() {
        return Err(EqcError::Dimension(format!("input has {} variables, population has {}", x.len(), pop.p())));
    }
    let mut s = (pop.priors.1 / pop.priors.0).ln();
    for (j, (a, b)) in pop.class1.iter().zip(&pop.class2).enumerate() {
        s += a.lambda * (a.kappa + 1.0 / a.kappa) * s_al(x[j], a.m, b.m, a.kappa);
    }
    Ok(s)
}

/// Closed-form EQC parameters that realize the Bayes discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct ALOracle {
    pub theta: QuantileParams,
    pub coef: Coefficients,
    pub table: QuantileTable,
    /// Division by the per-coordinate standard deviation, present in the rescaled form.
    pub scaling: Option<Scaling>,
}

impl ALOracle {
    /// The oracle as a model that takes raw (unscaled) observations.
    pub fn model(&self) -> FittedEqc {
        FittedEqc::new(
            self.table.clone(),
            ModelCoefficients::Binary(self.coef.clone()),
            MetalearnerKind::Logistic,
            None,
            self.scaling.clone(),
        )
        .expect("oracle parts are consistent")
    }
}

/// `θ_j = κ_j²/(1+κ_j²)`, table rows `m_1, m_2`, `β_0 = log(π₂/π₁)` and
/// `β_j = λ_j / √(θ_j(1-θ_j))`. With `rescaled`, coordinates are divided by
/// their standard deviation first and `β_j = √2 √((θ_j-½)²+¼) / (θ_j(1-θ_j))`.
pub fn al_oracle_coefficients(pop: &ALPopulation, rescaled: bool) -> Result<ALOracle> {
    let p = pop.p();
    let theta_v: Vec<f64> = pop.class1.iter().map(ALParams::theta).collect();
    let theta = QuantileParams::per_variable(theta_v.clone())?;
    let sd: Vec<f64> = pop.class1.iter().map(ALParams::std_dev).collect();
    let mut q = Array2::zeros((2, p));
    for j in 0..p {
        let s = if rescaled { sd[j] } else { 1.0 };
        q[[0, j]] = pop.class1[j].m / s;
        q[[1, j]] = pop.class2[j].m / s;
    }
    let weights = (0..p)
        .map(|j| {
            let t = theta_v[j];
            if rescaled {
                2f64.sqrt() * ((t - 0.5).powi(2) + 0.25).sqrt() / (t * (1.0 - t))
            } else {
                pop.class1[j].lambda * (1.0 / (t * (1.0 - t))).sqrt()
            }
        })
        .collect();
    let coef = Coefficients { intercept: (pop.priors.1 / pop.priors.0).ln(), weights };
    let table = QuantileTable::new(q, theta.clone(), vec![1, 2])?;
    let scaling = if rescaled { Some(Scaling::new(vec![0.0; p], sd)?) } else { None };
    Ok(ALOracle { theta, coef, table, scaling })
}

/// Bayes rule predictions (class 1 when the discriminant is `≤ 0`).
pub fn al_bayes_predict(x: ndarray::ArrayView2<'_, f64>, pop: &ALPopulation) -> Result<Vec<usize>> {
    x.outer_iter()
        .map(|r| al_bayes_discriminant(r, pop).map(|s| 1 + usize::from(s > 0.0)))
        .collect()
}

#[doc(hidden)]
pub fn random_point(rng: &mut ChaCha8Rng, p: usize, spread: f64) -> Array1<f64> {
    Array1::from_iter((0..p).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * spread))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::eqc_discriminant;
    use crate::quantile::quantile_difference_transform;
    use proptest::prelude::*;
    use rand::Rng;

    fn pop(seed: u64, p: usize, priors: (f64, f64)) -> ALPopulation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let m1: Vec<f64> = (0..p).map(|_| u(-1.0, 1.0)).collect();
        let m2: Vec<f64> = (0..p).map(|_| u(-1.0, 1.0)).collect();
        let lambda: Vec<f64> = (0..p).map(|_| u(0.5, 3.0)).collect();
        let kappa: Vec<f64> = (0..p).map(|_| u(0.3, 3.0)).collect();
        ALPopulation::from_locations(&m1, &m2, &lambda, &kappa, priors).unwrap()
    }

    #[test]
    fn pdf_examples() {
        let a = ALParams::new(0.7, 2.0, 1.7).unwrap();
        assert_eq!(al_pdf(0.7, &a), 2.0 / (1.7 + 1.0 / 1.7));
        let s = ALParams::new(-1.0, 1.3, 1.0).unwrap();
        for d in [0.1, 0.5, 3.0] {
            assert!((al_pdf(-1.0 + d, &s) - al_pdf(-1.0 - d, &s)).abs() < 1e-15);
        }
        assert!(ALParams::new(0.0, 0.0, 1.0).is_err());
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_integrates_to_one() {
        for (m, l, k) in [(0.0, 1.0, 1.0), (2.0, 0.5, 0.4), (-1.0, 3.0, 2.5)] {
            let a = ALParams::new(m, l, k).unwrap();
            let f = |x| al_pdf(x, &a);
            let total = simpson(f, m - 50.0 / l, m, 200_000) + simpson(f, m, m + 50.0 / l, 200_000);
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn cdf_and_quantile_are_inverse() {
        let a = ALParams::new(0.3, 1.5, 0.6).unwrap();
        for u in [1e-6, 0.1, a.theta(), 0.5, 0.9, 1.0 - 1e-9] {
            assert!((al_cdf(al_quantile(u, &a), &a) - u).abs() < 1e-12);
        }
        assert!((al_cdf(a.m, &a) - a.theta()).abs() < 1e-15);
    }

    #[test]
    fn sampler_quantile_and_spread() {
        for (m, l, k) in [(1.0, 2.0, 0.5), (0.0, 1.0, 2.0)] {
            let a = ALParams::new(m, l, k).unwrap();
            let mut x = al_sample(&a, 1_000_000, 42).unwrap();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
            assert!((sd / a.std_dev() - 1.0).abs() < 0.01, "sd {sd} vs {}", a.std_dev());
            x.sort_by(f64::total_cmp);
            let q = crate::quantile::quantile_of_sorted(&x, a.theta());
            assert!((q - m).abs() < 0.01 / l, "quantile {q} vs {m}");
        }
        let s = ALParams::new(0.0, 1.0, 1.0).unwrap();
        let mut x = al_sample(&s, 100_001, 3).unwrap();
        x.sort_by(f64::total_cmp);
        assert!(x[50_000].abs() < 0.02);
        assert_eq!(al_sample(&s, 10, 9).unwrap(), al_sample(&s, 10, 9).unwrap());
    }

    #[test]
    fn discriminant_lower_branch() {
        let p = ALPopulation::from_locations(&[0.0, 1.0], &[2.0, 1.5], &[1.0, 2.0], &[0.5, 2.0], (0.5, 0.5)).unwrap();
        let x = ndarray::array![-5.0, -5.0];
        let expect: f64 = [(1.0, 0.5, 2.0), (2.0, 2.0, 0.5)]
            .iter()
            .map(|&(l, k, d): &(f64, f64, f64)| l * (k + 1.0 / k) * (-d / (k * k + 1.0)))
            .sum();
        assert!((al_bayes_discriminant(x.view(), &p).unwrap() - expect).abs() < 1e-14);
        let sym = ALPopulation::from_locations(&[-1.0], &[1.0], &[1.0], &[1.0], (0.5, 0.5)).unwrap();
        assert_eq!(al_bayes_discriminant(ndarray::array![0.0].view(), &sym).unwrap(), 0.0);
    }

    #[test]
    fn discriminant_is_the_log_posterior_ratio() {
        let p = pop(1, 4, (0.3, 0.7));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = random_point(&mut rng, 4, 3.0);
            let lr: f64 = (0..4)
                .map(|j| (al_pdf(x[j], &p.class2[j]) / al_pdf(x[j], &p.class1[j])).ln())
                .sum::<f64>()
                + (0.7f64 / 0.3).ln();
            assert!((al_bayes_discriminant(x.view(), &p).unwrap() - lr).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_matches_bayes_pointwise() {
        for rescaled in [false, true] {
            let p = pop(3, 6, (0.4, 0.6));
            let oracle = al_oracle_coefficients(&p, rescaled).unwrap();
            let model = oracle.model();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let x = random_point(&mut rng, 6, 4.0);
                let a = al_bayes_discriminant(x.view(), &p).unwrap();
                let b = eqc_discriminant(x.view(), &model).unwrap();
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rescaled_weights() {
        let one = ALPopulation::from_locations(&[0.0], &[1.0], &[1.0], &[1.0], (0.5, 0.5)).unwrap();
        let w = al_oracle_coefficients(&one, true).unwrap().coef.weights[0];
        assert!((w - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        // θ = 0.2 ⇔ κ = 1/2.
        let skew = ALPopulation::from_locations(&[0.0], &[1.0], &[1.0], &[0.5], (0.5, 0.5)).unwrap();
        let w = al_oracle_coefficients(&skew, true).unwrap().coef.weights[0];
        assert!((w - 5.153882032022074).abs() < 1e-12, "{w}");
    }

    #[test]
    fn prior_shift_moves_intercept_only() {
        let a = pop(5, 3, (0.5, 0.5));
        let b = ALPopulation::new(a.class1.clone(), a.class2.clone(), (0.2, 0.8)).unwrap();
        let oa = al_oracle_coefficients(&a, false).unwrap();
        let ob = al_oracle_coefficients(&b, false).unwrap();
        assert!((ob.coef.intercept - oa.coef.intercept - 4f64.ln()).abs() < 1e-15);
        assert_eq!(oa.coef.weights, ob.coef.weights);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((500, 3), |_| rng.random::<f64>() * 4.0 - 2.0);
        let count = |pp: &ALPopulation| al_bayes_predict(x.view(), pp).unwrap().iter().filter(|&&c| c == 2).count();
        assert!(count(&b) >= count(&a));
    }

    #[test]
    fn equal_locations_contribute_zero() {
        for x in [-3.0, 0.0, 0.5, 9.0] {
            assert_eq!(s_al(x, 0.5, 0.5, 1.7), 0.0);
        }
    }

    proptest! {
        #[test]
        fn weight_identity(kappa in 0.05f64..20.0, lambda in 0.1f64..10.0) {
            let a = ALParams::new(0.0, lambda, kappa).unwrap();
            let t = a.theta();
            let lhs = lambda * (kappa + 1.0 / kappa);
            let rhs = lambda * (1.0 / (t * (1.0 - t))).sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }

        #[test]
        fn s_al_is_the_quantile_difference(x in -10.0f64..10.0, m1 in -5.0f64..5.0, m2 in -5.0f64..5.0, kappa in 0.1f64..10.0) {
            let theta = kappa * kappa / (1.0 + kappa * kappa);
            let q = ndarray::array![[m1], [m2]];
            let table = QuantileTable::new(q, QuantileParams::common(theta, 1).unwrap(), vec![1, 2]).unwrap();
            let z = quantile_difference_transform(ndarray::array![x].view(), &table, 1, 2).unwrap()[0];
            prop_assert!((s_al(x, m1, m2, kappa) - z).abs() < 1e-12);
        }
    }
}
