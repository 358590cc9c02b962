//! Quick invariant checks runnable from an installed binary.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::{eqc_discriminant, mc_discriminant, qc_discriminant, FittedEqc, MetalearnerKind, ModelCoefficients};
use crate::data::{parse_dense_csv, Dataset};
use crate::error::Result;
use crate::fisher::{fisher_exact_pvalue, Alternative};
use crate::laplace::{al_bayes_discriminant, al_oracle_coefficients, random_point, ALPopulation};
use crate::metalearner::Coefficients;
use crate::model_io::{model_to_string, parse_model};
use crate::multiclass::{loglik_gradient, loglik_hessian, regularized_loglik, MulticlassCoefficients, MulticlassDesign};
use crate::quantile::{estimate_quantile_table, QuantileParams};
use crate::scenario::{generate, Family, ScenarioSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> Result<Dataset> {
    let labels: Vec<usize> = (0..n).map(|i| 1 + i % k).collect();
    let x = Array2::from_shape_fn((n, p), |(i, _)| rng.random::<f64>() * 4.0 - 2.0 + labels[i] as f64 * 0.3);
    Dataset::new(x, labels)
}

fn unit_weights_is_qc(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let d = random_data(rng, 40, 6, 2)?;
    let theta = QuantileParams::common(rng.random_range(0.05..0.95), 6)?;
    let table = estimate_quantile_table(&d, &theta)?;
    let model = FittedEqc::new(
        table.clone(),
        ModelCoefficients::Binary(Coefficients { intercept: 0.0, weights: vec![1.0; 6] }),
        MetalearnerKind::UnitWeights,
        None,
        None,
    )?;
    let mut bad = 0;
    for _ in 0..1000 {
        let x = random_point(rng, 6, 3.0);
        if eqc_discriminant(x.view(), &model)? != qc_discriminant(x.view(), &table)? {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} of 1000 points differ")))
}

fn median_qc_is_mc(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let d = random_data(rng, 40, 6, 2)?;
    let table = estimate_quantile_table(&d, &QuantileParams::common(0.5, 6)?)?;
    let mut bad = 0;
    for _ in 0..1000 {
        let x = random_point(rng, 6, 3.0);
        if qc_discriminant(x.view(), &table)? != mc_discriminant(x.view(), &table)? {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} of 1000 points differ")))
}

fn multiclass_derivatives(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst_grad = 0.0f64;
    let mut worst_eig = f64::NEG_INFINITY;
    for _ in 0..20 {
        let d = random_data(rng, 30, 4, 3)?;
        let table = estimate_quantile_table(&d, &QuantileParams::common(0.4, 4)?)?;
        let design = MulticlassDesign::new(d.x().view(), &table, d.labels())?;
        let w: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let coef = MulticlassCoefficients::from_slice(&w, 4);
        let g = loglik_gradient(&coef, &design, 0.0)?;
        for a in 0..w.len() {
            let eps = 1e-6;
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[a] += eps;
            wm[a] -= eps;
            let fd = (regularized_loglik(&MulticlassCoefficients::from_slice(&wp, 4), &design, 0.0)?
                - regularized_loglik(&MulticlassCoefficients::from_slice(&wm, 4), &design, 0.0)?)
                / (2.0 * eps);
            worst_grad = worst_grad.max((fd - g[a]).abs() / g[a].abs().max(1e-3));
        }
        let h = loglik_hessian(&coef, &design, 0.0)?;
        let m = nalgebra::DMatrix::from_fn(h.nrows(), h.ncols(), |a, b| h[[a, b]]);
        worst_eig = worst_eig.max(m.symmetric_eigenvalues().max());
    }
    Ok((
        worst_grad < 1e-6 && worst_eig <= 1e-8,
        format!("max relative gradient error {worst_grad:.2e}, max Hessian eigenvalue {worst_eig:.2e}"),
    ))
}

fn al_oracle_is_bayes(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let p = 4;
    let m1: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let m2: Vec<f64> = m1.iter().map(|m| m + rng.random::<f64>() * 2.0 - 1.0).collect();
    let lambda: Vec<f64> = (0..p).map(|_| 0.5 + rng.random::<f64>()).collect();
    let kappa: Vec<f64> = (0..p).map(|_| 0.5 + rng.random::<f64>()).collect();
    let pop = ALPopulation::from_locations(&m1, &m2, &lambda, &kappa, (0.3, 0.7))?;
    let model = al_oracle_coefficients(&pop, false)?.model();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = random_point(rng, p, 4.0);
        worst = worst.max((eqc_discriminant(x.view(), &model)? - al_bayes_discriminant(x.view(), &pop)?).abs());
    }
    Ok((worst < 1e-10, format!("max |difference| {worst:.2e}")))
}

fn fisher_small_tables() -> Result<(bool, String)> {
    let p = fisher_exact_pvalue([[5, 0], [0, 5]], Alternative::TwoSided);
    let q = fisher_exact_pvalue([[1, 1], [1, 1]], Alternative::TwoSided);
    let ok = (p - 2.0 / 252.0).abs() < 1e-14 && q == 1.0;
    Ok((ok, format!("p([[5,0],[0,5]]) = {p:.10}, p([[1,1],[1,1]]) = {q}")))
}

fn generation_is_reproducible() -> Result<(bool, String)> {
    let mut s = ScenarioSpec::new(Family::Heterogeneous, 50, 10, 0.5);
    s.dependent = true;
    s.seed = 12;
    let same = generate(&s, 20)? == generate(&s, 20)?;
    Ok((same, "two generations with one seed".into()))
}

fn formats_round_trip(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let d = random_data(rng, 10, 3, 2)?;
    let back = parse_dense_csv(&d.to_csv_string(), std::path::Path::new("<memory>"))?;
    let table = estimate_quantile_table(&d, &QuantileParams::common(0.3, 3)?)?;
    let model = FittedEqc::new(
        table,
        ModelCoefficients::Binary(Coefficients { intercept: 0.1, weights: vec![1.0 / 3.0, -2.0, 0.0] }),
        MetalearnerKind::Ridge,
        Some(0.5),
        None,
    )?;
    let text = model_to_string(&model);
    let again = parse_model(&text, std::path::Path::new("<memory>"))?;
    Ok((back == d && model_to_string(&again) == text, "dataset CSV and model file".into()))
}

/// Runs every check; deterministic for a given seed.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check("unit-weight EQC equals QC", unit_weights_is_qc(&mut rng)),
        check("QC at 0.5 equals MC", median_qc_is_mc(&mut rng)),
        check("multiclass gradient and Hessian", multiclass_derivatives(&mut rng)),
        check("AL oracle equals Bayes rule", al_oracle_is_bayes(&mut rng)),
        check("Fisher exact reference tables", fisher_small_tables()),
        check("scenario reproducibility", generation_is_reproducible()),
        check("file format round trips", formats_round_trip(&mut rng)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(1) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
