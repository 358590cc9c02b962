//! Convex solvers for the binary metalearners that combine transformed
//! features: ridge- and lasso-penalized logistic regression and the
//! L2-regularized linear hinge loss.
//!
//! Labels are the class ids `1` and `2`. For the logistic losses the response
//! is `y - 1 ∈ {0, 1}`; for the hinge loss it is the margin label
//! `2 (y - 1) - 1 ∈ {-1, +1}`. The intercept is never penalized.

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};

use crate::error::{domain, EqcError, Result};

/// Linear discriminant `C(z) = intercept + weights · z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(p: usize) -> Self {
        Coefficients {
            intercept: 0.0,
            weights: vec![0.0; p],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    #[inline]
    pub fn decision(&self, z: ArrayView1<'_, f64>) -> f64 {
        self.intercept + dot(&self.weights, z)
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.weights.len() + 1);
        v.push(self.intercept);
        v.extend_from_slice(&self.weights);
        v
    }

    fn from_slice(v: &[f64]) -> Self {
        Coefficients {
            intercept: v[0],
            weights: v[1..].to_vec(),
        }
    }
}

#[inline]
fn dot(w: &[f64], z: ArrayView1<'_, f64>) -> f64 {
    w.iter().zip(z.iter()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    Ridge,
    Lasso,
    Hinge,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Hinge => "hinge",
        }
    }
}

/// Penalty strength: `lambda` for ridge/lasso, the cost `c` for the hinge loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    value: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(domain!("penalty value must be positive, got {value}"));
        }
        Ok(PenaltySpec { kind, value })
    }

    pub fn ridge(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::Ridge, lambda)
    }

    pub fn lasso(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::Lasso, lambda)
    }

    pub fn hinge(cost: f64) -> Result<Self> {
        Self::new(PenaltyKind::Hinge, cost)
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Gradient-norm tolerance (Newton) and step-displacement tolerance
    /// (proximal gradient).
    pub tol: f64,
    pub max_iter: usize,
    /// Iteration budget of the hinge subgradient solver.
    pub hinge_max_iter: usize,
    /// The hinge solver stops once the best objective has not improved by
    /// more than `hinge_tol` over this many iterations.
    pub hinge_patience: usize,
    pub hinge_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 500,
            hinge_max_iter: 20_000,
            hinge_patience: 2_000,
            hinge_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm_at_exit: f64,
    /// Objective after each accepted iteration, starting with the initial point.
    pub loss_trace: Vec<f64>,
}

fn check_problem(z: ArrayView2<'_, f64>, y: &[usize], p: Option<usize>) -> Result<()> {
    if z.nrows() != y.len() {
        return Err(EqcError::Dimension(format!(
            "{} rows but {} labels",
            z.nrows(),
            y.len()
        )));
    }
    if let Some(p) = p {
        if p != z.ncols() {
            return Err(EqcError::Dimension(format!(
                "{} weights for {} features",
                p,
                z.ncols()
            )));
        }
    }
    if let Some(&bad) = y.iter().find(|&&l| l != 1 && l != 2) {
        return Err(domain!("binary labels must be 1 or 2, found {bad}"));
    }
    Ok(())
}

fn require_both_labels(y: &[usize]) -> Result<()> {
    if !(y.contains(&1) && y.contains(&2)) {
        return Err(EqcError::Fit("both classes must be present".into()));
    }
    Ok(())
}

/// `log(1 + e^c)` without overflow.
#[inline]
pub(crate) fn softplus(c: f64) -> f64 {
    c.max(0.0) + (-c.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(c: f64) -> f64 {
    if c >= 0.0 {
        1.0 / (1.0 + (-c).exp())
    } else {
        let e = c.exp();
        e / (1.0 + e)
    }
}

/// Mean unpenalized binomial deviance term
/// `-(1/n) Σ { (y_i - 1) C(z_i) - log(1 + e^{C(z_i)}) }`.
pub(crate) fn mean_binomial_deviance(coef: &Coefficients, z: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
    let n = y.len() as f64;
    let s: f64 = z
        .outer_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let c = coef.decision(row);
            softplus(c) - (yi - 1) as f64 * c
        })
        .sum();
    s / n
}

fn penalty_term(kind: PenaltyKind, lambda: f64, weights: &[f64]) -> f64 {
    match kind {
        PenaltyKind::Lasso => 0.5 * lambda * weights.iter().map(|w| w.abs()).sum::<f64>(),
        _ => 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>(),
    }
}

/// Regularized binomial loss: mean deviance plus `(lambda/2) Σ β_j²` (ridge)
/// or `(lambda/2) Σ |β_j|` (lasso).
pub fn binomial_loss(
    coef: &Coefficients,
    penalty: &PenaltySpec,
    z: ArrayView2<'_, f64>,
    y: &[usize],
) -> Result<f64> {
    if penalty.kind == PenaltyKind::Hinge {
        return Err(domain!("binomial loss needs a ridge or lasso penalty"));
    }
    check_problem(z, y, Some(coef.weights.len()))?;
    Ok(mean_binomial_deviance(coef, z, y) + penalty_term(penalty.kind, penalty.value, &coef.weights))
}

/// Regularized hinge loss `(1/n) Σ [1 - ỹ_i C(z_i)]_+ + ‖β‖² / (2 n c)` with
/// margin labels `ỹ = 2 (y - 1) - 1`.
pub fn hinge_loss(coef: &Coefficients, cost: f64, z: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
    if !(cost.is_finite() && cost > 0.0) {
        return Err(domain!("hinge cost must be positive, got {cost}"));
    }
    check_problem(z, y, Some(coef.weights.len()))?;
    Ok(hinge_objective(&coef.to_vec(), cost, z, y))
}

#[inline]
fn margin_label(y: usize) -> f64 {
    2.0 * (y as f64 - 1.0) - 1.0
}

fn hinge_objective(w: &[f64], cost: f64, z: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
    let n = y.len() as f64;
    let hinge: f64 = z
        .outer_iter()
        .zip(y)
        .map(|(row, &yi)| (1.0 - margin_label(yi) * (w[0] + dot(&w[1..], row))).max(0.0))
        .sum();
    let norm2: f64 = w[1..].iter().map(|b| b * b).sum();
    hinge / n + norm2 / (2.0 * n * cost)
}

/// Smooth logistic part: value and gradient over `(intercept, weights)`.
struct Logistic<'a> {
    z: ArrayView2<'a, f64>,
    t: Vec<f64>,
}

impl<'a> Logistic<'a> {
    fn new(z: ArrayView2<'a, f64>, y: &[usize]) -> Self {
        Logistic {
            z,
            t: y.iter().map(|&l| (l - 1) as f64).collect(),
        }
    }

    fn n(&self) -> f64 {
        self.t.len() as f64
    }

    fn decisions(&self, w: &[f64]) -> Vec<f64> {
        self.z.outer_iter().map(|row| w[0] + dot(&w[1..], row)).collect()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let s: f64 = self
            .decisions(w)
            .iter()
            .zip(&self.t)
            .map(|(&c, &t)| softplus(c) - t * c)
            .sum();
        s / self.n()
    }

    /// Returns `(value, gradient, sigmoid values)`.
    fn value_grad(&self, w: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let p = w.len() - 1;
        let c = self.decisions(w);
        let mut g = vec![0.0; p + 1];
        let mut v = 0.0;
        let mut sig = Vec::with_capacity(c.len());
        for (i, row) in self.z.outer_iter().enumerate() {
            let s = sigmoid(c[i]);
            sig.push(s);
            v += softplus(c[i]) - self.t[i] * c[i];
            let r = s - self.t[i];
            g[0] += r;
            for (gj, zj) in g[1..].iter_mut().zip(row.iter()) {
                *gj += r * zj;
            }
        }
        let n = self.n();
        g.iter_mut().for_each(|x| *x /= n);
        (v / n, g, sig)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `h d = -g`, adding diagonal damping if `h` is not numerically
/// positive definite.
pub(crate) fn newton_direction(h: DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_iterator(g.len(), g.iter().map(|x| -x));
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut damping = 0.0;
    for _ in 0..12 {
        let mut hd = h.clone();
        if damping > 0.0 {
            for i in 0..hd.nrows() {
                hd[(i, i)] += damping;
            }
        }
        if let Some(ch) = hd.cholesky() {
            let d = ch.solve(&rhs);
            if d.iter().all(|x| x.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
        damping = if damping == 0.0 { 1e-10 * scale } else { damping * 100.0 };
    }
    None
}

/// Ridge (or unpenalized, when `lambda == 0`) logistic regression by damped
/// Newton iterations with Armijo backtracking.
pub(crate) fn fit_ridge_newton(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    lambda: f64,
    config: &SolverConfig,
    init: Option<&Coefficients>,
) -> (Coefficients, SolverReport) {
    let p = z.ncols();
    let f = Logistic::new(z, y);
    let objective = |w: &[f64]| f.value(w) + penalty_term(PenaltyKind::Ridge, lambda, &w[1..]);

    let mut w = match init {
        Some(c) if c.weights.len() == p && c.is_finite() => c.to_vec(),
        _ => vec![0.0; p + 1],
    };
    let mut trace = vec![objective(&w)];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations < config.max_iter {
        let (v, mut g, sig) = f.value_grad(&w);
        for j in 1..=p {
            g[j] += lambda * w[j];
        }
        let fw = v + penalty_term(PenaltyKind::Ridge, lambda, &w[1..]);
        grad_norm = norm(&g);
        if grad_norm < config.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Hessian over (intercept, weights).
        let n = f.n();
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut xi = vec![0.0; p + 1];
        xi[0] = 1.0;
        for (i, row) in z.outer_iter().enumerate() {
            let wgt = sig[i] * (1.0 - sig[i]) / n;
            if wgt == 0.0 {
                continue;
            }
            xi[1..].iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
            for a in 0..=p {
                let wa = wgt * xi[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..=p {
                    h[(a, b)] += wa * xi[b];
                }
            }
        }
        for a in 0..=p {
            if a > 0 {
                h[(a, a)] += lambda;
            }
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }

        let mut d = match newton_direction(h, &g) {
            Some(d) => d,
            None => g.iter().map(|x| -x).collect(),
        };
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = g.iter().map(|x| -x).collect();
            slope = -grad_norm * grad_norm;
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let cand: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let fc = objective(&cand);
            if fc <= fw + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                w = cand;
                trace.push(fc);
                if (fw - fc).abs() <= f64::EPSILON * fw.abs() && grad_norm < config.tol.sqrt() {
                    converged = true;
                    break;
                }
            }
            None => break,
        }
    }
    if !converged && iterations == config.max_iter {
        let (_, mut g, _) = f.value_grad(&w);
        for j in 1..=p {
            g[j] += lambda * w[j];
        }
        grad_norm = norm(&g);
        converged = grad_norm < config.tol;
    }
    let report = SolverReport {
        final_loss: *trace.last().unwrap(),
        iterations: iterations.max(1),
        converged,
        grad_norm_at_exit: grad_norm,
        loss_trace: trace,
    };
    (Coefficients::from_slice(&w), report)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Lasso logistic regression by monotone accelerated proximal gradient with
/// backtracking on the local Lipschitz estimate.
pub(crate) fn fit_lasso_proximal(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    lambda: f64,
    config: &SolverConfig,
    init: Option<&Coefficients>,
) -> (Coefficients, SolverReport) {
    let p = z.ncols();
    let f = Logistic::new(z, y);
    let l1 = |w: &[f64]| penalty_term(PenaltyKind::Lasso, lambda, &w[1..]);

    let mut x = match init {
        Some(c) if c.weights.len() == p && c.is_finite() => c.to_vec(),
        _ => vec![0.0; p + 1],
    };
    let mut fx = f.value(&x) + l1(&x);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    // Curvature of the logistic loss is at most mean(‖(1, z_i)‖²) / 4.
    let mean_sq: f64 = z
        .outer_iter()
        .map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / f.n();
    let mut lip = (0.25 * mean_sq / (p as f64 + 1.0)).max(1e-12);

    let mut trace = vec![fx];
    let mut iterations = 0;
    let mut converged = false;
    let mut displacement = f64::INFINITY;

    while iterations < config.max_iter {
        iterations += 1;
        let (fy, gy, _) = f.value_grad(&yk);
        let (zk, fzk) = loop {
            let step = 1.0 / lip;
            let mut cand = Vec::with_capacity(p + 1);
            cand.push(yk[0] - step * gy[0]);
            for j in 1..=p {
                cand.push(soft_threshold(yk[j] - step * gy[j], 0.5 * lambda * step));
            }
            let smooth = f.value(&cand);
            let diff: Vec<f64> = cand.iter().zip(&yk).map(|(a, b)| a - b).collect();
            let lin: f64 = gy.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() * 0.5 * lip;
            if smooth <= fy + lin + quad + 1e-15 * fy.abs() || lip > 1e300 {
                displacement = norm(&diff);
                let total = smooth + l1(&cand);
                break (cand, total);
            }
            lip *= 2.0;
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        if fzk <= fx {
            x = zk.clone();
            fx = fzk;
        }
        yk = (0..=p)
            .map(|j| x[j] + (t / t_next) * (zk[j] - x[j]) + ((t - 1.0) / t_next) * (x[j] - x_prev[j]))
            .collect();
        t = t_next;
        trace.push(fx);
        // Allow the step to grow again.
        lip *= 0.9;
        if displacement < config.tol {
            converged = true;
            break;
        }
    }
    let report = SolverReport {
        final_loss: fx,
        iterations: iterations.max(1),
        converged,
        grad_norm_at_exit: displacement,
        loss_trace: trace,
    };
    (Coefficients::from_slice(&x), report)
}

/// Fits ridge or lasso penalized logistic regression.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`.
pub fn fit_penalized_logistic(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    penalty: &PenaltySpec,
    config: &SolverConfig,
) -> Result<(Coefficients, SolverReport)> {
    fit_penalized_logistic_from(z, y, penalty, config, None)
}

/// As [`fit_penalized_logistic`], starting from `init` (warm start).
pub fn fit_penalized_logistic_from(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    penalty: &PenaltySpec,
    config: &SolverConfig,
    init: Option<&Coefficients>,
) -> Result<(Coefficients, SolverReport)> {
    check_problem(z, y, None)?;
    if y.len() < 2 {
        return Err(EqcError::Fit("need at least two observations".into()));
    }
    require_both_labels(y)?;
    Ok(match penalty.kind {
        PenaltyKind::Ridge => fit_ridge_newton(z, y, penalty.value, config, init),
        PenaltyKind::Lasso => fit_lasso_proximal(z, y, penalty.value, config, init),
        PenaltyKind::Hinge => return Err(domain!("use fit_linear_svm for the hinge penalty")),
    })
}

/// Unpenalized logistic regression (Newton with line search).
pub fn fit_logistic(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    config: &SolverConfig,
) -> Result<(Coefficients, SolverReport)> {
    check_problem(z, y, None)?;
    require_both_labels(y)?;
    Ok(fit_ridge_newton(z, y, 0.0, config, None))
}

/// Linear SVM by deterministic full-batch subgradient descent with step
/// `eta_t = eta_0 / (1 + t * lambda_eff)`, keeping the best iterate seen
/// (including the running average of the second half of the iterates).
pub fn fit_linear_svm(
    z: ArrayView2<'_, f64>,
    y: &[usize],
    cost: f64,
    config: &SolverConfig,
) -> Result<(Coefficients, SolverReport)> {
    if !(cost.is_finite() && cost > 0.0) {
        return Err(domain!("hinge cost must be positive, got {cost}"));
    }
    check_problem(z, y, None)?;
    require_both_labels(y)?;

    let n = y.len();
    let p = z.ncols();
    let nf = n as f64;
    let labels: Vec<f64> = y.iter().map(|&l| margin_label(l)).collect();
    let mean_sq: f64 = z
        .outer_iter()
        .map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / nf;
    let eta0 = 1.0 / mean_sq;
    let strong = 1.0 / (nf * cost);
    let max_iter = config.hinge_max_iter.max(1);
    // The intercept is not strongly convex; a floor on the decay rate keeps
    // the steps shrinking.
    let lambda_eff = (eta0 * strong).max(20.0 / max_iter as f64);

    let objective = |w: &[f64]| hinge_objective(w, cost, z, y);
    let mut w = vec![0.0; p + 1];
    let mut best = w.clone();
    let mut best_val = objective(&w);
    let mut trace = vec![best_val];
    let mut avg = vec![0.0; p + 1];
    let mut avg_count = 0usize;
    let mut last_improvement = 0usize;
    let mut improvement_ref = best_val;
    let mut g = vec![0.0; p + 1];
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for t in 0..max_iter {
        iterations = t + 1;
        g.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in z.outer_iter().enumerate() {
            let c = w[0] + dot(&w[1..], row);
            if labels[i] * c < 1.0 {
                g[0] -= labels[i] / nf;
                for (gj, zj) in g[1..].iter_mut().zip(row.iter()) {
                    *gj -= labels[i] * zj / nf;
                }
            }
        }
        for j in 1..=p {
            g[j] += strong * w[j];
        }
        grad_norm = norm(&g);
        if grad_norm == 0.0 {
            break;
        }
        let eta = eta0 / (1.0 + t as f64 * lambda_eff);
        for j in 0..=p {
            w[j] -= eta * g[j];
        }
        let val = objective(&w);
        if val < best_val {
            best_val = val;
            best.copy_from_slice(&w);
        }
        if 2 * t >= max_iter {
            avg_count += 1;
            let k = avg_count as f64;
            for j in 0..=p {
                avg[j] += (w[j] - avg[j]) / k;
            }
        }
        trace.push(best_val);
        if improvement_ref - best_val > config.hinge_tol * (1.0 + best_val.abs()) {
            improvement_ref = best_val;
            last_improvement = t;
        } else if t - last_improvement >= config.hinge_patience {
            break;
        }
    }
    if avg_count > 0 {
        let val = objective(&avg);
        if val < best_val {
            best_val = val;
            best = avg;
            trace.push(best_val);
        }
    }
    let report = SolverReport {
        final_loss: best_val,
        iterations: iterations.max(1),
        converged: iterations < max_iter,
        grad_norm_at_exit: grad_norm,
        loss_trace: trace,
    };
    Ok((Coefficients::from_slice(&best), report))
}

/// Analytic gradient of the ridge objective over `(intercept, weights)`.
pub fn ridge_gradient(coef: &Coefficients, lambda: f64, z: ArrayView2<'_, f64>, y: &[usize]) -> Result<Vec<f64>> {
    check_problem(z, y, Some(coef.weights.len()))?;
    let w = coef.to_vec();
    let (_, mut g, _) = Logistic::new(z, y).value_grad(&w);
    for j in 1..w.len() {
        g[j] += lambda * w[j];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let z = Array2::from_shape_fn((n, p), |(i, _)| {
            rng.random::<f64>() * 2.0 - 1.0 + if y[i] == 2 { 0.4 } else { -0.4 }
        });
        (z, y)
    }

    // Direct summation of the printed loss formulas.
    fn naive_binomial(c0: f64, b: &[f64], lambda: f64, l1: bool, z: &Array2<f64>, y: &[usize]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            let mut c = c0;
            for j in 0..b.len() {
                c += b[j] * z[[i, j]];
            }
            s += (y[i] as f64 - 1.0) * c - (1.0 + c.exp()).ln();
        }
        let pen: f64 = if l1 { b.iter().map(|v| v.abs()).sum() } else { b.iter().map(|v| v * v).sum() };
        -s / y.len() as f64 + lambda / 2.0 * pen
    }

    fn naive_hinge(c0: f64, b: &[f64], cost: f64, z: &Array2<f64>, y: &[usize]) -> f64 {
        let n = y.len() as f64;
        let mut s = 0.0;
        for i in 0..y.len() {
            let yt = if y[i] == 2 { 1.0 } else { -1.0 };
            let mut c = c0;
            for j in 0..b.len() {
                c += b[j] * z[[i, j]];
            }
            s += f64::max(0.0, 1.0 - yt * c);
        }
        s / n + b.iter().map(|v| v * v).sum::<f64>() / (2.0 * n * cost)
    }

    #[test]
    fn binomial_loss_at_zero_is_log2() {
        let z = array![[0.3, -1.0]];
        for y in [1usize, 2] {
            let v = binomial_loss(&Coefficients::zeros(2), &PenaltySpec::ridge(7.0).unwrap(), z.view(), &[y]).unwrap();
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn binomial_and_hinge_match_naive_sums() {
        let (z, y) = random_problem(3, 25, 4);
        let coef = Coefficients { intercept: 0.3, weights: vec![0.5, -1.2, 2.0, 0.1] };
        let r = binomial_loss(&coef, &PenaltySpec::ridge(0.7).unwrap(), z.view(), &y).unwrap();
        let l = binomial_loss(&coef, &PenaltySpec::lasso(0.7).unwrap(), z.view(), &y).unwrap();
        assert!((r - naive_binomial(0.3, &coef.weights, 0.7, false, &z, &y)).abs() < 1e-12);
        assert!((l - naive_binomial(0.3, &coef.weights, 0.7, true, &z, &y)).abs() < 1e-12);
        let h = hinge_loss(&coef, 2.5, z.view(), &y).unwrap();
        assert!((h - naive_hinge(0.3, &coef.weights, 2.5, &z, &y)).abs() < 1e-12);
    }

    #[test]
    fn hinge_edge_cases() {
        let (z, y) = random_problem(4, 10, 2);
        assert_eq!(hinge_loss(&Coefficients::zeros(2), 1.0, z.view(), &y).unwrap(), 1.0);
        assert!(hinge_loss(&Coefficients::zeros(2), 0.0, z.view(), &y).is_err());
        // all margins >= 1: only the penalty remains
        let z = array![[-2.0], [2.0]];
        let coef = Coefficients { intercept: 0.0, weights: vec![1.0] };
        let v = hinge_loss(&coef, 3.0, z.view(), &[1, 2]).unwrap();
        assert!((v - 1.0 / (2.0 * 2.0 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_penalty_errors() {
        let z = array![[1.0], [2.0]];
        assert!(binomial_loss(&Coefficients::zeros(2), &PenaltySpec::ridge(1.0).unwrap(), z.view(), &[1, 2]).is_err());
        assert!(binomial_loss(&Coefficients::zeros(1), &PenaltySpec::ridge(1.0).unwrap(), z.view(), &[1]).is_err());
        assert!(PenaltySpec::ridge(0.0).is_err());
        assert!(PenaltySpec::lasso(-1.0).is_err());
        assert!(fit_penalized_logistic(z.view(), &[1, 1], &PenaltySpec::ridge(1.0).unwrap(), &SolverConfig::default()).is_err());
    }

    #[test]
    fn balanced_zero_design_gives_zero_coefficients() {
        let z = Array2::zeros((6, 3));
        let y = [1, 2, 1, 2, 1, 2];
        for pen in [PenaltySpec::ridge(0.1).unwrap(), PenaltySpec::lasso(0.1).unwrap()] {
            let (c, rep) = fit_penalized_logistic(z.view(), &y, &pen, &SolverConfig::default()).unwrap();
            assert!(c.intercept.abs() < 1e-8 && c.weights.iter().all(|w| w.abs() < 1e-12), "{c:?}");
            assert!(rep.converged);
        }
        let (c, _) = fit_linear_svm(z.view(), &y, 1.0, &SolverConfig::default()).unwrap();
        assert!(c.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn ridge_gradient_matches_central_differences() {
        let (z, y) = random_problem(5, 30, 3);
        let coef = Coefficients { intercept: -0.2, weights: vec![0.4, 1.1, -0.7] };
        let lambda = 0.3;
        let g = ridge_gradient(&coef, lambda, z.view(), &y).unwrap();
        let pen = PenaltySpec::ridge(lambda).unwrap();
        let f = |w: &[f64]| binomial_loss(&Coefficients::from_slice(w), &pen, z.view(), &y).unwrap();
        let w0 = coef.to_vec();
        for j in 0..w0.len() {
            let h = 1e-5;
            let mut a = w0.clone();
            let mut b = w0.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() / g[j].abs().max(1e-3) < 1e-6, "j={j} fd={fd} g={}", g[j]);
        }
    }

    #[test]
    fn ridge_newton_beats_grid_search_and_is_monotone() {
        let (z, y) = random_problem(6, 20, 2);
        let pen = PenaltySpec::ridge(0.05).unwrap();
        let (c, rep) = fit_penalized_logistic(z.view(), &y, &pen, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.grad_norm_at_exit < 1e-8);
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let opt = binomial_loss(&c, &pen, z.view(), &y).unwrap();
        // 100 x 100 grid over the two weights, intercept profiled on a coarse grid
        let mut best = f64::INFINITY;
        for a in 0..100 {
            for b in 0..100 {
                let w1 = -3.0 + 6.0 * a as f64 / 99.0;
                let w2 = -3.0 + 6.0 * b as f64 / 99.0;
                for k in 0..21 {
                    let b0 = -1.0 + 2.0 * k as f64 / 20.0;
                    let v = naive_binomial(b0, &[w1, w2], 0.05, false, &z, &y);
                    best = best.min(v);
                }
            }
        }
        assert!(best - opt >= 0.0, "grid {best} < solver {opt}");
    }

    #[test]
    fn doubling_lambda_never_increases_weight_norm() {
        let (z, y) = random_problem(7, 40, 5);
        let cfg = SolverConfig::default();
        let mut prev = f64::INFINITY;
        for lambda in [0.01, 0.02, 0.04, 0.08, 0.16, 0.32] {
            let (c, _) = fit_penalized_logistic(z.view(), &y, &PenaltySpec::ridge(lambda).unwrap(), &cfg).unwrap();
            let nrm = c.weight_norm();
            assert!(nrm <= prev + 1e-10);
            prev = nrm;
        }
    }

    fn logistic_gradient_at(c: &Coefficients, z: &Array2<f64>, y: &[usize]) -> Vec<f64> {
        ridge_gradient(c, 0.0, z.view(), y).unwrap()
    }

    #[test]
    fn lasso_critical_threshold_zeroes_weights() {
        let (z, y) = random_problem(8, 40, 4);
        let n = y.len() as f64;
        let ybar = y.iter().map(|&l| (l - 1) as f64).sum::<f64>() / n;
        let crit = (0..4)
            .map(|j| (0..y.len()).map(|i| z[[i, j]] * ((y[i] - 1) as f64 - ybar)).sum::<f64>().abs() / n)
            .fold(0.0, f64::max);
        let cfg = SolverConfig { max_iter: 5000, ..SolverConfig::default() };
        // the penalty is (lambda / 2) ‖β‖₁, so the soft threshold sits at lambda / 2
        let (c, _) = fit_penalized_logistic(z.view(), &y, &PenaltySpec::lasso(2.0 * crit * 1.001).unwrap(), &cfg).unwrap();
        assert!(c.weights.iter().all(|&w| w == 0.0), "{c:?}");
        assert!((sigmoid(c.intercept) - ybar).abs() < 1e-6);
        let (c, _) = fit_penalized_logistic(z.view(), &y, &PenaltySpec::lasso(2.0 * crit * 0.9).unwrap(), &cfg).unwrap();
        assert!(c.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn lasso_solution_satisfies_kkt() {
        let (z, y) = random_problem(9, 60, 6);
        let lambda = 0.05;
        let cfg = SolverConfig { max_iter: 20_000, tol: 1e-10, ..SolverConfig::default() };
        let (c, rep) = fit_penalized_logistic(z.view(), &y, &PenaltySpec::lasso(lambda).unwrap(), &cfg).unwrap();
        assert!(rep.converged);
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let g = logistic_gradient_at(&c, &z, &y);
        assert!(g[0].abs() < 1e-6);
        for j in 0..6 {
            let b = c.weights[j];
            if b == 0.0 {
                assert!(g[j + 1].abs() <= lambda / 2.0 + 1e-6);
            } else {
                assert!((g[j + 1] + lambda / 2.0 * b.signum()).abs() < 1e-6, "j={j}");
            }
        }
    }

    #[test]
    fn svm_separable_pair() {
        let z = array![[-1.0], [1.0]];
        let (c, _) = fit_linear_svm(z.view(), &[1, 2], 100.0, &SolverConfig::default()).unwrap();
        assert!(c.weights[0] > 0.0);
        assert!(c.decision(array![-1.0].view()) < 0.0);
        assert!(c.decision(array![1.0].view()) > 0.0);
    }

    #[test]
    fn svm_close_to_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y: Vec<usize> = (0..10).map(|i| 1 + i % 2).collect();
        let z = Array2::from_shape_fn((10, 1), |(i, _)| rng.random::<f64>() * 2.0 - 1.0 + if y[i] == 2 { 0.5 } else { -0.5 });
        let cost = 1.0;
        let (c, rep) = fit_linear_svm(z.view(), &y, cost, &SolverConfig::default()).unwrap();
        let mut best = f64::INFINITY;
        // coarse grid, then a refined grid around its argmin
        let mut center = (0.0, 0.0);
        let mut width = 10.0;
        for _ in 0..4 {
            let mut arg = center;
            for a in 0..=400 {
                for b in 0..=400 {
                    let b0 = center.0 - width + 2.0 * width * a as f64 / 400.0;
                    let b1 = center.1 - width + 2.0 * width * b as f64 / 400.0;
                    let v = naive_hinge(b0, &[b1], cost, &z, &y);
                    if v < best {
                        best = v;
                        arg = (b0, b1);
                    }
                }
            }
            center = arg;
            width /= 20.0;
        }
        assert!((rep.final_loss - best).abs() < 1e-3, "solver {} grid {best}", rep.final_loss);
        assert!((hinge_loss(&c, cost, z.view(), &y).unwrap() - rep.final_loss).abs() < 1e-12);
    }

    #[test]
    fn losses_are_convex_along_segments() {
        let (z, y) = random_problem(12, 30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut draw = || Coefficients {
            intercept: rng.random::<f64>() * 4.0 - 2.0,
            weights: (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        };
        for _ in 0..200 {
            let a = draw();
            let b = draw();
            let t = 0.37;
            let mix = Coefficients {
                intercept: t * a.intercept + (1.0 - t) * b.intercept,
                weights: a.weights.iter().zip(&b.weights).map(|(u, v)| t * u + (1.0 - t) * v).collect(),
            };
            for pen in [PenaltySpec::ridge(0.2).unwrap(), PenaltySpec::lasso(0.2).unwrap()] {
                let f = |c: &Coefficients| binomial_loss(c, &pen, z.view(), &y).unwrap();
                assert!(f(&mix) <= t * f(&a) + (1.0 - t) * f(&b) + 1e-10);
            }
            let h = |c: &Coefficients| hinge_loss(c, 0.5, z.view(), &y).unwrap();
            assert!(h(&mix) <= t * h(&a) + (1.0 - t) * h(&b) + 1e-10);
        }
    }
}
