//! Multiclass EQC: softmax over `-C(Q^{(k,K)}(x))` with one weight vector
//! shared by all classes and `K - 1` free intercepts.

use log::warn;
use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView1, Axis};

use crate::binary::{FitOptions, FittedEqc, MetalearnerKind, ModelCoefficients, Scaling};
use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};
use crate::metalearner::{newton_direction, norm, SolverConfig, SolverReport};
use crate::quantile::{constant_columns, estimate_quantile_table, transform_rows_into, QuantileParams, QuantileTable};

/// Shared weights `β` and intercepts `β_{0,1..K-1}` (`β_{0,K} = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassCoefficients {
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl MulticlassCoefficients {
    pub fn zeros(p: usize, n_classes: usize) -> Self {
        MulticlassCoefficients { weights: vec![0.0; p], intercepts: vec![0.0; n_classes.saturating_sub(1)] }
    }

    pub fn n_classes(&self) -> usize {
        self.intercepts.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.intercepts).all(|v| v.is_finite())
    }

    /// Parameter vector `(β, β_0)`, the layout used by gradients and Hessians.
    pub fn to_vec(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.intercepts).copied().collect()
    }

    pub fn from_slice(w: &[f64], p: usize) -> Self {
        MulticlassCoefficients { weights: w[..p].to_vec(), intercepts: w[p..].to_vec() }
    }

    /// `C_k = β_{0,k} + β · z_k` for each class, with `z_K = 0`.
    fn discriminants(&self, q: &[Vec<f64>]) -> Vec<f64> {
        let k = self.n_classes();
        (0..k)
            .map(|c| {
                if c + 1 == k {
                    0.0
                } else {
                    self.intercepts[c] + q[c].iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
                }
            })
            .collect()
    }
}

/// Softmax of `eta` with max subtraction; returns `(probabilities, log-sum-exp)`.
fn softmax(eta: &[f64]) -> (Vec<f64>, f64) {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), m + s.ln())
}

/// Per-observation blocks `Q_i` (`K × p`, row `k` is `-Q^{(k,K)}(x_i)`) and
/// the class index of each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassDesign {
    blocks: Array3<f64>,
    class_index: Vec<usize>,
}

impl MulticlassDesign {
    /// Builds the design from raw observations; `labels` must be classes of `table`.
    pub fn new(x: ndarray::ArrayView2<'_, f64>, table: &QuantileTable, labels: &[usize]) -> Result<Self> {
        if x.ncols() != table.p() {
            return Err(EqcError::Dimension(format!("input has {} variables, table has {}", x.ncols(), table.p())));
        }
        if x.nrows() != labels.len() {
            return Err(EqcError::Dimension(format!("{} rows but {} labels", x.nrows(), labels.len())));
        }
        let k = table.n_classes();
        if k < 2 {
            return Err(domain!("multiclass design needs at least two classes"));
        }
        let class_index = labels.iter().map(|&l| table.class_row(l)).collect::<Result<Vec<_>>>()?;
        let p = table.p();
        let mut blocks = Array3::zeros((x.nrows(), k, p));
        let mut buf = vec![0.0; p];
        for (i, row) in x.outer_iter().enumerate() {
            for c in 0..k - 1 {
                transform_rows_into(row, table, c, k - 1, &mut buf);
                for j in 0..p {
                    blocks[[i, c, j]] = -buf[j];
                }
            }
        }
        Ok(MulticlassDesign { blocks, class_index })
    }

    /// Wraps precomputed blocks; the last row of every block must be zero.
    pub fn from_blocks(blocks: Array3<f64>, class_index: Vec<usize>) -> Result<Self> {
        let (n, k, _) = blocks.dim();
        if n != class_index.len() {
            return Err(EqcError::Dimension(format!("{n} blocks but {} labels", class_index.len())));
        }
        if k < 2 {
            return Err(domain!("multiclass design needs at least two classes"));
        }
        if class_index.iter().any(|&c| c >= k) {
            return Err(domain!("class index out of range 0..{k}"));
        }
        if blocks.index_axis(Axis(1), k - 1).iter().any(|&v| v != 0.0) {
            return Err(domain!("row K of every block must be zero"));
        }
        Ok(MulticlassDesign { blocks, class_index })
    }

    pub fn n(&self) -> usize {
        self.blocks.dim().0
    }

    pub fn n_classes(&self) -> usize {
        self.blocks.dim().1
    }

    pub fn p(&self) -> usize {
        self.blocks.dim().2
    }

    pub fn blocks(&self) -> &Array3<f64> {
        &self.blocks
    }

    /// Zero-based class index of each observation.
    pub fn class_index(&self) -> &[usize] {
        &self.class_index
    }

    /// One-hot `K × n` indicator matrix `Y`.
    pub fn indicator(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.n_classes(), self.n()));
        for (i, &c) in self.class_index.iter().enumerate() {
            y[[c, i]] = 1.0;
        }
        y
    }

    fn check(&self, coef: &MulticlassCoefficients) -> Result<()> {
        if coef.weights.len() != self.p() || coef.n_classes() != self.n_classes() {
            return Err(EqcError::Dimension(format!(
                "coefficients for p={}, K={} but design has p={}, K={}",
                coef.weights.len(),
                coef.n_classes(),
                self.p(),
                self.n_classes()
            )));
        }
        Ok(())
    }

    /// Linear predictor `η_k = -C_k` of observation `i` for parameters `w`.
    fn eta(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let (_, k, p) = self.blocks.dim();
        let b = self.blocks.index_axis(Axis(0), i);
        for c in 0..k {
            let mut s: f64 = b.row(c).iter().zip(&w[..p]).map(|(a, b)| a * b).sum();
            if c + 1 < k {
                s -= w[p + c];
            }
            out[c] = s;
        }
    }

    /// Column `a` of the augmented design row for class `c`.
    #[inline]
    fn entry(&self, i: usize, c: usize, a: usize) -> f64 {
        let p = self.p();
        if a < p {
            self.blocks[[i, c, a]]
        } else if a - p == c {
            -1.0
        } else {
            0.0
        }
    }

    /// Drops weight columns `j` for which every class slice is constant over observations.
    fn constant_weight_columns(&self) -> Vec<bool> {
        let k = self.n_classes();
        let mut out = vec![true; self.p()];
        for c in 0..k - 1 {
            let slice = self.blocks.index_axis(Axis(1), c);
            for (o, flag) in out.iter_mut().zip(constant_columns(slice)) {
                *o &= flag;
            }
        }
        out
    }

    fn select_weights(&self, keep: &[usize]) -> MulticlassDesign {
        MulticlassDesign { blocks: self.blocks.select(Axis(2), keep), class_index: self.class_index.clone() }
    }
}

/// Class probabilities `P(y = k | x)` in table order.
pub fn class_probabilities(
    x: ArrayView1<'_, f64>,
    table: &QuantileTable,
    coef: &MulticlassCoefficients,
) -> Result<Vec<f64>> {
    let k = table.n_classes();
    if k < 2 {
        return Err(domain!("class probabilities need K >= 2, table has {k}"));
    }
    if x.len() != table.p() || coef.weights.len() != table.p() || coef.n_classes() != k {
        return Err(EqcError::Dimension("input, table and coefficients disagree".into()));
    }
    let mut q = vec![vec![0.0; table.p()]; k];
    for (c, qc) in q.iter_mut().enumerate().take(k - 1) {
        transform_rows_into(x, table, c, k - 1, qc);
    }
    let eta: Vec<f64> = coef.discriminants(&q).iter().map(|c| -c).collect();
    Ok(softmax(&eta).0)
}

fn loglik_at(w: &[f64], design: &MulticlassDesign, lambda: f64) -> f64 {
    let p = design.p();
    let mut eta = vec![0.0; design.n_classes()];
    let mut total = 0.0;
    for i in 0..design.n() {
        design.eta(i, w, &mut eta);
        let (_, lse) = softmax(&eta);
        total += eta[design.class_index[i]] - lse;
    }
    total / design.n() as f64 - 0.5 * lambda * w[..p].iter().map(|b| b * b).sum::<f64>()
}

fn gradient_at(w: &[f64], design: &MulticlassDesign, lambda: f64) -> Vec<f64> {
    let (n, k, p) = design.blocks.dim();
    let m = w.len();
    let mut g = vec![0.0; m];
    let mut eta = vec![0.0; k];
    for i in 0..n {
        design.eta(i, w, &mut eta);
        let (pi, _) = softmax(&eta);
        for c in 0..k {
            let r = f64::from(u8::from(design.class_index[i] == c)) - pi[c];
            if r == 0.0 {
                continue;
            }
            for (a, ga) in g.iter_mut().enumerate() {
                *ga += r * design.entry(i, c, a);
            }
        }
    }
    for (a, ga) in g.iter_mut().enumerate() {
        *ga /= n as f64;
        if a < p {
            *ga -= lambda * w[a];
        }
    }
    g
}

/// Hessian of the regularized log-likelihood (negative semi-definite).
fn hessian_at(w: &[f64], design: &MulticlassDesign, lambda: f64) -> DMatrix<f64> {
    let (n, k, p) = design.blocks.dim();
    let m = w.len();
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut eta = vec![0.0; k];
    let mut d = vec![0.0; m];
    let mut mean = vec![0.0; m];
    for i in 0..n {
        design.eta(i, w, &mut eta);
        let (pi, _) = softmax(&eta);
        mean.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..k {
            for a in 0..m {
                d[a] = design.entry(i, c, a);
                mean[a] += pi[c] * d[a];
            }
            for a in 0..m {
                let da = pi[c] * d[a];
                if da == 0.0 {
                    continue;
                }
                for b in a..m {
                    h[(a, b)] -= da * d[b];
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                h[(a, b)] += mean[a] * mean[b];
            }
        }
    }
    for a in 0..m {
        for b in a..m {
            h[(a, b)] /= n as f64;
        }
        if a < p {
            h[(a, a)] -= lambda;
        }
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

/// `(1/n) Σ log P(y_i | x_i) - (λ/2) ||β||²`; intercepts are not penalized.
pub fn regularized_loglik(coef: &MulticlassCoefficients, design: &MulticlassDesign, lambda: f64) -> Result<f64> {
    design.check(coef)?;
    Ok(loglik_at(&coef.to_vec(), design, lambda))
}

/// Gradient over `(β, β_0)`, length `p + K - 1`.
pub fn loglik_gradient(coef: &MulticlassCoefficients, design: &MulticlassDesign, lambda: f64) -> Result<Vec<f64>> {
    design.check(coef)?;
    Ok(gradient_at(&coef.to_vec(), design, lambda))
}

/// Hessian over `(β, β_0)`, `(p + K - 1)` square.
pub fn loglik_hessian(coef: &MulticlassCoefficients, design: &MulticlassDesign, lambda: f64) -> Result<Array2<f64>> {
    design.check(coef)?;
    let h = hessian_at(&coef.to_vec(), design, lambda);
    Ok(Array2::from_shape_fn((h.nrows(), h.ncols()), |(a, b)| h[(a, b)]))
}

/// The intercept-free, unnormalized log-likelihood in stacked-matrix form:
/// `Q` is the `nK × p` stack of the blocks, `B_1 = diag_n(1_K)`.
/// These evaluate the expressions literally and are not overflow-safe.
pub mod matrix_form {
    use ndarray::{Array1, Array2};

    use super::MulticlassDesign;

    fn stacked(design: &MulticlassDesign) -> Array2<f64> {
        let (n, k, p) = design.blocks.dim();
        design.blocks.to_owned().into_shape_with_order((n * k, p)).expect("contiguous blocks")
    }

    fn exp_q_beta(q: &Array2<f64>, beta: &[f64]) -> Array1<f64> {
        q.dot(&Array1::from(beta.to_vec())).mapv(f64::exp)
    }

    /// `C = B_1 exp[Qβ]`, length `n`.
    fn c_vec(e: &Array1<f64>, n: usize, k: usize) -> Array1<f64> {
        Array1::from_iter((0..n).map(|i| e.slice(ndarray::s![i * k..(i + 1) * k]).sum()))
    }

    /// `vec(Y)ᵀ Q β - 1_n log[B_1 exp[Qβ]]`.
    pub fn loglik(beta: &[f64], design: &MulticlassDesign) -> f64 {
        let (n, k, _) = design.blocks.dim();
        let q = stacked(design);
        let vy = design.indicator().t().iter().copied().collect::<Array1<f64>>();
        let qb = q.dot(&Array1::from(beta.to_vec()));
        let c = c_vec(&qb.mapv(f64::exp), n, k);
        vy.dot(&qb) - c.mapv(f64::ln).sum()
    }

    /// `vec(Y)ᵀ Q - 1_n W_2 A` with `A = B_1 W_1 Q`, `W_2 = diag(1 / C)`.
    pub fn gradient(beta: &[f64], design: &MulticlassDesign) -> Vec<f64> {
        let (n, k, p) = design.blocks.dim();
        let q = stacked(design);
        let vy = design.indicator().t().iter().copied().collect::<Array1<f64>>();
        let e = exp_q_beta(&q, beta);
        let c = c_vec(&e, n, k);
        let a = a_matrix(&q, &e, n, k, p);
        let mut g = q.t().dot(&vy);
        for i in 0..n {
            for j in 0..p {
                g[j] -= a[[i, j]] / c[i];
            }
        }
        g.to_vec()
    }

    fn a_matrix(q: &Array2<f64>, e: &Array1<f64>, n: usize, k: usize, p: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, p));
        for r in 0..n * k {
            for j in 0..p {
                a[[r / k, j]] += e[r] * q[[r, j]];
            }
        }
        a
    }

    /// `Aᵀ W_2² A - Qᵀ W_3 W_1 Q`, `W_1 = diag(exp[Qβ])`, `W_3` repeating `1 / C_i` over each block.
    pub fn hessian(beta: &[f64], design: &MulticlassDesign) -> Array2<f64> {
        let (n, k, p) = design.blocks.dim();
        let q = stacked(design);
        let e = exp_q_beta(&q, beta);
        let c = c_vec(&e, n, k);
        let a = a_matrix(&q, &e, n, k, p);
        let mut w2a = a.clone();
        for i in 0..n {
            w2a.row_mut(i).mapv_inplace(|v| v / c[i]);
        }
        let mut w31q = q.clone();
        for r in 0..n * k {
            let s = e[r] / c[r / k];
            w31q.row_mut(r).mapv_inplace(|v| v * s);
        }
        w2a.t().dot(&w2a) - q.t().dot(&w31q)
    }
}

/// Newton ascent with Armijo backtracking on `design`. Weight columns that
/// are constant for every class are held at 0.
pub(crate) fn fit_design(
    design: &MulticlassDesign,
    lambda: f64,
    config: &SolverConfig,
    init: Option<&MulticlassCoefficients>,
) -> Result<(MulticlassCoefficients, SolverReport)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain!("lambda must be finite and non-negative, got {lambda}"));
    }
    let (n, k, p) = design.blocks.dim();
    if n == 0 {
        return Err(EqcError::Fit("no observations".into()));
    }
    for c in 0..k {
        if !design.class_index.contains(&c) {
            return Err(EqcError::Fit(format!("class index {c} has no observations")));
        }
    }
    let keep: Vec<usize> = design
        .constant_weight_columns()
        .iter()
        .enumerate()
        .filter_map(|(j, &c)| (!c).then_some(j))
        .collect();
    let reduced;
    let d = if keep.len() == p {
        design
    } else {
        reduced = design.select_weights(&keep);
        &reduced
    };
    let pk = keep.len();
    let mut w: Vec<f64> = match init {
        Some(c) if c.weights.len() == p && c.n_classes() == k && c.is_finite() => {
            keep.iter().map(|&j| c.weights[j]).chain(c.intercepts.iter().copied()).collect()
        }
        _ => vec![0.0; pk + k - 1],
    };

    let objective = |w: &[f64]| -loglik_at(w, d, lambda);
    let mut fw = objective(&w);
    let mut trace = vec![fw];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    while iterations < config.max_iter {
        let g: Vec<f64> = gradient_at(&w, d, lambda).iter().map(|v| -v).collect();
        grad_norm = norm(&g);
        if grad_norm < config.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let h = -hessian_at(&w, d, lambda);
        let mut dir = newton_direction(h, &g).unwrap_or_else(|| g.iter().map(|x| -x).collect());
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            dir = g.iter().map(|x| -x).collect();
            slope = -grad_norm * grad_norm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let cand: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fc = objective(&cand);
            if fc <= fw + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let stalled = (fw - fc).abs() <= f64::EPSILON * fw.abs();
                w = cand;
                fw = fc;
                trace.push(fc);
                if stalled && grad_norm < config.tol.sqrt() {
                    converged = true;
                    break;
                }
            }
            None => break,
        }
    }
    if !converged {
        grad_norm = norm(&gradient_at(&w, d, lambda));
        converged = grad_norm < config.tol;
        if !converged {
            warn!("multiclass Newton stopped after {iterations} iterations with gradient norm {grad_norm:.3e}");
        }
    }
    let mut weights = vec![0.0; p];
    for (v, &j) in w[..pk].iter().zip(&keep) {
        weights[j] = *v;
    }
    let coef = MulticlassCoefficients { weights, intercepts: w[pk..].to_vec() };
    let report = SolverReport {
        final_loss: fw,
        iterations: iterations.max(1),
        converged,
        grad_norm_at_exit: grad_norm,
        loss_trace: trace,
    };
    Ok((coef, report))
}

/// L2-regularized maximum-likelihood multiclass EQC.
pub fn fit_multiclass_eqc(
    train: &Dataset,
    theta: &QuantileParams,
    lambda: f64,
    config: &SolverConfig,
) -> Result<FittedEqc> {
    let opts = FitOptions { solver: config.clone(), ..FitOptions::default() };
    fit_multiclass_eqc_with(train, theta, lambda, &opts)
}

pub fn fit_multiclass_eqc_with(
    train: &Dataset,
    theta: &QuantileParams,
    lambda: f64,
    options: &FitOptions,
) -> Result<FittedEqc> {
    let ids = train.class_ids();
    if ids.len() < 2 {
        return Err(EqcError::Fit(format!("need at least two classes, found {}", ids.len())));
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
    let design = MulticlassDesign::new(data.x().view(), &table, data.labels())?;
    let (coef, report) = fit_design(&design, lambda, &options.solver, None)?;
    let mut model = FittedEqc::new(
        table,
        ModelCoefficients::Multiclass(coef),
        MetalearnerKind::MulticlassRidge,
        Some(lambda),
        scaling,
    )?;
    model.report = Some(report);
    Ok(model)
}

/// Index of the largest value; ties go to the first.
pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Zero-based class index with the largest probability for each design row.
pub(crate) fn predict_design(design: &MulticlassDesign, coef: &MulticlassCoefficients) -> Vec<usize> {
    let w = coef.to_vec();
    let mut eta = vec![0.0; design.n_classes()];
    (0..design.n())
        .map(|i| {
            design.eta(i, &w, &mut eta);
            argmax_first(&eta)
        })
        .collect()
}

/// Most probable class; ties go to the smallest class id.
pub fn predict_multiclass(x: ArrayView1<'_, f64>, model: &FittedEqc) -> Result<usize> {
    let coef = match model.coefficients() {
        ModelCoefficients::Multiclass(c) => c,
        ModelCoefficients::Binary(_) => return Err(domain!("model is not multiclass")),
    };
    if x.len() != model.p() {
        return Err(EqcError::Dimension(format!("input has {} variables, model has {}", x.len(), model.p())));
    }
    let xs = match model.scaling() {
        Some(s) => s.apply(x.insert_axis(Axis(0))).row(0).to_owned(),
        None => x.to_owned(),
    };
    let probs = class_probabilities(xs.view(), model.table(), coef)?;
    Ok(model.class_ids()[argmax_first(&probs)])
}
