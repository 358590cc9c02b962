//! Quantile distance, empirical quantiles and the quantile-difference
//! transformation that every classifier in this crate is built on.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};

/// Per-variable quantile levels, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileParams {
    theta: Vec<f64>,
    common: bool,
}

fn check_level(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(domain!("quantile level {theta} is outside (0, 1)"))
    }
}

impl QuantileParams {
    /// The same level for all `p` variables.
    pub fn common(theta: f64, p: usize) -> Result<Self> {
        check_level(theta)?;
        Ok(QuantileParams {
            theta: vec![theta; p],
            common: true,
        })
    }

    pub fn per_variable(theta: Vec<f64>) -> Result<Self> {
        for &t in &theta {
            check_level(t)?;
        }
        let common = theta.windows(2).all(|w| w[0].to_bits() == w[1].to_bits());
        Ok(QuantileParams { theta, common })
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_common(&self) -> bool {
        self.common
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Keeps only the listed variables.
    pub fn select(&self, cols: &[usize]) -> QuantileParams {
        let theta: Vec<f64> = cols.iter().map(|&j| self.theta[j]).collect();
        QuantileParams {
            common: self.common || theta.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()),
            theta,
        }
    }
}

/// Class-by-variable table of estimated quantiles `q[k, j]` at level `theta[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    q: Array2<f64>,
    theta: QuantileParams,
    class_ids: Vec<usize>,
}

impl QuantileTable {
    pub fn new(q: Array2<f64>, theta: QuantileParams, class_ids: Vec<usize>) -> Result<Self> {
        if q.nrows() != class_ids.len() || q.ncols() != theta.len() {
            return Err(EqcError::Dimension(format!(
                "table is {}x{} but there are {} classes and {} quantile levels",
                q.nrows(),
                q.ncols(),
                class_ids.len(),
                theta.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(domain!("quantile table has non-finite entries"));
        }
        Ok(QuantileTable { q, theta, class_ids })
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn theta(&self) -> &QuantileParams {
        &self.theta
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn p(&self) -> usize {
        self.q.ncols()
    }

    /// Row position of a class label.
    pub fn class_row(&self, k: usize) -> Result<usize> {
        self.class_ids
            .iter()
            .position(|&c| c == k)
            .ok_or_else(|| domain!("class {k} is not in the quantile table"))
    }
}

/// `rho_theta(u) = u * (theta - 1{u < 0})` without argument checks.
#[inline]
pub fn rho(u: f64, theta: f64) -> f64 {
    u * (theta - if u < 0.0 { 1.0 } else { 0.0 })
}

/// The quantile distance (check function) `rho_theta(u)`.
pub fn quantile_distance(u: f64, theta: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(domain!("quantile distance of non-finite value {u}"));
    }
    check_level(theta)?;
    Ok(rho(u, theta))
}

/// Linear interpolation of order statistics on an already sorted sample.
pub(crate) fn quantile_of_sorted(sorted: &[f64], theta: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * theta;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    // Clamping keeps the estimate monotone in theta despite rounding.
    (a + (h - lo as f64) * (b - a)).clamp(a, b)
}

/// Empirical `theta`-quantile: with sorted values `x(1..n)` and
/// `h = (n - 1) theta + 1`, returns `x(floor h) + frac(h) (x(floor h + 1) - x(floor h))`.
pub fn empirical_quantile(sample: &[f64], theta: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(domain!("empirical quantile of an empty sample"));
    }
    check_level(theta)?;
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(domain!("sample contains non-finite values"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_of_sorted(&sorted, theta))
}

/// Per-class sorted columns, so that quantile tables for many levels can be
/// produced from one sort.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    class_ids: Vec<usize>,
    // sorted[k][j] holds the class-k values of variable j in increasing order.
    sorted: Vec<Vec<Vec<f64>>>,
    p: usize,
}

impl SortedColumns {
    /// Sorts every variable within each class. `class_ids` fixes the row
    /// order of the resulting tables; every listed class needs at least one row.
    pub fn new(data: &Dataset, class_ids: &[usize]) -> Result<Self> {
        let mut sorted = Vec::with_capacity(class_ids.len());
        for &k in class_ids {
            let rows = data.rows_of_class(k);
            if rows.is_empty() {
                return Err(EqcError::Fit(format!("class {k} has no observations")));
            }
            let cols = (0..data.p())
                .map(|j| {
                    let mut v: Vec<f64> = rows.iter().map(|&i| data.x()[[i, j]]).collect();
                    v.sort_by(f64::total_cmp);
                    v
                })
                .collect();
            sorted.push(cols);
        }
        Ok(SortedColumns {
            class_ids: class_ids.to_vec(),
            sorted,
            p: data.p(),
        })
    }

    pub fn table(&self, theta: &QuantileParams) -> Result<QuantileTable> {
        if theta.len() != self.p {
            return Err(EqcError::Dimension(format!(
                "{} quantile levels for {} variables",
                theta.len(),
                self.p
            )));
        }
        let k = self.class_ids.len();
        let mut q = Array2::zeros((k, self.p));
        for (r, cols) in self.sorted.iter().enumerate() {
            for (j, col) in cols.iter().enumerate() {
                q[[r, j]] = quantile_of_sorted(col, theta.values()[j]);
            }
        }
        QuantileTable::new(q, theta.clone(), self.class_ids.clone())
    }
}

/// Estimates `q[k, j]` as the empirical `theta[j]`-quantile of variable `j`
/// within class `k`, for every class present in `data`.
pub fn estimate_quantile_table(data: &Dataset, theta: &QuantileParams) -> Result<QuantileTable> {
    SortedColumns::new(data, &data.class_ids())?.table(theta)
}

/// Writes the quantile-difference transform of `x` for the table rows `r1`
/// and `r2` into `out`.
#[inline]
pub(crate) fn transform_rows_into(
    x: ArrayView1<'_, f64>,
    table: &QuantileTable,
    r1: usize,
    r2: usize,
    out: &mut [f64],
) {
    let theta = table.theta.values();
    let q1 = table.q.row(r1);
    let q2 = table.q.row(r2);
    for j in 0..out.len() {
        let t = theta[j];
        out[j] = rho(x[j] - q1[j], t) - rho(x[j] - q2[j], t);
    }
}

/// Quantile-difference transform
/// `Q_j(x) = rho_theta_j(x_j - q[k1, j]) - rho_theta_j(x_j - q[k2, j])`.
pub fn quantile_difference_transform(
    x: ArrayView1<'_, f64>,
    table: &QuantileTable,
    k1: usize,
    k2: usize,
) -> Result<Vec<f64>> {
    if x.len() != table.p() {
        return Err(EqcError::Dimension(format!(
            "input has {} variables, table has {}",
            x.len(),
            table.p()
        )));
    }
    let r1 = table.class_row(k1)?;
    let r2 = table.class_row(k2)?;
    let mut out = vec![0.0; x.len()];
    transform_rows_into(x, table, r1, r2, &mut out);
    Ok(out)
}

/// Applies the `(k1, k2)` transform to every row of `x`.
pub fn transform_matrix(
    x: ArrayView2<'_, f64>,
    table: &QuantileTable,
    k1: usize,
    k2: usize,
) -> Result<Array2<f64>> {
    if x.ncols() != table.p() {
        return Err(EqcError::Dimension(format!(
            "input has {} variables, table has {}",
            x.ncols(),
            table.p()
        )));
    }
    let r1 = table.class_row(k1)?;
    let r2 = table.class_row(k2)?;
    let mut z = Array2::zeros((x.nrows(), x.ncols()));
    for (i, row) in x.outer_iter().enumerate() {
        let out = z.row_mut(i).into_slice().expect("standard layout");
        transform_rows_into(row, table, r1, r2, out);
    }
    Ok(z)
}

/// Flags columns that are constant (up to rounding) over the rows of `z`.
pub fn constant_columns(z: ArrayView2<'_, f64>) -> Vec<bool> {
    z.columns()
        .into_iter()
        .map(|col| {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            col.is_empty() || hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs()))
        })
        .collect()
}
