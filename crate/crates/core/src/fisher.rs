//! Fisher's exact test on 2×2 presence tables and p-value feature ranking.

use std::cmp::Ordering;

use statrs::function::factorial::ln_binomial;

use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};

/// Relative tolerance when comparing table probabilities against the observed one.
pub const TIE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternative {
    /// Sum of every table no more probable than the observed one.
    #[default]
    TwoSided,
    /// `P(a' >= a)`.
    Greater,
    /// `P(a' <= a)`.
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = EqcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(domain!("unknown alternative `{other}` (expected two-sided, greater or less)")),
        }
    }
}

/// Exact p-value for the table `[[a, b], [c, d]]` with margins held fixed.
pub fn fisher_exact_pvalue(table: [[u64; 2]; 2], alternative: Alternative) -> f64 {
    let [[a, b], [c, d]] = table;
    let row1 = a + b;
    let col1 = a + c;
    let total = a + b + c + d;
    let lo = col1.saturating_sub(total - row1);
    let hi = row1.min(col1);
    // Probabilities relative to the largest, which keeps large tables in range.
    let log_p: Vec<f64> = (lo..=hi)
        .map(|x| ln_binomial(row1, x) + ln_binomial(total - row1, col1 - x))
        .collect();
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let norm: f64 = dens.iter().sum();
    let obs = (a - lo) as usize;
    let mass: f64 = match alternative {
        Alternative::TwoSided => {
            let cut = dens[obs] * (1.0 + TIE_TOLERANCE);
            dens.iter().filter(|&&v| v <= cut).sum()
        }
        Alternative::Greater => dens[obs..].iter().sum(),
        Alternative::Less => dens[..=obs].iter().sum(),
    };
    (mass / norm).min(1.0)
}

/// Presence/absence table of one column against two classes.
fn presence_table(data: &Dataset, j: usize, first: usize) -> [[u64; 2]; 2] {
    let mut t = [[0u64; 2]; 2];
    for (i, &label) in data.labels().iter().enumerate() {
        let present = if data.x()[[i, j]] > 0.0 { 0 } else { 1 };
        let class = if label == first { 0 } else { 1 };
        t[present][class] += 1;
    }
    t
}

/// Per-variable p-values; labels must take exactly two values.
pub fn fisher_pvalues(data: &Dataset, alternative: Alternative) -> Result<Vec<f64>> {
    let classes = data.class_ids();
    if classes.len() != 2 {
        return Err(domain!("Fisher selection needs two classes, found {}", classes.len()));
    }
    Ok((0..data.p())
        .map(|j| fisher_exact_pvalue(presence_table(data, j, classes[0]), alternative))
        .collect())
}

/// Indices of the `l` smallest p-values in increasing order, ties broken by
/// index. `l > p` is clamped to `p`.
pub fn fisher_exact_select(data: &Dataset, l: usize, alternative: Alternative) -> Result<Vec<usize>> {
    if l == 0 {
        return Err(domain!("number of selected variables must be positive"));
    }
    let pv = fisher_pvalues(data, alternative)?;
    let l = if l > pv.len() {
        log::warn!("requested {l} variables but only {} exist; keeping all", pv.len());
        pv.len()
    } else {
        l
    };
    let mut order: Vec<usize> = (0..pv.len()).collect();
    order.sort_by(|&i, &j| pv[i].partial_cmp(&pv[j]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    order.truncate(l);
    Ok(order)
}
