//! Labeled observation matrices and the dense CSV format.
//!
//! The CSV layout is a header row whose first column is `label`, followed by
//! one numeric column per variable. Labels are positive integers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{domain, EqcError, Result};

/// An `n × p` observation matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    labels: Vec<usize>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, labels, names)
    }

    pub fn with_names(x: Array2<f64>, labels: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(EqcError::Dimension(format!(
                "{} rows but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if names.len() != x.ncols() {
            return Err(EqcError::Dimension(format!(
                "{} columns but {} names",
                x.ncols(),
                names.len()
            )));
        }
        if labels.iter().any(|&l| l == 0) {
            return Err(domain!("class labels must be positive integers"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EqcError::Data("non-finite value in observation matrix".into()));
        }
        Ok(Dataset { x, labels, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    /// Distinct labels in increasing order.
    pub fn class_ids(&self) -> Vec<usize> {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        let ids = self.class_ids();
        ids.iter()
            .map(|&k| (k, self.labels.iter().filter(|&&l| l == k).count()))
            .collect()
    }

    /// Row indices belonging to class `k`.
    pub fn rows_of_class(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == k).then_some(i))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            names: self.names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(1), cols),
            labels: self.labels.clone(),
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
        }
    }

    /// Replaces labels, keeping the observations.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::with_names(self.x.clone(), labels, self.names.clone())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("label");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in self.x.outer_iter().enumerate() {
            write!(out, "{}", self.labels[i]).unwrap();
            for v in row.iter() {
                // `{}` on f64 is the shortest representation that parses back exactly.
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| EqcError::io(path, e))
    }
}

/// Reads a dense CSV dataset. Blank lines are ignored.
pub fn load_dense_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EqcError::io(path, e))?;
    parse_dense_csv(&text, path)
}

pub(crate) fn parse_dense_csv(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| EqcError::parse(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first().map(|c| c.trim_matches('"')) != Some("label") {
        return Err(EqcError::parse(
            path,
            1,
            "missing label column: first header field must be `label`",
        ));
    }
    let names: Vec<String> = cols[1..]
        .iter()
        .map(|c| c.trim_matches('"').to_string())
        .collect();
    let p = names.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != p + 1 {
            return Err(EqcError::parse(
                path,
                lineno,
                format!("expected {} fields, found {}", p + 1, fields.len()),
            ));
        }
        let label: usize = fields[0].parse().map_err(|_| {
            EqcError::parse(path, lineno, format!("invalid label `{}`", fields[0]))
        })?;
        if label == 0 {
            return Err(EqcError::parse(path, lineno, "labels must be positive"));
        }
        labels.push(label);
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                EqcError::parse(
                    path,
                    lineno,
                    format!("non-numeric value `{f}` in column `{}`", names[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(EqcError::parse(path, lineno, format!("non-finite value `{f}`")));
            }
            values.push(v);
        }
    }
    let n = labels.len();
    let x = Array2::from_shape_vec((n, p), values)
        .map_err(|e| EqcError::Data(format!("cannot shape matrix: {e}")))?;
    Dataset::with_names(x, labels, names)
}
