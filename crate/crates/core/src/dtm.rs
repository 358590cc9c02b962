//! Sparse document-term count matrices.
//!
//! The matrix file starts with a header line `n_docs n_terms n_entries`,
//! followed by one `doc term count` triple per line with 1-based indices.
//! The labels file holds one positive integer class per line.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{domain, EqcError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDtm {
    n_docs: usize,
    n_terms: usize,
    /// Zero-based `(doc, term, count)`, sorted by document then term.
    triples: Vec<(usize, usize, u64)>,
    term_names: Option<Vec<String>>,
    labels: Vec<usize>,
    /// Original term index of each current column.
    kept_terms: Vec<usize>,
}

impl SparseDtm {
    /// Validates zero-based triples.
    pub fn new(n_docs: usize, n_terms: usize, mut triples: Vec<(usize, usize, u64)>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != n_docs {
            return Err(EqcError::Dimension(format!("{n_docs} documents but {} labels", labels.len())));
        }
        if labels.iter().any(|&l| l == 0) {
            return Err(domain!("class labels must be positive integers"));
        }
        let mut seen = HashSet::with_capacity(triples.len());
        for &(d, t, c) in &triples {
            if d >= n_docs || t >= n_terms {
                return Err(EqcError::Data(format!(
                    "index out of range: doc {} term {} in a {n_docs}×{n_terms} matrix",
                    d + 1,
                    t + 1
                )));
            }
            if c == 0 {
                return Err(EqcError::Data(format!("non-positive count for doc {} term {}", d + 1, t + 1)));
            }
            if !seen.insert((d, t)) {
                return Err(EqcError::Data(format!("duplicate entry for doc {} term {}", d + 1, t + 1)));
            }
        }
        triples.sort_unstable();
        Ok(SparseDtm {
            n_docs,
            n_terms,
            triples,
            term_names: None,
            labels,
            kept_terms: (0..n_terms).collect(),
        })
    }

    pub fn with_term_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_terms {
            return Err(EqcError::Dimension(format!("{} terms but {} names", self.n_terms, names.len())));
        }
        self.term_names = Some(names);
        Ok(self)
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn triples(&self) -> &[(usize, usize, u64)] {
        &self.triples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn term_names(&self) -> Option<&[String]> {
        self.term_names.as_deref()
    }

    pub fn kept_terms(&self) -> &[usize] {
        &self.kept_terms
    }

    /// Number of documents containing each term.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0; self.n_terms];
        for &(_, t, _) in &self.triples {
            df[t] += 1;
        }
        df
    }

    pub fn densify(&self) -> Dataset {
        let mut x = Array2::zeros((self.n_docs, self.n_terms));
        for &(d, t, c) in &self.triples {
            x[[d, t]] = c as f64;
        }
        let names = match &self.term_names {
            Some(n) => n.clone(),
            None => self.kept_terms.iter().map(|t| format!("t{}", t + 1)).collect(),
        };
        Dataset::with_names(x, self.labels.clone(), names).expect("validated shape")
    }

    /// Sparse view of a dense count matrix; entries must be non-negative integers.
    pub fn from_dense(data: &Dataset) -> Result<Self> {
        let mut triples = Vec::new();
        for ((d, t), &v) in data.x().indexed_iter() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(EqcError::Data(format!("entry ({}, {}) = {v} is not a count", d + 1, t + 1)));
            }
            if v > 0.0 {
                triples.push((d, t, v as u64));
            }
        }
        SparseDtm::new(data.n(), data.p(), triples, data.labels().to_vec())?.with_term_names(data.names().to_vec())
    }

    /// Keeps terms that appear in at least `min_docs` documents.
    pub fn remove_low_frequency(&self, min_docs: usize) -> Result<SparseDtm> {
        if min_docs < 1 {
            return Err(domain!("min_docs must be at least 1"));
        }
        let df = self.document_frequencies();
        let keep: Vec<usize> = (0..self.n_terms).filter(|&t| df[t] >= min_docs).collect();
        if keep.is_empty() {
            return Err(EqcError::Data(format!("no term appears in {min_docs} or more documents")));
        }
        let mut remap = vec![usize::MAX; self.n_terms];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let triples = self
            .triples
            .iter()
            .filter(|&&(_, t, _)| remap[t] != usize::MAX)
            .map(|&(d, t, c)| (d, remap[t], c))
            .collect();
        Ok(SparseDtm {
            n_docs: self.n_docs,
            n_terms: keep.len(),
            triples,
            term_names: self.term_names.as_ref().map(|n| keep.iter().map(|&t| n[t].clone()).collect()),
            labels: self.labels.clone(),
            kept_terms: keep.iter().map(|&t| self.kept_terms[t]).collect(),
        })
    }

    /// Matrix file contents (1-based triples).
    pub fn to_matrix_string(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n_docs, self.n_terms, self.triples.len());
        for &(d, t, c) in &self.triples {
            writeln!(s, "{} {} {c}", d + 1, t + 1).expect("write to string");
        }
        s
    }

    pub fn save(&self, matrix_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
        let (mp, lp) = (matrix_path.as_ref(), labels_path.as_ref());
        fs::write(mp, self.to_matrix_string()).map_err(|e| EqcError::io(mp, e))?;
        let labels: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(lp, labels).map_err(|e| EqcError::io(lp, e))
    }
}

pub fn load_sparse_dtm(matrix_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<SparseDtm> {
    let (mp, lp) = (matrix_path.as_ref(), labels_path.as_ref());
    let matrix = fs::read_to_string(mp).map_err(|e| EqcError::io(mp, e))?;
    let labels = fs::read_to_string(lp).map_err(|e| EqcError::io(lp, e))?;
    parse_sparse_dtm(&matrix, mp, &labels, lp)
}

fn parse_fields<const N: usize>(line: &str, path: &Path, lineno: usize, what: &str) -> Result<[u64; N]> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != N {
        return Err(EqcError::parse(path, lineno, format!("{what}: expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0u64; N];
    for (o, f) in out.iter_mut().zip(&fields) {
        *o = f.parse().map_err(|_| {
            let msg = if f.starts_with('-') {
                format!("{what}: negative value `{f}`")
            } else {
                format!("{what}: invalid integer `{f}`")
            };
            EqcError::parse(path, lineno, msg)
        })?;
    }
    Ok(out)
}

pub fn parse_sparse_dtm(matrix: &str, matrix_path: &Path, labels: &str, labels_path: &Path) -> Result<SparseDtm> {
    let mut lines = matrix.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| EqcError::parse(matrix_path, 1, "empty matrix file"))?;
    let [n_docs, n_terms, n_entries] = parse_fields::<3>(header, matrix_path, 1, "header")?;
    let mut triples = Vec::with_capacity(n_entries as usize);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let [d, t, c] = parse_fields::<3>(line, matrix_path, lineno, "entry")?;
        if d == 0 || d > n_docs || t == 0 || t > n_terms {
            return Err(EqcError::parse(
                matrix_path,
                lineno,
                format!("index out of range: doc {d} term {t} in a {n_docs}×{n_terms} matrix"),
            ));
        }
        if c == 0 {
            return Err(EqcError::parse(matrix_path, lineno, format!("non-positive count for doc {d} term {t}")));
        }
        triples.push(((d - 1) as usize, (t - 1) as usize, c));
    }
    if triples.len() as u64 != n_entries {
        return Err(EqcError::parse(
            matrix_path,
            1,
            format!("header declares {n_entries} entries but the file has {}", triples.len()),
        ));
    }
    let mut label_vec = Vec::with_capacity(n_docs as usize);
    for (idx, line) in labels.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: usize = line
            .trim()
            .parse()
            .map_err(|_| EqcError::parse(labels_path, idx + 1, format!("invalid label `{}`", line.trim())))?;
        if l == 0 {
            return Err(EqcError::parse(labels_path, idx + 1, "labels must be positive"));
        }
        label_vec.push(l);
    }
    SparseDtm::new(n_docs as usize, n_terms as usize, triples, label_vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(m: &str, l: &str) -> Result<SparseDtm> {
        parse_sparse_dtm(m, Path::new("m.txt"), l, Path::new("l.txt"))
    }

    #[test]
    fn empty_documents_are_zero_rows() {
        let d = parse("3 2 2\n1 1 4\n3 2 1\n", "1\n2\n1\n").unwrap();
        let x = d.densify();
        assert_eq!(x.x().row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(x.x()[[0, 0]], 4.0);
        assert_eq!(x.labels(), &[1, 2, 1]);
    }

    #[test]
    fn rejects_malformed_input() {
        let header = parse("2 2 3\n1 1 1\n2 2 1\n", "1\n2\n").unwrap_err();
        assert!(header.to_string().contains("header declares 3"), "{header}");
        let range = parse("2 2 1\n3 1 1\n", "1\n2\n").unwrap_err();
        assert!(range.to_string().contains("out of range"), "{range}");
        assert!(matches!(range, EqcError::Parse { line: 2, .. }));
        let zero_index = parse("2 2 1\n0 1 1\n", "1\n2\n").unwrap_err();
        assert!(zero_index.to_string().contains("out of range"));
        let dup = parse("2 2 2\n1 1 1\n1 1 2\n", "1\n2\n").unwrap_err();
        assert!(dup.to_string().contains("duplicate"), "{dup}");
        let zero = parse("2 2 1\n1 1 0\n", "1\n2\n").unwrap_err();
        assert!(zero.to_string().contains("non-positive"), "{zero}");
        let neg = parse("2 2 1\n1 1 -3\n", "1\n2\n").unwrap_err();
        assert!(neg.to_string().contains("negative"), "{neg}");
        let labels = parse("2 2 0\n", "1\n").unwrap_err();
        assert!(matches!(labels, EqcError::Dimension(_)));
    }

    #[test]
    fn low_frequency_filter() {
        let d = parse("3 3 4\n1 1 1\n2 1 1\n2 2 5\n3 3 1\n", "1\n2\n1\n").unwrap();
        assert_eq!(d.remove_low_frequency(1).unwrap(), d);
        let f = d.remove_low_frequency(2).unwrap();
        assert_eq!(f.n_terms(), 1);
        assert_eq!(f.kept_terms(), &[0]);
        assert!(f.document_frequencies().iter().all(|&c| c >= 2));
        assert!(d.remove_low_frequency(4).is_err());
        assert!(d.remove_low_frequency(0).is_err());
        let named = d.clone().with_term_names(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let g = named.remove_low_frequency(1).unwrap().remove_low_frequency(2).unwrap();
        assert_eq!(g.term_names().unwrap(), &["a".to_string()]);
    }

    #[test]
    fn file_round_trip() {
        let d = parse("4 3 3\n4 3 7\n1 2 1\n2 2 2\n", "1\n1\n2\n2\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (m, l) = (dir.path().join("m.txt"), dir.path().join("l.txt"));
        d.save(&m, &l).unwrap();
        assert_eq!(load_sparse_dtm(&m, &l).unwrap(), d);
    }

    proptest! {
        #[test]
        fn sparse_dense_sparse_preserves_counts(
            n in 1usize..8, p in 1usize..8,
            cells in proptest::collection::vec((0usize..8, 0usize..8, 1u64..50), 0..30),
        ) {
            let mut seen = HashSet::new();
            let triples: Vec<_> = cells
                .into_iter()
                .filter(|&(d, t, _)| d < n && t < p && seen.insert((d, t)))
                .collect();
            let d = SparseDtm::new(n, p, triples, vec![1; n]).unwrap();
            let back = SparseDtm::from_dense(&d.densify()).unwrap();
            prop_assert_eq!(back.triples(), d.triples());
        }
    }
}
