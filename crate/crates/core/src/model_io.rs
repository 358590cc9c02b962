//! Flat text serialization of fitted models.
//!
//! ```text
//! eqc-model 1
//! kind = ridge
//! penalty = 0.01
//! classes = 2
//! p = 3
//! class_ids = 1 2
//!
//! [theta]
//! values = 0.5 0.5 0.5
//!
//! [table]
//! row = 0.1 -0.2 1.5
//! row = 0.3 0.0 1.9
//!
//! [coefficients]
//! intercept = -0.25
//! weights = 1.1 0 0.7
//!
//! [scaling]
//! center = ...
//! scale = ...
//! ```
//!
//! Multiclass models store `intercepts = ...` (`K - 1` values) instead of
//! `intercept`. Floats are written in shortest round-trip form, so a saved
//! model loads back bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::binary::{FittedEqc, MetalearnerKind, ModelCoefficients, Scaling};
use crate::error::{EqcError, Result};
use crate::metalearner::Coefficients;
use crate::multiclass::MulticlassCoefficients;
use crate::quantile::{QuantileParams, QuantileTable};

const MAGIC: &str = "eqc-model";
const VERSION: u32 = 1;

fn join(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").unwrap();
    }
    s
}

pub fn model_to_string(model: &FittedEqc) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    let ids = model.class_ids();
    writeln!(out, "kind = {}", model.kind().name()).unwrap();
    match model.penalty() {
        Some(v) => writeln!(out, "penalty = {v}").unwrap(),
        None => writeln!(out, "penalty = none").unwrap(),
    }
    writeln!(out, "classes = {}", ids.len()).unwrap();
    writeln!(out, "p = {}", model.p()).unwrap();
    let id_str: Vec<String> = ids.iter().map(|k| k.to_string()).collect();
    writeln!(out, "class_ids = {}", id_str.join(" ")).unwrap();

    writeln!(out, "\n[theta]\nvalues = {}", join(model.theta().values())).unwrap();
    out.push_str("\n[table]\n");
    for row in model.table().q().outer_iter() {
        writeln!(out, "row = {}", join(&row.to_vec())).unwrap();
    }
    out.push_str("\n[coefficients]\n");
    match model.coefficients() {
        ModelCoefficients::Binary(c) => {
            writeln!(out, "intercept = {}", c.intercept).unwrap();
            writeln!(out, "weights = {}", join(&c.weights)).unwrap();
        }
        ModelCoefficients::Multiclass(c) => {
            writeln!(out, "intercepts = {}", join(&c.intercepts)).unwrap();
            writeln!(out, "weights = {}", join(&c.weights)).unwrap();
        }
    }
    if let Some(s) = model.scaling() {
        writeln!(out, "\n[scaling]\ncenter = {}\nscale = {}", join(&s.center), join(&s.scale)).unwrap();
    }
    out
}

pub fn save_model(model: &FittedEqc, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| EqcError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedEqc> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EqcError::io(path, e))?;
    parse_model(&text, path)
}

/// Entries of one section, keyed by name, with the line each came from.
type Section = Vec<(String, String, usize)>;

struct Parsed<'a> {
    path: &'a Path,
    sections: HashMap<String, Section>,
}

impl Parsed<'_> {
    fn get(&self, section: &str, key: &str) -> Result<(&str, usize)> {
        self.sections
            .get(section)
            .and_then(|s| s.iter().find(|(k, _, _)| k == key))
            .map(|(_, v, l)| (v.as_str(), *l))
            .ok_or_else(|| EqcError::parse(self.path, 0, format!("missing `{key}` in section [{section}]")))
    }

    fn opt(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.get(section, key).ok()
    }

    fn all(&self, section: &str, key: &str) -> Vec<(&str, usize)> {
        self.sections
            .get(section)
            .map(|s| s.iter().filter(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l)).collect())
            .unwrap_or_default()
    }

    fn floats(&self, (v, line): (&str, usize)) -> Result<Vec<f64>> {
        v.split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| EqcError::parse(self.path, line, format!("invalid number `{t}`")))
            })
            .collect()
    }

    fn usize(&self, (v, line): (&str, usize)) -> Result<usize> {
        v.trim().parse().map_err(|_| EqcError::parse(self.path, line, format!("invalid count `{v}`")))
    }
}

pub fn parse_model(text: &str, path: &Path) -> Result<FittedEqc> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (_, header) = lines.next().ok_or_else(|| EqcError::parse(path, 1, "empty model file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(EqcError::parse(path, 1, format!("not a model file (expected `{MAGIC}` header)")));
    }
    match head.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        Some(v) => return Err(EqcError::parse(path, 1, format!("unsupported model version {v}"))),
        None => return Err(EqcError::parse(path, 1, "missing model version")),
    }

    let mut sections: HashMap<String, Section> = HashMap::new();
    let mut current = String::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| EqcError::parse(path, lineno, format!("expected `key = value`, found `{t}`")))?;
        sections.entry(current.clone()).or_default().push((k.trim().to_string(), v.trim().to_string(), lineno));
    }
    let parsed = Parsed { path, sections };

    let (kind_s, kind_line) = parsed.get("", "kind")?;
    let kind = MetalearnerKind::from_name(kind_s)
        .ok_or_else(|| EqcError::parse(path, kind_line, format!("unknown metalearner kind `{kind_s}`")))?;
    let penalty = match parsed.get("", "penalty")? {
        ("none", _) => None,
        pv => Some(parsed.floats(pv)?.first().copied().ok_or_else(|| EqcError::parse(path, pv.1, "empty penalty"))?),
    };
    let k = parsed.usize(parsed.get("", "classes")?)?;
    let p = parsed.usize(parsed.get("", "p")?)?;
    let ids_entry = parsed.get("", "class_ids")?;
    let class_ids = ids_entry
        .0
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| EqcError::parse(path, ids_entry.1, format!("invalid class id `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if class_ids.len() != k {
        return Err(EqcError::parse(path, ids_entry.1, format!("{} class ids for {k} classes", class_ids.len())));
    }

    let theta_entry = parsed.get("theta", "values")?;
    let theta_v = parsed.floats(theta_entry)?;
    if theta_v.len() != p {
        return Err(EqcError::parse(path, theta_entry.1, format!("{} theta values for p = {p}", theta_v.len())));
    }
    let theta = QuantileParams::per_variable(theta_v)?;

    let rows = parsed.all("table", "row");
    if rows.len() != k {
        return Err(EqcError::parse(path, 0, format!("{} table rows for {k} classes", rows.len())));
    }
    let mut q = Array2::zeros((k, p));
    for (r, entry) in rows.into_iter().enumerate() {
        let v = parsed.floats(entry)?;
        if v.len() != p {
            return Err(EqcError::parse(path, entry.1, format!("table row has {} values, expected {p}", v.len())));
        }
        for (j, x) in v.into_iter().enumerate() {
            q[[r, j]] = x;
        }
    }
    let table = QuantileTable::new(q, theta, class_ids)?;

    let weights = parsed.floats(parsed.get("coefficients", "weights")?)?;
    let coef = if let Some(e) = parsed.opt("coefficients", "intercepts") {
        ModelCoefficients::Multiclass(MulticlassCoefficients { weights, intercepts: parsed.floats(e)? })
    } else {
        let e = parsed.get("coefficients", "intercept")?;
        let b = parsed.floats(e)?;
        if b.len() != 1 {
            return Err(EqcError::parse(path, e.1, "intercept must be a single value"));
        }
        ModelCoefficients::Binary(Coefficients { intercept: b[0], weights })
    };

    let scaling = match parsed.opt("scaling", "center") {
        Some(c) => {
            let center = parsed.floats(c)?;
            let scale = parsed.floats(parsed.get("scaling", "scale")?)?;
            Some(Scaling::new(center, scale)?)
        }
        None => None,
    };
    FittedEqc::new(table, coef, kind, penalty, scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::{fit_binary_eqc_with, FitOptions, Learner, ScalingMode};
    use crate::data::Dataset;
    use crate::metalearner::{PenaltySpec, SolverConfig};
    use crate::multiclass::fit_multiclass_eqc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(k: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30 * k;
        let labels: Vec<usize> = (0..n).map(|i| 2 + i % k).collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| rng.random::<f64>() / 3.0 + (j == labels[i] % 3) as u8 as f64);
        Dataset::new(x, labels).unwrap()
    }

    fn assert_same(a: &FittedEqc, b: &FittedEqc) {
        let bits = |m: &FittedEqc| model_to_string(m);
        assert_eq!(bits(a), bits(b));
        for (x, y) in a.table().q().iter().zip(b.table().q().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.coefficients(), b.coefficients());
        assert_eq!(a.scaling(), b.scaling());
        assert_eq!(a.kind(), b.kind());
        assert_eq!(a.penalty(), b.penalty());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = data(2, 1);
        let opts = FitOptions { scaling: ScalingMode::Standard, ..FitOptions::default() };
        let m = fit_binary_eqc_with(&d, &QuantileParams::common(0.3, 3).unwrap(), &Learner::Penalized(PenaltySpec::lasso(0.01).unwrap()), &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_same(&m, &back);
        assert_eq!(back.predict_dataset(&d).unwrap(), m.predict_dataset(&d).unwrap());
    }

    #[test]
    fn multiclass_round_trip_keeps_class_count() {
        let d = data(3, 2);
        let m = fit_multiclass_eqc(&d, &QuantileParams::common(0.6, 3).unwrap(), 0.05, &SolverConfig::default()).unwrap();
        let text = model_to_string(&m);
        assert!(text.contains("classes = 3"));
        assert!(text.contains("class_ids = 2 3 4"));
        let back = parse_model(&text, Path::new("m")).unwrap();
        assert_same(&m, &back);
    }

    #[test]
    fn bad_files_are_rejected_with_context() {
        let e = parse_model("something else\n", Path::new("m")).unwrap_err();
        assert!(e.to_string().contains("not a model file"));
        let e = parse_model("eqc-model 9\n", Path::new("m")).unwrap_err();
        assert!(e.to_string().contains("unsupported model version 9"));
        let d = data(2, 3);
        let m = fit_binary_eqc_with(&d, &QuantileParams::common(0.5, 3).unwrap(), &Learner::UnitWeights, &FitOptions::default()).unwrap();
        let text = model_to_string(&m).replace("weights = 1 1 1", "weights = 1 x 1");
        match parse_model(&text, Path::new("m")).unwrap_err() {
            EqcError::Parse { line, msg, .. } => {
                assert!(msg.contains("invalid number `x`"));
                assert_eq!(text.lines().nth(line - 1).unwrap(), "weights = 1 x 1");
            }
            other => panic!("{other}"),
        }
    }
}
