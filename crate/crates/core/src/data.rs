//! Tabular datasets: CSV ingestion, descriptive statistics, fold plans and
//! materialization of feature matrices.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{ColumnLookup, ExprError, FeatureExpr};

/// Smallest accepted row count.
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at row {row}, column {col} (`{column}`): {message}")]
    ParseError {
        row: usize,
        col: usize,
        column: String,
        message: String,
    },
    #[error("target column `{0}` not found")]
    TargetNotFound(String),
    #[error("dataset has {0} rows, at least {MIN_ROWS} required")]
    TooFewRows(usize),
    #[error("classification target needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid frame: {0}")]
    Invalid(String),
    #[error("k = {k} folds requested for {n} rows")]
    KTooLarge { k: usize, n: usize },
    #[error("selection keeps {kept} features, at least {floor} required")]
    EmptySelection { kept: usize, floor: usize },
    #[error("mask has {found} bits, expected {expected}")]
    MaskLength { expected: usize, found: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn metric_names(self) -> (&'static str, &'static str) {
        match self {
            Task::Classification => ("f1_macro", "accuracy"),
            Task::Regression => ("1-mse", "r2"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

/// Target column selector: a header name, or a 0-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Name(String),
    Index(usize),
}

impl TargetSpec {
    /// A name that matches a header wins over a numeric reading.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => TargetSpec::Index(i),
            Err(_) => TargetSpec::Name(s.to_string()),
        }
    }

    fn resolve(&self, headers: &[String]) -> Result<usize, DataError> {
        match self {
            TargetSpec::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::TargetNotFound(name.clone())),
            TargetSpec::Index(i) => {
                let as_name = i.to_string();
                if let Some(pos) = headers.iter().position(|h| *h == as_name) {
                    return Ok(pos);
                }
                if *i < headers.len() {
                    Ok(*i)
                } else {
                    Err(DataError::TargetNotFound(as_name))
                }
            }
        }
    }
}

/// An immutable numeric table with a separated target.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    target: Vec<f64>,
    target_name: String,
    task: Task,
    class_labels: Vec<String>,
}

impl Frame {
    /// Builds a frame from in-memory columns. Classification targets must be
    /// integer codes `0..C`.
    pub fn from_columns(
        columns: Vec<(String, Vec<f64>)>,
        target: Vec<f64>,
        task: Task,
    ) -> Result<Self, DataError> {
        let class_labels = match task {
            Task::Classification => {
                let mut max = 0usize;
                for &y in &target {
                    if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
                        return Err(DataError::Invalid(format!(
                            "classification label {y} is not a non-negative integer code"
                        )));
                    }
                    max = max.max(y as usize);
                }
                (0..=max).map(|c| c.to_string()).collect()
            }
            Task::Regression => Vec::new(),
        };
        Self::build(columns, target, "target".into(), task, class_labels)
    }

    fn build(
        columns: Vec<(String, Vec<f64>)>,
        target: Vec<f64>,
        target_name: String,
        task: Task,
        class_labels: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = target.len();
        if n < MIN_ROWS {
            return Err(DataError::TooFewRows(n));
        }
        if columns.is_empty() {
            return Err(DataError::Invalid("no feature columns".into()));
        }
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        let mut index = HashMap::new();
        for (i, (name, col)) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(DataError::Invalid(format!(
                    "column `{name}` has {} rows, target has {n}",
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().position(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!(
                    "column `{name}` has a non-finite value at row {bad}"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(DataError::Invalid(format!("duplicate column `{name}`")));
            }
            names.push(name);
            data.push(col);
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite target value".into()));
        }
        if task == Task::Classification {
            let mut seen = vec![false; class_labels.len().max(1)];
            for &y in &target {
                if let Some(s) = seen.get_mut(y as usize) {
                    *s = true;
                }
            }
            let distinct = seen.iter().filter(|s| **s).count();
            if distinct < 2 {
                return Err(DataError::TooFewClasses(distinct));
            }
        }
        Ok(Self {
            names,
            columns: data,
            index,
            target,
            target_name,
            task,
            class_labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_at(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Original label strings, indexed by class code. Empty for regression.
    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Row/column counts plus a SHA-256 over the values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, col) in self.names.iter().zip(&self.columns) {
            h.update(name.as_bytes());
            for v in col {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.target {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("{}x{}:{}", self.n_rows(), self.n_features(), hex)
    }

    /// Per-column statistics in column order.
    pub fn stats(&self) -> Vec<(String, ColumnStats)> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.clone(), ColumnStats::of(c)))
            .collect()
    }

    /// Stratified (classification) or plain shuffled fold assignment.
    pub fn kfolds(&self, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
        FoldPlan::new(&self.target, self.task, k, seed)
    }
}

impl ColumnLookup for Frame {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.columns[i].as_slice())
    }

    fn row_count(&self) -> Option<usize> {
        Some(self.n_rows())
    }
}

/// Reads a CSV with a header row. Classification labels may be arbitrary
/// strings; they are coded `0..C` in order of first appearance.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &TargetSpec,
    task: Task,
) -> Result<Frame, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, target, task)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    target: &TargetSpec,
    task: Task,
) -> Result<Frame, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target_col = target.resolve(&headers)?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut target_values = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = r + 2;
        if record.len() != headers.len() {
            return Err(DataError::ParseError {
                row,
                col: record.len(),
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let parse_err = |message: String| DataError::ParseError {
                row,
                col: c,
                column: headers[c].clone(),
                message,
            };
            if cell.is_empty() {
                return Err(parse_err("missing value".into()));
            }
            if c == target_col && task == Task::Classification {
                let next = labels.len();
                let code = *label_index.entry(cell.to_string()).or_insert_with(|| {
                    labels.push(cell.to_string());
                    next
                });
                target_values.push(code as f64);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("`{cell}` is not finite")));
            }
            if c == target_col {
                target_values.push(v);
            } else {
                columns[c].push(v);
            }
        }
    }

    let target_name = headers[target_col].clone();
    let feature_cols: Vec<(String, Vec<f64>)> = headers
        .into_iter()
        .zip(columns)
        .enumerate()
        .filter(|(i, _)| *i != target_col)
        .map(|(_, pair)| pair)
        .collect();
    if target_values.len() < MIN_ROWS {
        return Err(DataError::TooFewRows(target_values.len()));
    }
    Frame::build(feature_cols, target_values, target_name, task, labels)
}

/// Descriptive statistics of one column; `std` uses the population denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        // Welford
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (i, &x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
            min = min.min(x);
            max = max.max(x);
        }
        let var = (m2 / values.len() as f64).max(0.0);
        Self {
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        }
    }
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 || !saa.is_finite() || !sbb.is_finite() {
        return 0.0;
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Row → fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Shuffles rows (per class for classification), then deals them
    /// round-robin so fold sizes and per-class counts differ by at most one.
    pub fn new(target: &[f64], task: Task, k: usize, seed: u64) -> Result<Self, DataError> {
        let n = target.len();
        if k < 2 || k > n {
            return Err(DataError::KTooLarge { k, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order: Vec<usize> = match task {
            Task::Regression => {
                let mut rows: Vec<usize> = (0..n).collect();
                rows.shuffle(&mut rng);
                rows
            }
            Task::Classification => {
                let n_classes = target.iter().map(|&y| y as usize).max().unwrap_or(0) + 1;
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
                for (i, &y) in target.iter().enumerate() {
                    by_class[y as usize].push(i);
                }
                let mut rows = Vec::with_capacity(n);
                for mut members in by_class {
                    members.shuffle(&mut rng);
                    rows.extend(members);
                }
                rows
            }
        };
        let mut assignments = vec![0; n];
        for (pos, row) in order.into_iter().enumerate() {
            assignments[row] = pos % k;
        }
        Ok(Self {
            k,
            assignments,
            seed,
        })
    }

    /// (train rows, test rows) for one fold, each in ascending row order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (row, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(row);
            } else {
                train.push(row);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Column-major numeric matrix with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }
}

/// Builds the matrix for `mask` over base columns followed by `exprs`.
pub fn materialize(
    frame: &Frame,
    exprs: &[FeatureExpr],
    mask: &[bool],
    min_features: usize,
) -> Result<FeatureMatrix, DataError> {
    let expected = frame.n_features() + exprs.len();
    if mask.len() != expected {
        return Err(DataError::MaskLength {
            expected,
            found: mask.len(),
        });
    }
    let kept = mask.iter().filter(|b| **b).count();
    if kept < min_features.max(1) {
        return Err(DataError::EmptySelection {
            kept,
            floor: min_features.max(1),
        });
    }
    let base = frame.n_features();
    let mut names = Vec::with_capacity(kept);
    let mut columns = Vec::with_capacity(kept);
    for i in (0..base).filter(|&i| mask[i]) {
        names.push(frame.names[i].clone());
        columns.push(frame.columns[i].clone());
    }
    let derived: Vec<&FeatureExpr> = exprs
        .iter()
        .enumerate()
        .filter(|(j, _)| mask[base + j])
        .map(|(_, e)| e)
        .collect();
    let evaluated: Vec<Result<Vec<f64>, ExprError>> = {
        use rayon::prelude::*;
        derived.par_iter().map(|e| e.evaluate(frame)).collect()
    };
    for (e, col) in derived.iter().zip(evaluated) {
        names.push(e.name().to_string());
        columns.push(col?);
    }
    Ok(FeatureMatrix {
        names,
        columns,
        n_rows: frame.n_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, ExprLimits};

    fn small_frame() -> Frame {
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = (0..10).map(|i| f64::from(i * i)).collect();
        let y: Vec<f64> = (0..10).map(|i| f64::from(i % 2)).collect();
        Frame::from_columns(
            vec![("a".into(), a), ("b".into(), b)],
            y,
            Task::Classification,
        )
        .unwrap()
    }

    #[test]
    fn stats_by_hand() {
        let s = ColumnStats::of(&[1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max), (1.0, 3.0));
        assert_eq!(ColumnStats::of(&[5.0, 5.0]).std, 0.0);
    }

    #[test]
    fn folds_of_equal_size() {
        let y = vec![0.0; 10];
        let plan = FoldPlan::new(&y, Task::Regression, 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn stratification_forced() {
        let y = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        for seed in 0..20 {
            let plan = FoldPlan::new(&y, Task::Classification, 2, seed).unwrap();
            for fold in 0..2 {
                let (_, test) = plan.split(fold);
                let ones = test.iter().filter(|&&r| y[r] == 1.0).count();
                assert_eq!((test.len() - ones, ones), (3, 2));
            }
        }
    }

    #[test]
    fn fold_determinism_and_errors() {
        let f = small_frame();
        assert_eq!(f.kfolds(5, 9).unwrap(), f.kfolds(5, 9).unwrap());
        assert!(matches!(f.kfolds(11, 0), Err(DataError::KTooLarge { .. })));
        assert!(matches!(f.kfolds(1, 0), Err(DataError::KTooLarge { .. })));
    }

    #[test]
    fn csv_loading() {
        let mut text = String::from("x,label\n");
        for i in 0..12 {
            text.push_str(&format!(
                "{i}.5,{}\n",
                if i % 3 == 0 { "yes" } else { "no" }
            ));
        }
        let f = read_csv(
            text.as_bytes(),
            &TargetSpec::Name("label".into()),
            Task::Classification,
        )
        .unwrap();
        assert_eq!(f.n_features(), 1);
        assert_eq!(f.n_rows(), 12);
        assert_eq!(f.class_labels(), &["yes".to_string(), "no".to_string()]);
        assert_eq!(f.target()[0], 0.0);
        assert_eq!(f.target()[1], 1.0);

        let by_index =
            read_csv(text.as_bytes(), &TargetSpec::Index(1), Task::Classification).unwrap();
        assert_eq!(by_index, f);

        assert!(matches!(
            read_csv(
                text.as_bytes(),
                &TargetSpec::Name("nope".into()),
                Task::Classification
            ),
            Err(DataError::TargetNotFound(_))
        ));
        assert!(matches!(
            read_csv(
                "x,y\n1,2\n".as_bytes(),
                &TargetSpec::Index(1),
                Task::Regression
            ),
            Err(DataError::TooFewRows(1))
        ));
        let bad = text.replace("3.5", "abc");
        match read_csv(bad.as_bytes(), &TargetSpec::Index(1), Task::Classification) {
            Err(DataError::ParseError { row, col, .. }) => assert_eq!((row, col), (5, 0)),
            other => panic!("{other:?}"),
        }
        let missing = text.replace("3.5", "");
        assert!(matches!(
            read_csv(
                missing.as_bytes(),
                &TargetSpec::Index(1),
                Task::Classification
            ),
            Err(DataError::ParseError { .. })
        ));
    }

    #[test]
    fn materialize_variants() {
        let f = small_frame();
        let e = parse_expr("a b +", f.names(), ExprLimits::default()).unwrap();
        let m = materialize(&f, std::slice::from_ref(&e), &[true, true, true], 2).unwrap();
        assert_eq!(m.n_cols(), 3);
        assert_eq!(
            m.columns[2],
            (0..10).map(|i| f64::from(i + i * i)).collect::<Vec<_>>()
        );

        let ident = materialize(&f, &[], &[true, true], 2).unwrap();
        assert_eq!(ident.columns[0], f.column_at(0));
        assert_eq!(ident.columns[1], f.column_at(1));

        let dropped = materialize(&f, std::slice::from_ref(&e), &[false, true, true], 2).unwrap();
        assert_eq!(dropped.names, vec!["b".to_string(), e.name().to_string()]);

        assert!(matches!(
            materialize(&f, &[], &[true, false], 2),
            Err(DataError::EmptySelection { .. })
        ));
    }
}
