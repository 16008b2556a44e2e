//! Two-study covariate tables, CSV ingestion and numeric encoding.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },
    #[error("unknown level `{value}` at row {row}, column `{col}`")]
    UnknownLevel {
        row: usize,
        col: String,
        value: String,
    },
    #[error("non-numeric value `{value}` at row {row}, column `{col}`")]
    NotNumeric {
        row: usize,
        col: String,
        value: String,
    },
    #[error("column `{column}` has non-numeric values but no schema directive; declare it binary or categorical")]
    MissingDirective { column: String },
    #[error("study column has a single label `{label}`; two studies are required")]
    SingleStudy { label: String },
    #[error("study column has more than two labels: {labels:?}")]
    TooManyStudies { labels: Vec<String> },
    #[error("study label `{0}` does not occur in the study column")]
    UnknownStudyLabel(String),
    #[error("study {0} has no rows")]
    EmptyStudy(u8),
    #[error("duplicate covariate name `{0}`")]
    DuplicateName(String),
    #[error("categorical covariate `{0}` has no levels")]
    EmptyLevels(String),
    #[error("covariate `{name}` declares level `{level}` twice")]
    DuplicateLevel { name: String, level: String },
    #[error("binary covariate `{0}` must declare exactly two levels")]
    BinaryLevels(String),
    #[error("row {row}: {detail}")]
    Shape { row: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    /// Coded 0/1. With `levels`, the first label codes 0 and the second 1.
    Binary {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<[String; 2]>,
    },
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Continuous,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Binary { levels: None },
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for c in &covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::DuplicateName(c.name.clone()));
            }
            match &c.kind {
                CovariateKind::Categorical { levels } => {
                    if levels.is_empty() {
                        return Err(DataError::EmptyLevels(c.name.clone()));
                    }
                    let mut lv = HashSet::new();
                    for l in levels {
                        if !lv.insert(l) {
                            return Err(DataError::DuplicateLevel {
                                name: c.name.clone(),
                                level: l.clone(),
                            });
                        }
                    }
                }
                CovariateKind::Binary {
                    levels: Some([a, b]),
                } if a == b => {
                    return Err(DataError::DuplicateLevel {
                        name: c.name.clone(),
                        level: a.clone(),
                    });
                }
                _ => {}
            }
        }
        Ok(Self { covariates })
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn all_categorical(&self) -> bool {
        self.covariates
            .iter()
            .all(|c| !matches!(c.kind, CovariateKind::Continuous))
    }
}

/// A single covariate value. Binary values are stored as `Number(0.0 | 1.0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    Level(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    schema: CovariateSchema,
    study: Vec<u8>,
    values: Vec<Vec<Value>>,
    response: Option<Vec<f64>>,
    study_labels: [String; 2],
}

impl CovariateTable {
    /// Validates rows against the schema. `study[i] ∈ {0, 1}`.
    pub fn new(
        schema: CovariateSchema,
        study: Vec<u8>,
        values: Vec<Vec<Value>>,
        response: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if study.len() != values.len() {
            return Err(DataError::Shape {
                row: 0,
                detail: format!("{} study labels for {} rows", study.len(), values.len()),
            });
        }
        if let Some(y) = &response {
            if y.len() != values.len() {
                return Err(DataError::Shape {
                    row: 0,
                    detail: format!("{} responses for {} rows", y.len(), values.len()),
                });
            }
        }
        for (i, (s, row)) in study.iter().zip(&values).enumerate() {
            if *s > 1 {
                return Err(DataError::Shape {
                    row: i + 1,
                    detail: format!("study index {s} is not 0 or 1"),
                });
            }
            if row.len() != schema.len() {
                return Err(DataError::Shape {
                    row: i + 1,
                    detail: format!("{} values for {} covariates", row.len(), schema.len()),
                });
            }
            for (c, v) in schema.covariates().iter().zip(row) {
                let ok = match (&c.kind, v) {
                    (CovariateKind::Continuous, Value::Number(x)) => x.is_finite(),
                    (CovariateKind::Binary { .. }, Value::Number(x)) => *x == 0.0 || *x == 1.0,
                    (CovariateKind::Categorical { levels }, Value::Level(l)) => *l < levels.len(),
                    _ => false,
                };
                if !ok {
                    return Err(DataError::UnknownLevel {
                        row: i + 1,
                        col: c.name.clone(),
                        value: format!("{v:?}"),
                    });
                }
            }
        }
        for k in 0..2u8 {
            if !study.contains(&k) {
                return Err(DataError::EmptyStudy(k));
            }
        }
        Ok(Self {
            schema,
            study,
            values,
            response,
            study_labels: ["0".into(), "1".into()],
        })
    }

    pub fn with_study_labels(mut self, labels: [String; 2]) -> Self {
        self.study_labels = labels;
        self
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }
    pub fn study(&self) -> &[u8] {
        &self.study
    }
    pub fn values(&self) -> &[Vec<Value>] {
        &self.values
    }
    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }
    pub fn study_labels(&self) -> &[String; 2] {
        &self.study_labels
    }
    pub fn n_rows(&self) -> usize {
        self.study.len()
    }

    pub fn study_size(&self, k: u8) -> usize {
        self.study.iter().filter(|&&s| s == k).count()
    }

    /// Row indices (in file order) belonging to study `k`.
    pub fn rows_of(&self, k: u8) -> Vec<usize> {
        (0..self.study.len())
            .filter(|&i| self.study[i] == k)
            .collect()
    }

    /// Responses split by study, each in file order.
    pub fn response_by_study(&self) -> Option<[Vec<f64>; 2]> {
        let y = self.response.as_ref()?;
        Some([0u8, 1].map(|k| self.rows_of(k).into_iter().map(|i| y[i]).collect()))
    }

    /// Same table with the response replaced.
    pub fn with_response(mut self, response: Vec<f64>) -> Result<Self, DataError> {
        if response.len() != self.n_rows() {
            return Err(DataError::Shape {
                row: 0,
                detail: "response length".into(),
            });
        }
        self.response = Some(response);
        Ok(self)
    }
}

/// Which covariate (and level, for categoricals) an encoded column represents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnOrigin {
    pub covariate: usize,
    pub level: Option<usize>,
}

/// Numeric encoding split by study. Categoricals use one column per level.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x0: Matrix,
    pub x1: Matrix,
    pub column_names: Vec<String>,
    pub column_origin: Vec<ColumnOrigin>,
    /// Original table rows of each study, in the order of `x0`/`x1`.
    pub rows: [Vec<usize>; 2],
}

impl DesignMatrix {
    pub fn n0(&self) -> usize {
        self.x0.rows()
    }
    pub fn n1(&self) -> usize {
        self.x1.rows()
    }
    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn study(&self, k: u8) -> &Matrix {
        if k == 0 {
            &self.x0
        } else {
            &self.x1
        }
    }

    /// Per-study column means.
    pub fn means(&self) -> [Vec<f64>; 2] {
        [&self.x0, &self.x1].map(|x| {
            let n = x.rows() as f64;
            (0..x.cols())
                .map(|c| (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n)
                .collect()
        })
    }

    /// Restricts to the given encoded columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DesignMatrix {
        let pick = |x: &Matrix| {
            let mut m = Matrix::zeros(x.rows(), cols.len());
            for r in 0..x.rows() {
                for (j, &c) in cols.iter().enumerate() {
                    m.set(r, j, x.get(r, c));
                }
            }
            m
        };
        DesignMatrix {
            x0: pick(&self.x0),
            x1: pick(&self.x1),
            column_names: cols.iter().map(|&c| self.column_names[c].clone()).collect(),
            column_origin: cols
                .iter()
                .map(|&c| self.column_origin[c].clone())
                .collect(),
            rows: self.rows.clone(),
        }
    }

    /// Finds an encoded column by its name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

/// Encodes a table: continuous pass through, binary 0/1, categoricals one-hot per level.
pub fn encode(table: &CovariateTable) -> DesignMatrix {
    let mut names = Vec::new();
    let mut origin = Vec::new();
    for (ci, c) in table.schema.covariates().iter().enumerate() {
        match &c.kind {
            CovariateKind::Continuous | CovariateKind::Binary { .. } => {
                names.push(c.name.clone());
                origin.push(ColumnOrigin {
                    covariate: ci,
                    level: None,
                });
            }
            CovariateKind::Categorical { levels } => {
                for (li, l) in levels.iter().enumerate() {
                    names.push(format!("{}={}", c.name, l));
                    origin.push(ColumnOrigin {
                        covariate: ci,
                        level: Some(li),
                    });
                }
            }
        }
    }
    let p = names.len();
    let rows = [table.rows_of(0), table.rows_of(1)];
    let build = |idx: &[usize]| {
        let mut m = Matrix::zeros(idx.len(), p);
        for (r, &i) in idx.iter().enumerate() {
            let row = m.row_mut(r);
            for (col, o) in origin.iter().enumerate() {
                row[col] = match (table.values[i][o.covariate], o.level) {
                    (Value::Number(x), None) => x,
                    (Value::Level(l), Some(level)) => f64::from(u8::from(l == level)),
                    _ => unreachable!("validated at construction"),
                };
            }
        }
        m
    };
    DesignMatrix {
        x0: build(&rows[0]),
        x1: build(&rows[1]),
        column_names: names,
        column_origin: origin,
        rows,
    }
}

/// Per-study means on the encoded scale (level columns give proportions).
pub fn observed_means(table: &CovariateTable) -> [Vec<f64>; 2] {
    encode(table).means()
}

/// Options for [`read_csv`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvOptions {
    pub study_col: String,
    /// Label mapped to study 0; defaults to the first label seen.
    #[serde(default)]
    pub study0: Option<String>,
    #[serde(default)]
    pub study1: Option<String>,
    #[serde(default)]
    pub response_col: Option<String>,
    /// Kind directives. Undeclared columns are continuous if every value parses as a number.
    #[serde(default)]
    pub covariates: Vec<Covariate>,
    /// Columns that are neither covariates nor study/response.
    #[serde(default)]
    pub ignore: Vec<String>,
}

fn parse_number(s: &str, row: usize, col: &str) -> Result<f64, DataError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::NotNumeric {
            row,
            col: col.to_string(),
            value: s.to_string(),
        }),
    }
}

/// Reads a comma-separated file with a header row.
pub fn read_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<CovariateTable, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, opts)
}

/// As [`read_csv`], from any reader.
pub fn read_csv_from<R: std::io::Read>(
    reader: R,
    opts: &CsvOptions,
) -> Result<CovariateTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let study_idx = find(&opts.study_col)?;
    let response_idx = opts.response_col.as_deref().map(find).transpose()?;
    for name in &opts.ignore {
        find(name)?;
    }
    let directives: HashMap<&str, &Covariate> = opts
        .covariates
        .iter()
        .map(|c| (c.name.as_str(), c))
        .collect();
    for c in &opts.covariates {
        find(&c.name)?;
    }

    let cell = |r: usize, c: usize| -> Result<&str, DataError> {
        let v = records[r].get(c).unwrap_or("").trim();
        if v.is_empty() || v == "NA" {
            Err(DataError::MissingValue {
                row: r + 1,
                col: header[c].clone(),
            })
        } else {
            Ok(v)
        }
    };

    // covariate columns in header order
    let mut covariates = Vec::new();
    let mut cov_cols = Vec::new();
    for (ci, name) in header.iter().enumerate() {
        if ci == study_idx || Some(ci) == response_idx || opts.ignore.contains(name) {
            continue;
        }
        let cov = match directives.get(name.as_str()) {
            Some(c) => (*c).clone(),
            None => {
                for r in 0..records.len() {
                    let v = cell(r, ci)?;
                    if v.parse::<f64>().is_err() {
                        return Err(DataError::MissingDirective {
                            column: name.clone(),
                        });
                    }
                }
                Covariate::continuous(name.clone())
            }
        };
        covariates.push(cov);
        cov_cols.push(ci);
    }
    let schema = CovariateSchema::new(covariates)?;

    // study labels
    let mut seen: Vec<String> = Vec::new();
    for r in 0..records.len() {
        let v = cell(r, study_idx)?;
        if !seen.iter().any(|s| s == v) {
            seen.push(v.to_string());
        }
    }
    if seen.len() > 2 {
        return Err(DataError::TooManyStudies { labels: seen });
    }
    for label in [&opts.study0, &opts.study1].into_iter().flatten() {
        if !seen.contains(label) {
            return Err(DataError::UnknownStudyLabel(label.clone()));
        }
    }
    if seen.len() < 2 {
        return Err(match seen.pop() {
            Some(label) => DataError::SingleStudy { label },
            None => DataError::EmptyStudy(0),
        });
    }
    let label0 = match (&opts.study0, &opts.study1) {
        (Some(l0), _) => l0.clone(),
        (None, Some(l1)) => seen.iter().find(|s| *s != l1).cloned().expect("two labels"),
        (None, None) => seen[0].clone(),
    };
    let label1 = seen
        .iter()
        .find(|s| **s != label0)
        .cloned()
        .expect("two labels");
    if let Some(l1) = &opts.study1 {
        if *l1 != label1 {
            return Err(DataError::UnknownStudyLabel(l1.clone()));
        }
    }

    let mut study = Vec::with_capacity(records.len());
    let mut values = Vec::with_capacity(records.len());
    let mut response = response_idx.map(|_| Vec::with_capacity(records.len()));
    for r in 0..records.len() {
        let row = r + 1;
        study.push(u8::from(cell(r, study_idx)? != label0));
        let mut vals = Vec::with_capacity(cov_cols.len());
        for (cov, &ci) in schema.covariates().iter().zip(&cov_cols) {
            let raw = cell(r, ci)?;
            let unknown = || DataError::UnknownLevel {
                row,
                col: cov.name.clone(),
                value: raw.to_string(),
            };
            let v = match &cov.kind {
                CovariateKind::Continuous => Value::Number(parse_number(raw, row, &cov.name)?),
                CovariateKind::Binary {
                    levels: Some(levels),
                } => {
                    let pos = levels.iter().position(|l| l == raw).ok_or_else(unknown)?;
                    Value::Number(pos as f64)
                }
                CovariateKind::Binary { levels: None } => match raw.parse::<f64>() {
                    Ok(x) if x == 0.0 || x == 1.0 => Value::Number(x),
                    _ => return Err(unknown()),
                },
                CovariateKind::Categorical { levels } => {
                    Value::Level(levels.iter().position(|l| l == raw).ok_or_else(unknown)?)
                }
            };
            vals.push(v);
        }
        values.push(vals);
        if let (Some(y), Some(ri)) = (response.as_mut(), response_idx) {
            y.push(parse_number(cell(r, ri)?, row, &header[ri])?);
        }
    }
    Ok(CovariateTable::new(schema, study, values, response)?.with_study_labels([label0, label1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> CsvOptions {
        CsvOptions {
            study_col: "study".into(),
            ..Default::default()
        }
    }

    #[test]
    fn minimal_round_trip() {
        let csv = "study,x\nA,1\nB,2\nA,3\nB,4\n";
        let t = read_csv_from(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(t.study_size(0), 2);
        assert_eq!(t.study_size(1), 2);
        assert_eq!(t.study_labels(), &["A".to_string(), "B".to_string()]);
        let dm = encode(&t);
        assert_eq!(dm.x0.column(0), vec![1.0, 3.0]);
        assert_eq!(dm.x1.column(0), vec![2.0, 4.0]);
    }

    #[test]
    fn empty_cell_is_missing_value() {
        let csv = "study,x\nA,1\nB,\nA,3\nB,4\n";
        match read_csv_from(csv.as_bytes(), &opts()) {
            Err(DataError::MissingValue { row, col }) => {
                assert_eq!(row, 2);
                assert_eq!(col, "x");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_study_label() {
        let csv = "study,x\nA,1\nA,2\n";
        assert!(matches!(
            read_csv_from(csv.as_bytes(), &opts()),
            Err(DataError::SingleStudy { .. })
        ));
    }

    #[test]
    fn unknown_level_names_location() {
        let mut o = opts();
        o.covariates = vec![Covariate::categorical("g", ["a", "b"])];
        let csv = "study,g\nA,a\nB,c\n";
        match read_csv_from(csv.as_bytes(), &o) {
            Err(DataError::UnknownLevel { row, col, value }) => {
                assert_eq!((row, col.as_str(), value.as_str()), (2, "g", "c"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undeclared_factor_column_is_rejected() {
        let csv = "study,g\nA,a\nB,b\n";
        match read_csv_from(csv.as_bytes(), &opts()) {
            Err(DataError::MissingDirective { column }) => assert_eq!(column, "g"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_study_labels_override_order() {
        let mut o = opts();
        o.study0 = Some("B".into());
        let csv = "study,x\nA,1\nB,2\n";
        let t = read_csv_from(csv.as_bytes(), &o).unwrap();
        assert_eq!(t.study(), &[1, 0]);
    }

    #[test]
    fn one_hot_encoding() {
        let schema =
            CovariateSchema::new(vec![Covariate::categorical("g", ["A", "B", "C"])]).unwrap();
        let t = CovariateTable::new(
            schema,
            vec![0, 1],
            vec![vec![Value::Level(1)], vec![Value::Level(0)]],
            None,
        )
        .unwrap();
        let dm = encode(&t);
        assert_eq!(dm.x0.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(dm.column_names, vec!["g=A", "g=B", "g=C"]);
    }

    #[test]
    fn binary_and_continuous_pass_through() {
        let schema =
            CovariateSchema::new(vec![Covariate::binary("b"), Covariate::continuous("x")]).unwrap();
        let t = CovariateTable::new(
            schema,
            vec![0, 1],
            vec![
                vec![Value::Number(1.0), Value::Number(2.5)],
                vec![Value::Number(0.0), Value::Number(-1.0)],
            ],
            None,
        )
        .unwrap();
        let dm = encode(&t);
        assert_eq!(dm.n_cols(), 2);
        assert_eq!(dm.x0.row(0), &[1.0, 2.5]);
        assert_eq!(dm.x1.row(0), &[0.0, -1.0]);
    }

    #[test]
    fn simulation_schema_has_24_columns() {
        let mut covs = Vec::new();
        for i in 1..=15 {
            let name = format!("X{i}");
            covs.push(match i {
                3 => Covariate::categorical(name, ["A", "B", "C", "D"]),
                8 => Covariate::categorical(name, ["A", "B", "C"]),
                14 => Covariate::categorical(name, ["A", "B", "C", "D", "E"]),
                1 | 2 | 6 | 7 | 11 | 12 | 13 => Covariate::binary(name),
                _ => Covariate::continuous(name),
            });
        }
        let schema = CovariateSchema::new(covs).unwrap();
        let row: Vec<Value> = schema
            .covariates()
            .iter()
            .map(|c| match c.kind {
                CovariateKind::Categorical { .. } => Value::Level(0),
                _ => Value::Number(0.0),
            })
            .collect();
        let t = CovariateTable::new(schema, vec![0, 1], vec![row.clone(), row], None).unwrap();
        assert_eq!(encode(&t).n_cols(), 5 + 7 + 12);
    }

    #[test]
    fn means_and_proportions() {
        let schema =
            CovariateSchema::new(vec![Covariate::continuous("x"), Covariate::binary("b")]).unwrap();
        let t = CovariateTable::new(
            schema,
            vec![0, 0, 1, 1],
            vec![
                vec![Value::Number(0.0), Value::Number(1.0)],
                vec![Value::Number(2.0), Value::Number(1.0)],
                vec![Value::Number(5.0), Value::Number(0.0)],
                vec![Value::Number(5.0), Value::Number(0.0)],
            ],
            None,
        )
        .unwrap();
        let m = observed_means(&t);
        assert_eq!(m[0], vec![1.0, 1.0]);
        assert_eq!(m[1], vec![5.0, 0.0]);
    }

    #[test]
    fn pooled_means_from_study_means() {
        // equal study sizes pool to the average of the per-study means
        let (a, b) = ([1.2, -0.3], [1.7, 0.14]);
        let pooled: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert!((pooled[0] - 1.45).abs() < 1e-12);
        assert!((pooled[1] + 0.08).abs() < 1e-12);
    }

    #[test]
    fn schema_validation() {
        assert!(matches!(
            CovariateSchema::new(vec![Covariate::continuous("x"), Covariate::continuous("x")]),
            Err(DataError::DuplicateName(_))
        ));
        assert!(matches!(
            CovariateSchema::new(vec![Covariate::categorical("g", Vec::<String>::new())]),
            Err(DataError::EmptyLevels(_))
        ));
        assert!(matches!(
            CovariateSchema::new(vec![Covariate::categorical("g", ["a", "a"])]),
            Err(DataError::DuplicateLevel { .. })
        ));
    }

    #[test]
    fn schema_json_shape() {
        let c: Covariate =
            serde_json::from_str(r#"{"name":"g","kind":"categorical","levels":["a","b"]}"#)
                .unwrap();
        assert_eq!(c, Covariate::categorical("g", ["a", "b"]));
        let b: Covariate = serde_json::from_str(r#"{"name":"s","kind":"binary"}"#).unwrap();
        assert_eq!(b, Covariate::binary("s"));
    }
}
