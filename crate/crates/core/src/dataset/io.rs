//! CSV ingestion and export.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{discretize, Dataset, DatasetError, Result, Shape};

/// A column addressed by header name or by 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Non-negative integer class ids; `K = max + 1`.
    #[default]
    Categorical,
    /// Continuous targets binned into equal-width classes.
    Discretize { bins: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub has_header: bool,
    pub label: ColumnRef,
    /// Columns dropped before features are collected (e.g. an index column).
    pub skip: Vec<ColumnRef>,
    pub label_kind: LabelKind,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            has_header: true,
            label: ColumnRef::Name("label".into()),
            skip: Vec::new(),
            label_kind: LabelKind::Categorical,
        }
    }
}

impl CsvSchema {
    /// Schema matching the files written by [`export_csv`].
    pub fn exported() -> Self {
        Self {
            skip: vec![ColumnRef::Name("index".into())],
            ..Self::default()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file, schema)
}

fn format_err(row: Option<usize>, column: Option<usize>, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        row,
        column,
        message: message.into(),
    }
}

fn resolve(column: &ColumnRef, header: Option<&[String]>, arity: usize) -> Result<usize> {
    let idx = match column {
        ColumnRef::Index(i) => *i,
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| format_err(None, None, format!("no column named {name:?}")))?,
    };
    if idx >= arity {
        return Err(format_err(
            None,
            Some(idx),
            format!("column {idx} outside a {arity}-column file"),
        ));
    }
    Ok(idx)
}

/// Reads a dataset from any CSV source. Rows are numbered from 1, header
/// excluded; a missing optional skip column is ignored.
pub fn parse_csv(reader: impl Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header: Option<Vec<String>> = if schema.has_header {
        match records.next() {
            None => return Err(format_err(None, None, "empty file")),
            Some(rec) => {
                let rec = rec.map_err(|e| format_err(None, None, e.to_string()))?;
                Some(rec.iter().map(str::to_string).collect())
            }
        }
    } else {
        None
    };

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| format_err(Some(i + 1), None, e.to_string()))?;
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(format_err(None, None, "empty file"));
    }
    let arity = header.as_ref().map_or(rows[0].len(), Vec::len);
    for (i, rec) in rows.iter().enumerate() {
        if rec.len() != arity {
            return Err(format_err(
                Some(i + 1),
                None,
                format!("{} cells, expected {arity}", rec.len()),
            ));
        }
    }

    let label_col = resolve(&schema.label, header.as_deref(), arity)?;
    let mut skipped = vec![false; arity];
    skipped[label_col] = true;
    for col in &schema.skip {
        match resolve(col, header.as_deref(), arity) {
            Ok(i) => skipped[i] = true,
            Err(_) if matches!(col, ColumnRef::Name(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let feature_cols: Vec<usize> = (0..arity).filter(|&c| !skipped[c]).collect();

    let mut features = Vec::with_capacity(rows.len());
    let mut raw_labels = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let row = i + 1;
        let parse = |col: usize| -> Result<f64> {
            let cell = &rec[col];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(Some(row), Some(col), format!("not a finite number: {cell:?}")))
        };
        let f = feature_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<f64>>>()?;
        features.push(f);
        raw_labels.push(parse(label_col)?);
    }

    let (labels, num_classes) = match schema.label_kind {
        LabelKind::Categorical => {
            let mut labels = Vec::with_capacity(raw_labels.len());
            for (i, &v) in raw_labels.iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(format_err(
                        Some(i + 1),
                        Some(label_col),
                        format!("label {v} is not a class id; use discretization for continuous targets"),
                    ));
                }
                labels.push(v as usize);
            }
            let k = labels.iter().max().map_or(1, |m| m + 1);
            (labels, k)
        }
        LabelKind::Discretize { bins } => (discretize(&raw_labels, bins)?.0, bins),
    };

    Dataset::new(
        Shape::Flat(feature_cols.len()),
        num_classes,
        features.into_iter().zip(labels),
    )
}

/// Writes `index,label,f0..f(d-1)`, where `index` is the sample's origin index.
pub fn write_csv(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| DatasetError::Format {
        row: None,
        column: None,
        message: e.to_string(),
    };
    let d = dataset.feature_shape().len();
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(io_err)?;
    for (s, origin) in dataset.samples().iter().zip(dataset.origin()) {
        let mut rec = Vec::with_capacity(d + 2);
        rec.push(origin.to_string());
        rec.push(s.label.to_string());
        rec.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<writer>".into(),
        source,
    })
}

pub fn export_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(dataset, file)
}
