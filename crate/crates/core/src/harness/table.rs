//! The strategy × size similarity matrix.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{HarnessError, Result};
use crate::curves::{Similarity, UNDEFINED_CELL};
use crate::reduction::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Train,
    Validation,
}

impl CurveKind {
    pub const ALL: [CurveKind; 2] = [CurveKind::Train, CurveKind::Validation];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Train => "train",
            CurveKind::Validation => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Rows are fractions, columns strategies, one matrix per curve kind. The
/// full-size reference has no row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    pub fractions: Vec<f64>,
    pub strategies: Vec<Strategy>,
    /// `train[row][column]`
    pub train: Vec<Vec<Similarity>>,
    pub val: Vec<Vec<Similarity>>,
}

impl SimilarityTable {
    pub fn undefined(fractions: Vec<f64>, strategies: Vec<Strategy>) -> Self {
        let blank = vec![vec![Similarity::Undefined; strategies.len()]; fractions.len()];
        Self {
            fractions,
            strategies,
            train: blank.clone(),
            val: blank,
        }
    }

    pub fn cells(&self, kind: CurveKind) -> &[Vec<Similarity>] {
        match kind {
            CurveKind::Train => &self.train,
            CurveKind::Validation => &self.val,
        }
    }

    pub fn cells_mut(&mut self, kind: CurveKind) -> &mut Vec<Vec<Similarity>> {
        match kind {
            CurveKind::Train => &mut self.train,
            CurveKind::Validation => &mut self.val,
        }
    }

    pub fn cell(&self, kind: CurveKind, fraction: usize, strategy: Strategy) -> Option<Similarity> {
        let col = self.strategies.iter().position(|&s| s == strategy)?;
        self.cells(kind).get(fraction)?.get(col).copied()
    }

    /// One column, top to bottom.
    pub fn column(&self, kind: CurveKind, strategy: Strategy) -> Option<Vec<Similarity>> {
        let col = self.strategies.iter().position(|&s| s == strategy)?;
        Some(self.cells(kind).iter().map(|row| row[col]).collect())
    }

    pub fn cell_count(&self) -> usize {
        2 * self.fractions.len() * self.strategies.len()
    }

    /// CSV for one curve kind: `fraction,<strategy>...`.
    pub fn to_csv(&self, kind: CurveKind) -> String {
        let mut out = String::from("fraction");
        for s in &self.strategies {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for (f, row) in self.fractions.iter().zip(self.cells(kind)) {
            write!(out, "{f}").unwrap();
            for cell in row {
                write!(out, ",{cell}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Both kinds side by side, train columns first, sizes in percent.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Size (%) |");
        for kind in CurveKind::ALL {
            for s in &self.strategies {
                write!(out, " {} ({}) |", s.name(), kind.name()).unwrap();
            }
        }
        out.push_str("\n|---:|");
        for _ in 0..2 * self.strategies.len() {
            out.push_str("---:|");
        }
        out.push('\n');
        for (r, f) in self.fractions.iter().enumerate() {
            write!(out, "| {} |", (f * 100.0 * 1e9).round() / 1e9).unwrap();
            for kind in CurveKind::ALL {
                for cell in &self.cells(kind)[r] {
                    match cell.value() {
                        Some(v) => write!(out, " {v:.4e} |").unwrap(),
                        None => write!(out, " {UNDEFINED_CELL} |").unwrap(),
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn emit(&self, kind: CurveKind, format: TableFormat, mut out: impl Write) -> Result<()> {
        let text = match format {
            TableFormat::Csv => self.to_csv(kind),
            TableFormat::Markdown => self.to_markdown(),
        };
        out.write_all(text.as_bytes()).map_err(|source| HarnessError::Io {
            path: "<table>".into(),
            source,
        })
    }

    /// Rebuilds a table from its two CSV files.
    pub fn from_csv(train: impl Read, val: impl Read) -> Result<Self> {
        let (fractions, strategies, train) = parse_matrix(train)?;
        let (f2, s2, val) = parse_matrix(val)?;
        if f2 != fractions || s2 != strategies {
            return Err(HarnessError::Format(
                "train and validation tables have different rows or columns".into(),
            ));
        }
        Ok(Self {
            fractions,
            strategies,
            train,
            val,
        })
    }
}

type Matrix = (Vec<f64>, Vec<Strategy>, Vec<Vec<Similarity>>);

fn parse_matrix(input: impl Read) -> Result<Matrix> {
    let fmt = |m: String| HarnessError::Format(m);
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let header = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
    if header.get(0) != Some("fraction") {
        return Err(fmt(format!("table header must start with `fraction`: {header:?}")));
    }
    let strategies = header
        .iter()
        .skip(1)
        .map(|s| s.parse::<Strategy>().map_err(|e| fmt(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut fractions = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(format!("row {}: {e}", i + 1)))?;
        fractions.push(
            rec[0]
                .parse::<f64>()
                .map_err(|_| fmt(format!("row {}: bad fraction {:?}", i + 1, &rec[0])))?,
        );
        cells.push(
            rec.iter()
                .skip(1)
                .map(|c| c.parse::<Similarity>().map_err(|e| fmt(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((fractions, strategies, cells))
}
