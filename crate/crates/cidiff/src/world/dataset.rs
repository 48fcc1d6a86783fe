//! Labeled observation sets and their CSV round-trip.
//!
//! CSV layout: a header row, `d` feature columns `x0..`, `n` label columns
//! `c0..` holding integer value codes, and one `provenance` column. Floats
//! are written in Rust's shortest round-trip form, so save → load is exact.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::Matrix;

use super::{AttributeSpace, WorldError};

/// Where a dataset came from; real training data must respect the training
/// support, synthetic data (model output) may land anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    RealTrain,
    RealTest,
    Synthetic,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::RealTrain => "real-train",
            Provenance::RealTest => "real-test",
            Provenance::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        match s {
            "real-train" => Some(Provenance::RealTrain),
            "real-test" => Some(Provenance::RealTest),
            "synthetic" => Some(Provenance::Synthetic),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observations with their attribute tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    xs: Matrix,
    labels: Vec<Vec<usize>>,
    provenance: Provenance,
}

impl LabeledDataset {
    /// Validates against the space: label count equals row count, every
    /// tuple is well-formed, and real training labels lie inside the
    /// training support.
    pub fn new(
        xs: Matrix,
        labels: Vec<Vec<usize>>,
        provenance: Provenance,
        space: &AttributeSpace,
    ) -> Result<LabeledDataset, WorldError> {
        if xs.nrows() != labels.len() {
            return Err(WorldError::Dataset(format!(
                "{} rows but {} labels",
                xs.nrows(),
                labels.len()
            )));
        }
        for (i, tuple) in labels.iter().enumerate() {
            if tuple.len() != space.n_attrs() {
                return Err(WorldError::Dataset(format!(
                    "label {i} has arity {}, expected {}",
                    tuple.len(),
                    space.n_attrs()
                )));
            }
            for (attr, &code) in tuple.iter().enumerate() {
                if code >= space.cardinality(attr) {
                    return Err(WorldError::Dataset(format!(
                        "label {i} uses out-of-range code {code} for attribute {attr}"
                    )));
                }
            }
            if provenance == Provenance::RealTrain && !space.in_train_support(tuple) {
                return Err(WorldError::Dataset(format!(
                    "real-train label {i} = {tuple:?} lies outside the training support"
                )));
            }
        }
        Ok(LabeledDataset {
            xs,
            labels,
            provenance,
        })
    }

    pub fn xs(&self) -> &Matrix {
        &self.xs
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    /// Row indices whose label equals `tuple`.
    pub fn rows_with_tuple(&self, tuple: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == tuple).collect()
    }

    /// One observation as a plain vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.xs.row(i).to_vec()
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), WorldError> {
        let mut w = BufWriter::new(File::create(path)?);
        let n_attrs = self.labels.first().map(|t| t.len()).unwrap_or(0);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.extend((0..n_attrs).map(|i| format!("c{i}")));
        header.push("provenance".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> =
                self.xs.row(i).iter().map(|v| format!("{v}")).collect();
            fields.extend(self.labels[i].iter().map(|c| c.to_string()));
            fields.push(self.provenance.as_str().into());
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path, space: &AttributeSpace) -> Result<LabeledDataset, WorldError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| WorldError::Dataset("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let n = space.n_attrs();
        if cols.len() < n + 2 {
            return Err(WorldError::Dataset(format!(
                "header has {} columns, need at least {} features + {n} labels + provenance",
                cols.len(),
                1
            )));
        }
        let d = cols.len() - n - 1;
        for (i, name) in cols.iter().take(d).enumerate() {
            if *name != format!("x{i}") {
                return Err(WorldError::Dataset(format!(
                    "expected feature column x{i}, found {name:?}"
                )));
            }
        }
        for (i, name) in cols[d..d + n].iter().enumerate() {
            if *name != format!("c{i}") {
                return Err(WorldError::Dataset(format!(
                    "expected label column c{i}, found {name:?}"
                )));
            }
        }
        if cols[d + n] != "provenance" {
            return Err(WorldError::Dataset("missing provenance column".into()));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut provenance: Option<Provenance> = None;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(WorldError::Dataset(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            for f in &fields[..d] {
                values.push(f.parse::<f64>().map_err(|_| {
                    WorldError::Dataset(format!("row {}: bad float {f:?}", lineno + 2))
                })?);
            }
            let tuple: Vec<usize> = fields[d..d + n]
                .iter()
                .map(|f| {
                    f.parse::<usize>().map_err(|_| {
                        WorldError::Dataset(format!("row {}: bad label {f:?}", lineno + 2))
                    })
                })
                .collect::<Result<_, _>>()?;
            labels.push(tuple);
            let p = Provenance::parse(fields[d + n]).ok_or_else(|| {
                WorldError::Dataset(format!(
                    "row {}: unknown provenance {:?}",
                    lineno + 2,
                    fields[d + n]
                ))
            })?;
            match provenance {
                None => provenance = Some(p),
                Some(prev) if prev != p => {
                    return Err(WorldError::Dataset(
                        "mixed provenance values in one file".into(),
                    ))
                }
                _ => {}
            }
        }
        let rows = labels.len();
        let xs = Matrix::from_shape_vec((rows, d), values)
            .map_err(|e| WorldError::Dataset(e.to_string()))?;
        let provenance =
            provenance.ok_or_else(|| WorldError::Dataset("no data rows".into()))?;
        LabeledDataset::new(xs, labels, provenance, space)
    }
}
