//! Time-aligned neural windows with position labels, and the CSV interchange
//! format `t,pos_0..pos_{d-1},f_0..f_{nT-1}`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `K x nT` neural windows, one row per sample.
    pub neural: DMatrix<f64>,
    /// `K x d` positions.
    pub labels: DMatrix<f64>,
}

/// Contiguous train/test partition of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(neural: DMatrix<f64>, labels: DMatrix<f64>) -> Result<Self> {
        if neural.nrows() != labels.nrows() {
            return Err(Error::Shape(format!(
                "{} neural rows but {} label rows",
                neural.nrows(),
                labels.nrows()
            )));
        }
        if labels.nrows() == 0 {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if labels.ncols() == 0 {
            return Err(Error::Shape("labels need at least one axis".into()));
        }
        if let Some(k) = first_non_finite_row(&neural).or_else(|| first_non_finite_row(&labels)) {
            return Err(Error::NonFinite(format!("dataset row {k}")));
        }
        Ok(Dataset { neural, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.labels.ncols()
    }

    pub fn features(&self) -> usize {
        self.neural.ncols()
    }

    pub fn label(&self, k: usize) -> Vec<f64> {
        self.labels.row(k).iter().copied().collect()
    }

    pub fn neural_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.neural.select_rows(rows)
    }

    pub fn label_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.labels.select_rows(rows)
    }

    /// First `round(K * train_fraction)` samples train, the rest test.
    pub fn split(&self, train_fraction: f64) -> Result<Split> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let k = self.len();
        let cut = ((k as f64) * train_fraction).round() as usize;
        if cut == 0 || cut == k {
            return Err(Error::Empty(format!(
                "a {train_fraction} split of {k} samples leaves one side empty"
            )));
        }
        Ok(Split {
            train: (0..cut).collect(),
            test: (cut..k).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim()).map(|a| format!("pos_{a}")));
        header.extend((0..self.features()).map(|f| format!("f_{f}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            record.clear();
            record.push((k + 1).to_string());
            record.extend(self.labels.row(k).iter().map(|v| v.to_string()));
            record.extend(self.neural.row(k).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("writing dataset", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Shape("dataset header must start with `t`".into()));
        }
        let d = cols[1..]
            .iter()
            .take_while(|c| c.starts_with("pos_"))
            .count();
        let f = cols.len() - 1 - d;
        for (a, c) in cols[1..=d].iter().enumerate() {
            if *c != format!("pos_{a}") {
                return Err(Error::Shape(format!("expected column pos_{a}, found {c}")));
            }
        }
        for (i, c) in cols[1 + d..].iter().enumerate() {
            if *c != format!("f_{i}") {
                return Err(Error::Shape(format!("expected column f_{i}, found {c}")));
            }
        }
        let mut labels = Vec::new();
        let mut neural = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Shape(format!("row {}, column {}: {e}", line + 1, cols[i])))
            };
            for i in 1..=d {
                labels.push(parse(i)?);
            }
            for i in 1 + d..1 + d + f {
                neural.push(parse(i)?);
            }
        }
        let k = labels.len() / d.max(1);
        Dataset::new(
            DMatrix::from_row_slice(k, f, &neural),
            DMatrix::from_row_slice(k, d, &labels),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }
}

fn first_non_finite_row(m: &DMatrix<f64>) -> Option<usize> {
    (0..m.nrows()).find(|&k| m.row(k).iter().any(|v| !v.is_finite()))
}
