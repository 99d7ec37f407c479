//! CSV ingestion and emission: comma-separated, header row required, `.`
//! decimals, UTF-8.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pfcr_core::studylab::fmt_f64;
use pfcr_core::Dataset;

use crate::error::{CliError, CliResult};

/// A numeric table with its header.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.headers.len()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r[j]))
    }

    /// Matrix of the given columns, in order.
    pub fn matrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), cols.len(), |i, j| self.rows[i][cols[j]])
    }

    /// Resolves `--response`: a header name, else a 0-based column index.
    /// Defaults to the last column.
    pub fn response_index(&self, response: Option<&str>) -> CliResult<usize> {
        let Some(key) = response else {
            return Ok(self.ncols() - 1);
        };
        if let Some(j) = self.headers.iter().position(|h| h == key) {
            return Ok(j);
        }
        match key.parse::<usize>() {
            Ok(j) if j < self.ncols() => Ok(j),
            _ => Err(CliError::input(format!(
                "response column '{key}' not found; columns are: {}",
                self.headers.join(", ")
            ))),
        }
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text, &path.display().to_string())
}

pub fn parse_table(text: &str, source: &str) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("{source}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::input(format!("{source}: no rows (empty file)")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("{source}: {e}")))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    CliError::input(format!(
                        "{source}: row {}, column '{}': '{field}' is not a number",
                        i + 1,
                        headers[j]
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{source}: no rows (header only)")));
    }
    Ok(Table { headers, rows })
}

/// Predictor/response split of a table.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    pub predictors: Vec<String>,
    pub response: String,
}

pub fn load_dataset(path: &Path, response: Option<&str>) -> CliResult<LoadedData> {
    let table = read_table(path)?;
    if table.ncols() < 2 {
        return Err(CliError::input("need at least one predictor column and a response column"));
    }
    let yj = table.response_index(response)?;
    let cols: Vec<usize> = (0..table.ncols()).filter(|&j| j != yj).collect();
    let data = Dataset::new(table.matrix(&cols), table.column(yj))?;
    Ok(LoadedData {
        data,
        predictors: cols.iter().map(|&j| table.headers[j].clone()).collect(),
        response: table.headers[yj].clone(),
    })
}

/// Writes a dataset as `x1..xp,y` (or the given names).
pub fn dataset_csv(data: &Dataset, predictors: &[String], response: &str) -> String {
    let mut out = predictors.join(",");
    out.push(',');
    out.push_str(response);
    out.push('\n');
    for i in 0..data.n() {
        for v in data.x().row(i).iter() {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&fmt_f64(data.y()[i]));
        out.push('\n');
    }
    out
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Writes to `--out` when given, else standard output.
pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
