//! Versioned JSON model document.
//!
//! Matrices are stored as arrays of rows. Every float is written with 17
//! significant digits, so `load → save` reproduces the file byte for byte.

use std::io;

use nalgebra::{DMatrix, DVector};
use pfcr_core::model::{BasisSpec, FittedReduction, ModelKind};
use pfcr_core::{Basis, Predictor, SymmetricMatrix};
use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: ModelKind,
    pub d: usize,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub spec: Option<BasisSpec>,
    pub predictors: Vec<String>,
    pub response: String,
    pub mu: Vec<f64>,
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "Gamma0")]
    pub gamma0: Option<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<f64>>,
    #[serde(rename = "Omega2")]
    pub omega2: Vec<Vec<f64>>,
    #[serde(rename = "Omega0_2")]
    pub omega0_2: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: Option<u64>,
    /// Training responses, needed by the forward-mean predictor.
    pub train_y: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> CliResult<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::input(format!("model file: {name} must be {nrows}×{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelDocument {
    pub fn from_fit(fit: &FittedReduction, train_y: &DVector<f64>, predictors: Vec<String>, response: String) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            kind: fit.kind,
            d: fit.d,
            n: fit.n,
            p: fit.p(),
            r: fit.r(),
            spec: fit.spec,
            predictors,
            response,
            mu: fit.mu.iter().copied().collect(),
            gamma: rows_of(fit.gamma.matrix()),
            gamma0: fit.gamma0.as_ref().map(|g| rows_of(g.matrix())),
            beta: rows_of(&fit.beta),
            omega2: rows_of(fit.omega2.matrix()),
            omega0_2: fit.omega0_2.as_ref().map(|o| rows_of(o.matrix())),
            loglik: fit.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            seed: fit.seed,
            train_y: train_y.iter().copied().collect(),
        }
    }

    pub fn to_fit(&self) -> CliResult<FittedReduction> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::input(format!(
                "model file format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let (p, d, r) = (self.p, self.d, self.r);
        if d == 0 || d > p || self.mu.len() != p || self.predictors.len() != p {
            return Err(CliError::input("model file: inconsistent p, d, mu or predictor names"));
        }
        let gamma = Basis::new(matrix_of(&self.gamma, p, d, "Gamma")?)?;
        let gamma0 = match &self.gamma0 {
            Some(g) => Some(Basis::new(matrix_of(g, p, p - d, "Gamma0")?)?),
            None => None,
        };
        let omega0_2 = match &self.omega0_2 {
            Some(o) => Some(SymmetricMatrix::new(matrix_of(o, p - d, p - d, "Omega0_2")?)?),
            None => None,
        };
        Ok(FittedReduction {
            kind: self.kind,
            d,
            n: self.n,
            mu: DVector::from_column_slice(&self.mu),
            gamma,
            gamma0,
            beta: matrix_of(&self.beta, d, r, "beta")?,
            omega2: SymmetricMatrix::new(matrix_of(&self.omega2, d, d, "Omega2")?)?,
            omega0_2,
            loglik: self.loglik,
            spec: self.spec,
            converged: self.converged,
            iterations: self.iterations,
            seed: self.seed,
        })
    }

    pub fn predictor(&self) -> CliResult<Predictor> {
        Ok(Predictor::new(self.to_fit()?, DVector::from_column_slice(&self.train_y))?)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision::default());
        self.serialize(&mut ser).map_err(|e| CliError::input(e.to_string()))?;
        buf.push(b'\n');
        String::from_utf8(buf).map_err(|e| CliError::input(e.to_string()))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("malformed model file: {e}")))
    }
}

/// Pretty JSON with floats in `d.dddddddddddddddde±x` form.
#[derive(Default)]
struct FullPrecision<'a>(PrettyFormatter<'a>);

impl Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}
