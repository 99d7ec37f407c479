//! Forward mean through the fitted inverse model.
//!
//! ```text
//! Ê(Y | X = x) = Σᵢ yᵢ N̂(x | yᵢ) / Σᵢ N̂(x | yᵢ)
//! ```
//!
//! where `N̂(· | yᵢ)` is the fitted normal density of `X | Y = yᵢ`, mean
//! `mᵢ = μ̂ + Γ̂β̂f_{yᵢ}` and covariance `Σ̂_model`. Every term shares the same
//! covariance, so normalizing constants and the `xᵀΣ̂⁻¹x` term cancel. With
//! `aᵢ = β̂f_{yᵢ}` and `Γ̂ᵀΣ̂_model⁻¹ = Ω̂⁻²Γ̂ᵀ` (the blocks are orthogonal),
//! the log-weight of observation `i` is
//!
//! ```text
//! aᵢᵀ z − ½ aᵢᵀ Ω̂⁻² aᵢ,    z = Ω̂⁻² Γ̂ᵀ (x − μ̂).
//! ```
//!
//! The weights therefore depend on `x` only through `Γ̂ᵀΣ̂_model⁻¹(x − μ̂)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{build_basis, check_centered, DesignBasis, FittedReduction};
use crate::numerics::{self, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Precomputed state for evaluating the forward mean of a fitted model.
#[derive(Debug, Clone)]
pub struct Predictor {
    fit: FittedReduction,
    train_y: DVector<f64>,
    train_f: DesignBasis,
    /// Σ̂_model⁻¹
    precision: DMatrix<f64>,
    logdet: f64,
    /// Ω̂⁻²
    omega_inv: DMatrix<f64>,
    /// Columns are `aᵢ = β̂ f_{yᵢ}`.
    shifts: DMatrix<f64>,
    /// `½ aᵢᵀ Ω̂⁻² aᵢ`
    offsets: DVector<f64>,
}

impl Predictor {
    /// Rebuilds the training design from `train_y` with the fit's basis.
    pub fn new(fit: FittedReduction, train_y: DVector<f64>) -> Result<Self> {
        let spec = fit
            .spec
            .ok_or_else(|| Error::invalid(format!("a {} fit has no inverse mean function to predict with", fit.kind)))?;
        let train_f = build_basis(&train_y, spec)?;
        Self::with_design(fit, train_y, train_f)
    }

    pub fn with_design(fit: FittedReduction, train_y: DVector<f64>, train_f: DesignBasis) -> Result<Self> {
        if train_f.n() != train_y.len() {
            return Err(Error::DimensionMismatch {
                context: "training design rows vs responses",
                expected: train_y.len(),
                found: train_f.n(),
            });
        }
        if train_y.is_empty() {
            return Err(Error::invalid("predictor needs at least one training point"));
        }
        if train_f.r() != fit.r() {
            return Err(Error::DimensionMismatch {
                context: "training design columns vs fitted β",
                expected: fit.r(),
                found: train_f.r(),
            });
        }
        if !check_centered(train_f.f()) {
            return Err(Error::DegenerateBasis("training design columns must sum to zero".into()));
        }
        let omega_inv = numerics::inverse_pd(fit.omega2.matrix(), "Ω̂²")?;
        let mut logdet = numerics::logdet_named(fit.omega2.matrix(), "Ω̂²")?;
        let g = fit.gamma.matrix();
        let mut precision = g * &omega_inv * g.transpose();
        if let (Some(g0), Some(o0)) = (&fit.gamma0, &fit.omega0_2) {
            let o0_inv = numerics::inverse_pd(o0.matrix(), "Ω̂₀²")?;
            logdet += numerics::logdet_named(o0.matrix(), "Ω̂₀²")?;
            precision += g0.matrix() * o0_inv * g0.matrix().transpose();
        }
        let shifts = &fit.beta * train_f.f().transpose();
        let offsets = DVector::from_iterator(
            shifts.ncols(),
            shifts.column_iter().map(|a| 0.5 * (a.transpose() * &omega_inv * a)[(0, 0)]),
        );
        Ok(Predictor {
            fit,
            train_y,
            train_f,
            precision: numerics::symmetrize(precision),
            logdet,
            omega_inv,
            shifts,
            offsets,
        })
    }

    pub fn fit(&self) -> &FittedReduction {
        &self.fit
    }

    pub fn train_y(&self) -> &DVector<f64> {
        &self.train_y
    }

    pub fn train_design(&self) -> &DesignBasis {
        &self.train_f
    }

    pub fn p(&self) -> usize {
        self.fit.p()
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "query point length",
                expected: self.p(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite query point"));
        }
        Ok(())
    }

    /// Conditional mean `μ̂ + Γ̂β̂f_{yᵢ}` of training observation `i`.
    pub fn conditional_mean(&self, i: usize) -> DVector<f64> {
        &self.fit.mu + self.fit.gamma.matrix() * self.shifts.column(i)
    }

    /// `log N̂(x | yᵢ)` including all normalizing constants.
    pub fn log_inverse_density(&self, x: &DVector<f64>, i: usize) -> Result<f64> {
        self.check_x(x)?;
        if i >= self.train_y.len() {
            return Err(Error::invalid(format!("training index {i} out of range")));
        }
        let r = x - self.conditional_mean(i);
        let quad = (r.transpose() * &self.precision * &r)[(0, 0)];
        Ok(-0.5 * (self.p() as f64 * LN_2PI + self.logdet + quad))
    }

    /// Normalized weights `N̂(x|yᵢ) / Σⱼ N̂(x|yⱼ)`.
    pub fn weights(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let z = &self.omega_inv * (self.fit.gamma.matrix().transpose() * (x - &self.fit.mu));
        let logits: Vec<f64> = self
            .shifts
            .column_iter()
            .zip(self.offsets.iter())
            .map(|(a, off)| a.dot(&z) - off)
            .collect();
        let lse = log_sum_exp(&logits)?;
        let mut w = DVector::from_iterator(logits.len(), logits.iter().map(|l| (l - lse).exp()));
        let total = w.sum();
        w /= total;
        Ok(w)
    }

    /// `Ê(Y | X = x)`.
    pub fn forward_mean(&self, x: &DVector<f64>) -> Result<f64> {
        let w = self.weights(x)?;
        let (lo, hi) = self
            .train_y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        Ok(w.dot(&self.train_y).clamp(lo, hi))
    }

    /// Residuals `yᵢ − Ê(Y | xᵢ)` and reduced coordinates `Γ̂ᵀ(xᵢ − μ̂)`.
    pub fn residuals(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "residuals: rows vs responses",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        let yhat = self.predict(x)?;
        Ok((y - yhat, self.fit.reduce(x)?))
    }

    /// Forward mean at every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "query columns",
                expected: self.p(),
                found: x.ncols(),
            });
        }
        let values = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.forward_mean(&x.row(i).transpose()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DVector::from_vec(values))
    }
}

pub fn log_inverse_density(pred: &Predictor, x: &DVector<f64>, i: usize) -> Result<f64> {
    pred.log_inverse_density(x, i)
}

pub fn forward_mean(pred: &Predictor, x: &DVector<f64>) -> Result<f64> {
    pred.forward_mean(x)
}

pub fn residuals(pred: &Predictor, data: &crate::model::Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    pred.residuals(data.x(), data.y())
}
