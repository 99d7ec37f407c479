//! Regression data, inverse-regression bases, sample moments and the
//! profile likelihood of the structured inverse model.
//!
//! The inverse model is
//!
//! ```text
//! X | Y = y  ~  N(μ + Γ β f_y,  Γ Ω² Γᵀ + Γ₀ Ω₀² Γ₀ᵀ)
//! ```
//!
//! with `Γ` a `p × d` semi-orthogonal matrix, `Γ₀` its orthogonal
//! completion, `f_y` a centered `r`-vector of basis functions of the
//! response, and `Ω²`, `Ω₀²` general positive definite blocks.
//!
//! # Profile likelihood
//!
//! Fix `S = Γ` and complete it to an orthogonal `[S, S₀]`. The rotated
//! coordinates `SᵀX` and `S₀ᵀX` are conditionally independent given `y`:
//!
//! * `SᵀX | y ~ N(Sᵀμ + β f_y, Ω²)` is a multivariate linear regression on
//!   the centered design `F`, maximized at `β̂ = SᵀX_cᵀF(FᵀF)⁻¹` and
//!   `Ω̂² = SᵀΣ̂_res S`;
//! * `S₀ᵀX | y ~ N(S₀ᵀμ, Ω₀²)` has no dependence on `y`, maximized at
//!   `Ω̂₀² = S₀ᵀΣ̂S₀`.
//!
//! Because `F` is centered, `μ̂ = x̄` in both blocks. The rotation has unit
//! Jacobian, and each block's maximized Gaussian log-likelihood is
//! `-(n/2)[k log 2π + k + log|Ω̂|]`, so
//!
//! ```text
//! L(S) = -(n/2) [ p log 2π + p + log|SᵀΣ̂_res S| + log|S₀ᵀΣ̂S₀| ].
//! ```
//!
//! For optimization the `S₀` term is rewritten with the determinant identity
//! `log|S₀ᵀΣ̂S₀| = log|Σ̂| + log|SᵀΣ̂⁻¹S|`, valid for any orthogonal `[S, S₀]`.
//! With `A = Σ̂_res` and `B = Σ̂⁻¹`, the Euclidean gradient of
//! `log|SᵀAS|` is `2AS(SᵀAS)⁻¹`, which gives
//!
//! ```text
//! ∇L(S) = -n [ Σ̂_res S (SᵀΣ̂_res S)⁻¹ + Σ̂⁻¹ S (SᵀΣ̂⁻¹S)⁻¹ ].
//! ```
//!
//! `L(SQ) = L(S)` for orthogonal `Q`, so `L` is a function on the Grassmann
//! manifold.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, symmetrize, Basis, SymmetricMatrix, DEFAULT_TOLERANCES};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A regression sample: `n × p` predictors and a length-`n` response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows vs response length",
                expected: n,
                found: y.len(),
            });
        }
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 observations, got {n}")));
        }
        if p == 0 {
            return Err(Error::invalid("need at least one predictor"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in data"));
        }
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = col.amax().max(f64::MIN_POSITIVE);
            if var <= (1e-14 * scale).powi(2) {
                return Err(Error::invalid(format!("predictor column {} is constant", j + 1)));
            }
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_means(&self) -> DVector<f64> {
        column_means(&self.x)
    }

    pub fn centered_x(&self) -> DMatrix<f64> {
        center_columns(&self.x)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset::new(x, y)
    }
}

pub(crate) fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(x);
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    xc
}

/// Choice of inverse-regression basis `f_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisSpec {
    /// `(y, y², …, y^degree)`; `r = degree`.
    Polynomial { degree: usize },
    /// Indicators of `count` equal-count response slices; `r = count − 1`.
    Slices { count: usize },
}

impl BasisSpec {
    pub fn r(&self) -> usize {
        match *self {
            BasisSpec::Polynomial { degree } => degree,
            BasisSpec::Slices { count } => count.saturating_sub(1),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            BasisSpec::Polynomial { degree } if degree == 0 => {
                return Err(Error::invalid("polynomial degree must be >= 1"))
            }
            BasisSpec::Slices { count } if count < 2 => {
                return Err(Error::invalid("slice count must be >= 2"))
            }
            _ => {}
        }
        if self.r() >= n {
            return Err(Error::invalid(format!("basis dimension r = {} must be < n = {n}", self.r())));
        }
        Ok(())
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Polynomial { degree } => write!(f, "poly:{degree}"),
            BasisSpec::Slices { count } => write!(f, "slices:{count}"),
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    /// Parses `poly:<degree>` or `slices:<count>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("basis '{s}' must look like poly:3 or slices:8")))?;
        let value: usize = arg
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("basis parameter '{arg}' is not a positive integer")))?;
        let spec = match kind.trim() {
            "poly" | "polynomial" => BasisSpec::Polynomial { degree: value },
            "slices" | "slice" => BasisSpec::Slices { count: value },
            other => return Err(Error::invalid(format!("unknown basis kind '{other}' (use poly or slices)"))),
        };
        spec.validate(usize::MAX)?;
        Ok(spec)
    }
}

/// The realized, column-centered `n × r` design matrix `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBasis {
    f: DMatrix<f64>,
    spec: BasisSpec,
}

impl DesignBasis {
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn r(&self) -> usize {
        self.f.ncols()
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    /// `FᵀF / n`, the sample `Var(f_Y)`.
    pub fn var_f(&self) -> DMatrix<f64> {
        symmetrize(self.f.transpose() * &self.f / self.n() as f64)
    }
}

/// Builds the centered design `F` for `y` under `spec`.
///
/// Polynomial columns are powers of `(y − ȳ)/max|y − ȳ|`, each centered.
/// Slices use equal-count boundaries; observations tied at a boundary go
/// to the lower slice. The first slice is the reference level.
pub fn build_basis(y: &DVector<f64>, spec: BasisSpec) -> Result<DesignBasis> {
    let n = y.len();
    spec.validate(n)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response value"));
    }
    let r = spec.r();
    let mut f = match spec {
        BasisSpec::Polynomial { degree } => {
            let mut distinct: Vec<f64> = y.iter().copied().collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < degree + 1 {
                return Err(Error::DegenerateBasis(format!(
                    "polynomial degree {degree} needs at least {} distinct response values, found {}",
                    degree + 1,
                    distinct.len()
                )));
            }
            let mean = y.mean();
            let scale = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            let z = y.map(|v| (v - mean) / scale);
            DMatrix::from_fn(n, degree, |i, k| z[i].powi(k as i32 + 1))
        }
        BasisSpec::Slices { count } => {
            let labels = slice_labels(y, count);
            let mut sizes = vec![0usize; count];
            for &l in &labels {
                sizes[l] += 1;
            }
            if let Some((s, &size)) = sizes.iter().enumerate().find(|(_, &c)| c < 2) {
                return Err(Error::DegenerateBasis(format!(
                    "slice {} of {count} received {size} observation(s); every slice needs at least 2",
                    s + 1
                )));
            }
            DMatrix::from_fn(n, count - 1, |i, k| if labels[i] == k + 1 { 1.0 } else { 0.0 })
        }
    };
    for mut col in f.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let ftf = symmetrize(f.transpose() * &f);
    if numerics::cholesky(&ftf, "FᵀF").is_err() {
        return Err(Error::DegenerateBasis(format!("design matrix F does not have full column rank {r}")));
    }
    Ok(DesignBasis { f, spec })
}

/// Slice index (0-based) of each observation for `count` equal-count slices.
pub(crate) fn slice_labels(y: &DVector<f64>, count: usize) -> Vec<usize> {
    let n = y.len();
    let mut sorted: Vec<f64> = y.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let bounds: Vec<f64> = (1..count)
        .map(|k| {
            let cut = ((k * n) as f64 / count as f64).round() as usize;
            sorted[cut.clamp(1, n) - 1]
        })
        .collect();
    y.iter()
        .map(|v| bounds.iter().filter(|&&b| *v > b).count())
        .collect()
}

/// Sample moments entering every likelihood and baseline (divisor `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub xbar: DVector<f64>,
    pub ybar: f64,
    /// Σ̂ = X_cᵀX_c / n
    pub sigma: SymmetricMatrix,
    /// Σ̂_fit = X_cᵀ P_F X_c / n
    pub sigma_fit: SymmetricMatrix,
    /// Σ̂_res = Σ̂ − Σ̂_fit
    pub sigma_res: SymmetricMatrix,
    /// Ĉ = X_cᵀ(y − ȳ) / n
    pub c_hat: DVector<f64>,
    /// X_cᵀF / n
    pub cross_xf: DMatrix<f64>,
    /// FᵀF / n
    pub var_f: SymmetricMatrix,
}

pub fn moments(data: &Dataset, basis: &DesignBasis) -> Result<MomentSet> {
    let n = data.n();
    if basis.n() != n {
        return Err(Error::DimensionMismatch {
            context: "design basis rows vs dataset rows",
            expected: n,
            found: basis.n(),
        });
    }
    let nf = n as f64;
    let xc = data.centered_x();
    let ybar = data.y().mean();
    let yc = data.y().add_scalar(-ybar);

    let sigma = symmetrize(xc.transpose() * &xc / nf);
    let cross_xf = xc.transpose() * basis.f() / nf;
    let var_f = basis.var_f();
    let chol = numerics::cholesky(&var_f, "FᵀF")
        .map_err(|_| Error::DegenerateBasis("FᵀF is singular".into()))?;
    let sigma_fit = symmetrize(&cross_xf * chol.solve(&cross_xf.transpose()));
    let sigma_res = symmetrize(&sigma - &sigma_fit);
    let c_hat = xc.transpose() * yc / nf;

    Ok(MomentSet {
        n,
        p: data.p(),
        r: basis.r(),
        xbar: data.column_means(),
        ybar,
        sigma: SymmetricMatrix::new(sigma)?,
        sigma_fit: SymmetricMatrix::new(sigma_fit)?,
        sigma_res: SymmetricMatrix::new(sigma_res)?,
        c_hat,
        cross_xf,
        var_f: SymmetricMatrix::new(var_f)?,
    })
}

/// Profile log-likelihood `L(S)` of the structured model at `span(S)`.
pub fn profile_loglik(s: &Basis, m: &MomentSet) -> Result<f64> {
    check_rows(s, m)?;
    let p = m.p as f64;
    let st = s.matrix().transpose();
    let res = logdet_block(&st, m.sigma_res.matrix(), s.matrix(), "ΓᵀΣ̂_resΓ")?;
    let comp = match s.complement() {
        Some(s0) => {
            let s0m = s0.matrix();
            logdet_block(&s0m.transpose(), m.sigma.matrix(), s0m, "Γ₀ᵀΣ̂Γ₀")?
        }
        None => 0.0,
    };
    Ok(-0.5 * m.n as f64 * (p * LN_2PI + p + res + comp))
}

/// Maximized log-likelihood of the unstructured model (`d = p`).
pub fn full_model_loglik(m: &MomentSet) -> Result<f64> {
    profile_loglik(&Basis::axes(m.p, m.p), m)
}

fn check_rows(s: &Basis, m: &MomentSet) -> Result<()> {
    if s.rows() != m.p {
        return Err(Error::DimensionMismatch {
            context: "subspace basis rows vs predictors",
            expected: m.p,
            found: s.rows(),
        });
    }
    Ok(())
}

fn logdet_block(left: &DMatrix<f64>, mid: &DMatrix<f64>, right: &DMatrix<f64>, name: &str) -> Result<f64> {
    numerics::logdet_named(&symmetrize(left * mid * right), name)
}

/// The Grassmann objective in the `S₀`-free form, with its gradient.
///
/// `value(S) = L(S)` exactly; `per_obs_*` are `L/n` and its gradient, the
/// scale used by the optimizer.
#[derive(Debug, Clone)]
pub struct ProfileObjective {
    n: f64,
    constant: f64,
    sigma_res: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
}

impl ProfileObjective {
    pub fn new(m: &MomentSet) -> Result<Self> {
        let p = m.p as f64;
        let logdet_sigma = numerics::logdet_named(m.sigma.matrix(), "Σ̂")?;
        let sigma_inv = numerics::inverse_pd(m.sigma.matrix(), "Σ̂")?;
        Ok(ProfileObjective {
            n: m.n as f64,
            constant: -0.5 * (p * LN_2PI + p + logdet_sigma),
            sigma_res: m.sigma_res.matrix().clone(),
            sigma_inv,
        })
    }

    /// `L(S)/n`.
    pub fn per_obs_value(&self, s: &DMatrix<f64>) -> Result<f64> {
        let st = s.transpose();
        let a = logdet_block(&st, &self.sigma_res, s, "ΓᵀΣ̂_resΓ")?;
        let b = logdet_block(&st, &self.sigma_inv, s, "ΓᵀΣ̂⁻¹Γ")?;
        Ok(self.constant - 0.5 * (a + b))
    }

    pub fn value(&self, s: &DMatrix<f64>) -> Result<f64> {
        Ok(self.n * self.per_obs_value(s)?)
    }

    /// Euclidean gradient of `L(S)/n`.
    pub fn per_obs_gradient(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let st = s.transpose();
        let as_ = &self.sigma_res * s;
        let bs = &self.sigma_inv * s;
        let ia = numerics::inverse_pd(&symmetrize(&st * &as_), "ΓᵀΣ̂_resΓ")?;
        let ib = numerics::inverse_pd(&symmetrize(&st * &bs), "ΓᵀΣ̂⁻¹Γ")?;
        Ok(-(as_ * ia + bs * ib))
    }

    pub fn n(&self) -> f64 {
        self.n
    }
}

/// Inner maximum-likelihood estimates for a fixed span.
#[derive(Debug, Clone)]
pub struct InnerMle {
    pub beta: DMatrix<f64>,
    pub omega2: SymmetricMatrix,
    pub gamma0: Option<Basis>,
    pub omega0_2: Option<SymmetricMatrix>,
}

/// `β̂ = SᵀX_cᵀF(FᵀF)⁻¹`, `Ω̂² = SᵀΣ̂_res S`, `Ω̂₀² = S₀ᵀΣ̂S₀`.
pub fn inner_mle(s: &Basis, gamma0: Option<Basis>, m: &MomentSet) -> Result<InnerMle> {
    check_rows(s, m)?;
    let st = s.matrix().transpose();
    let chol = numerics::cholesky(m.var_f.matrix(), "FᵀF")?;
    let beta = chol.solve(&(&st * &m.cross_xf).transpose()).transpose();
    let omega2 = SymmetricMatrix::new(&st * m.sigma_res.matrix() * s.matrix())?;
    let omega0_2 = match &gamma0 {
        Some(g0) => Some(SymmetricMatrix::new(
            g0.matrix().transpose() * m.sigma.matrix() * g0.matrix(),
        )?),
        None => None,
    };
    Ok(InnerMle {
        beta,
        omega2,
        gamma0,
        omega0_2,
    })
}

/// Which inverse model a [`FittedReduction`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "PFC_ISO")]
    PfcIso,
    #[serde(rename = "EXTENDED")]
    Extended,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Pc => "PC",
            ModelKind::PfcIso => "PFC_ISO",
            ModelKind::Extended => "EXTENDED",
        })
    }
}

/// An estimated inverse model.
///
/// `gamma0` and `omega0_2` are `None` when `d = p`. PC fits carry no
/// response basis: `spec` is `None` and `beta` has zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedReduction {
    pub kind: ModelKind,
    pub d: usize,
    pub n: usize,
    pub mu: DVector<f64>,
    pub gamma: Basis,
    pub gamma0: Option<Basis>,
    pub beta: DMatrix<f64>,
    pub omega2: SymmetricMatrix,
    pub omega0_2: Option<SymmetricMatrix>,
    pub loglik: f64,
    pub spec: Option<BasisSpec>,
    /// False when the iterative fit stopped at `max_iters`.
    pub converged: bool,
    pub iterations: usize,
    pub seed: Option<u64>,
}

impl FittedReduction {
    pub fn p(&self) -> usize {
        self.gamma.rows()
    }

    pub fn r(&self) -> usize {
        self.beta.ncols()
    }

    /// `Γ̂Ω̂²Γ̂ᵀ + Γ̂₀Ω̂₀²Γ̂₀ᵀ`, the fitted `Var(X|Y)`.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let g = self.gamma.matrix();
        let mut s = g * self.omega2.matrix() * g.transpose();
        if let (Some(g0), Some(o0)) = (&self.gamma0, &self.omega0_2) {
            s += g0.matrix() * o0.matrix() * g0.matrix().transpose();
        }
        symmetrize(s)
    }

    /// `M = Ω̂² + β̂ Var(f_Y) β̂ᵀ`.
    pub fn m_matrix(&self, var_f: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if var_f.dim() != self.r() {
            return Err(Error::DimensionMismatch {
                context: "Var(f_Y) vs basis dimension",
                expected: self.r(),
                found: var_f.dim(),
            });
        }
        SymmetricMatrix::new(self.omega2.matrix() + &self.beta * var_f.matrix() * self.beta.transpose())
    }

    /// `(X − 1μ̂ᵀ)Γ̂`.
    pub fn reduce(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        reduce_with(&self.mu, self.gamma.matrix(), x)
    }
}

pub(crate) fn reduce_with(mu: &DVector<f64>, basis: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != mu.len() {
        return Err(Error::DimensionMismatch {
            context: "reduce: predictor columns",
            expected: mu.len(),
            found: x.ncols(),
        });
    }
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    Ok(xc * basis)
}

pub(crate) fn check_centered(f: &DMatrix<f64>) -> bool {
    let n = f.nrows() as f64;
    f.column_iter()
        .all(|c| c.sum().abs() <= DEFAULT_TOLERANCES.sum_to_zero * n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 2.0, 3.0, 2.0]);
        let err = Dataset::new(x, dv(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(err.to_string().contains("column 2"));
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(Dataset::new(x, dv(&[1.0])).is_err());
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(Dataset::new(x, dv(&[1.0])), Err(Error::DimensionMismatch { .. })));
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::INFINITY]);
        assert!(Dataset::new(x, dv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn centered_linear_basis() {
        let b = build_basis(&dv(&[1.0, 2.0, 3.0]), BasisSpec::Polynomial { degree: 1 }).unwrap();
        assert_eq!(b.f().as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn two_slice_indicator() {
        let b = build_basis(&dv(&[0.0, 0.0, 1.0, 1.0]), BasisSpec::Slices { count: 2 }).unwrap();
        assert_eq!(b.f().as_slice(), &[-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn cubic_basis_matches_direct_construction() {
        let y = dv(&[1.0, 2.0, 3.0, 4.0]);
        let b = build_basis(&y, BasisSpec::Polynomial { degree: 3 }).unwrap();
        // Hand construction: z = (y - 2.5)/1.5, powers, minus column means.
        let z = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for k in 0..3 {
            let col: Vec<f64> = z.iter().map(|v: &f64| v.powi(k + 1)).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            for i in 0..4 {
                assert_abs_diff_eq!(b.f()[(i, k as usize)], col[i] - mean, epsilon = 1e-14);
            }
            assert!(b.f().column(k as usize).sum().abs() < 1e-12);
        }
        assert_eq!(b.f().rank(1e-10), 3);
    }

    #[test]
    fn degenerate_bases() {
        let y = dv(&[1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(matches!(
            build_basis(&y, BasisSpec::Polynomial { degree: 2 }),
            Err(Error::DegenerateBasis(_))
        ));
        // Ties push everything into the lower slice.
        let y = dv(&[1.0, 1.0, 1.0, 1.0, 2.0]);
        assert!(matches!(build_basis(&y, BasisSpec::Slices { count: 2 }), Err(Error::DegenerateBasis(_))));
        assert!(build_basis(&y, BasisSpec::Polynomial { degree: 0 }).is_err());
        assert!(build_basis(&y, BasisSpec::Slices { count: 1 }).is_err());
        assert!(build_basis(&y, BasisSpec::Polynomial { degree: 5 }).is_err());
    }

    #[test]
    fn slices_ties_go_low() {
        let y = dv(&[3.0, 1.0, 2.0, 2.0, 2.0, 4.0, 5.0, 6.0]);
        let labels = slice_labels(&y, 2);
        // Cut after the 4th order statistic (value 2): all 2s are in slice 0.
        assert_eq!(labels, vec![1, 0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn basis_spec_parsing() {
        assert_eq!("poly:3".parse::<BasisSpec>().unwrap(), BasisSpec::Polynomial { degree: 3 });
        assert_eq!("slices:8".parse::<BasisSpec>().unwrap(), BasisSpec::Slices { count: 8 });
        assert!("poly".parse::<BasisSpec>().is_err());
        assert!("cubic:3".parse::<BasisSpec>().is_err());
        assert!("slices:1".parse::<BasisSpec>().is_err());
        assert_eq!(BasisSpec::Slices { count: 8 }.to_string(), "slices:8");
    }

    #[test]
    fn moments_no_fit_and_perfect_fit() {
        // F = (-1.5,-.5,.5,1.5)ᵀ·(1/1.5); X column orthogonal to it.
        let y = dv(&[1.0, 2.0, 3.0, 4.0]);
        let basis = build_basis(&y, BasisSpec::Polynomial { degree: 1 }).unwrap();
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, -1.0, 1.0]);
        let m = moments(&Dataset::new(x, y.clone()).unwrap(), &basis).unwrap();
        assert!(m.sigma_fit.matrix().amax() < 1e-15);
        assert_eq!(m.sigma_res, m.sigma);

        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, -2.0, -4.0, -6.0, -8.0]);
        let m = moments(&Dataset::new(x, y).unwrap(), &basis).unwrap();
        assert!(m.sigma_res.matrix().amax() < 1e-14);
    }

    #[test]
    fn profile_at_full_dimension() {
        let y = dv(&[0.3, 1.2, -0.7, 2.0, 0.1, -1.4, 0.8]);
        let x = DMatrix::from_row_slice(
            7,
            2,
            &[0.5, 1.0, 1.4, 0.2, -0.8, 0.9, 2.2, 1.6, 0.0, -0.5, -1.1, -0.2, 0.9, 0.4],
        );
        let basis = build_basis(&y, BasisSpec::Polynomial { degree: 1 }).unwrap();
        let m = moments(&Dataset::new(x, y).unwrap(), &basis).unwrap();
        let full = full_model_loglik(&m).unwrap();
        let ld = numerics::logdet_pd(&m.sigma_res).unwrap();
        assert_abs_diff_eq!(full, -3.5 * (2.0 * LN_2PI + 2.0 + ld), epsilon = 1e-12);
        let rot = Basis::orthonormalize(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5])).unwrap();
        assert_abs_diff_eq!(profile_loglik(&rot, &m).unwrap(), full, epsilon = 1e-10);
    }
}
