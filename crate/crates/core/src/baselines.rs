//! Comparison estimators: OLS, OLS projected onto a fitted reduction,
//! Krylov-subspace PLS, supervised principal components, standardized
//! PCA, and the R² between two reductions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::fit_pc;
use crate::model::{center_columns, reduce_with, Dataset, FittedReduction, MomentSet};
use crate::numerics::{self, sym_eigen, Basis, SymmetricMatrix, Tolerances, DEFAULT_TOLERANCES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoefMethod {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "PROJECTED")]
    Projected,
    #[serde(rename = "PLS")]
    Pls,
}

impl fmt::Display for CoefMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoefMethod::Ols => "OLS",
            CoefMethod::Projected => "PROJECTED",
            CoefMethod::Pls => "PLS",
        })
    }
}

/// A coefficient vector for the linear predictor `ȳ + (x − x̄)ᵀb`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    pub method: CoefMethod,
    pub b: DVector<f64>,
    /// Requested Krylov order for PLS.
    pub q: Option<usize>,
    /// Krylov columns actually retained.
    pub effective_q: Option<usize>,
    /// Reduction dimension for the projected estimator.
    pub d: Option<usize>,
}

impl CoefficientEstimate {
    fn new(method: CoefMethod, b: DVector<f64>) -> Result<Self> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::singular(format!("{method} coefficients are not finite")));
        }
        Ok(CoefficientEstimate {
            method,
            b,
            q: None,
            effective_q: None,
            d: None,
        })
    }
}

/// `b = Σ̂⁻¹Ĉ`.
pub fn ols_coeffs(m: &MomentSet) -> Result<CoefficientEstimate> {
    let chol = numerics::cholesky(m.sigma.matrix(), "Σ̂")?;
    CoefficientEstimate::new(CoefMethod::Ols, chol.solve(&m.c_hat))
}

/// `b = Γ̂(Γ̂ᵀΣ̂Γ̂)⁻¹Γ̂ᵀĈ`, the Σ̂-inner-product projection of OLS onto `span(Γ̂)`.
pub fn projected_ols(fit: &FittedReduction, m: &MomentSet) -> Result<CoefficientEstimate> {
    projected_onto(&fit.gamma, m).map(|mut est| {
        est.d = Some(fit.d);
        est
    })
}

pub fn projected_onto(gamma: &Basis, m: &MomentSet) -> Result<CoefficientEstimate> {
    if gamma.rows() != m.p {
        return Err(Error::DimensionMismatch {
            context: "projected_ols: basis rows vs predictors",
            expected: m.p,
            found: gamma.rows(),
        });
    }
    let g = gamma.matrix();
    let gsg = numerics::symmetrize(g.transpose() * m.sigma.matrix() * g);
    let chol = numerics::cholesky(&gsg, "Γ̂ᵀΣ̂Γ̂")?;
    let mut est = CoefficientEstimate::new(CoefMethod::Projected, g * chol.solve(&(g.transpose() * &m.c_hat)))?;
    est.d = Some(gamma.cols());
    Ok(est)
}

/// PLS coefficients from the order-`q` Krylov space `(Ĉ, Σ̂Ĉ, …, Σ̂^{q−1}Ĉ)`.
///
/// Only matrix–vector products with Σ̂ and a `q × q` solve are used.
pub fn pls_coeffs(m: &MomentSet, q: usize) -> Result<CoefficientEstimate> {
    pls_with_operator(|v| m.sigma.matrix() * v, &m.c_hat, q, &DEFAULT_TOLERANCES)
}

/// PLS against any symmetric linear operator given by its action `apply`.
pub fn pls_with_operator<F>(apply: F, c: &DVector<f64>, q: usize, tol: &Tolerances) -> Result<CoefficientEstimate>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if q == 0 {
        return Err(Error::invalid("PLS order q must be >= 1"));
    }
    let c_norm = c.norm();
    if !(c_norm > 0.0) {
        return Err(Error::Degenerate("Ĉ = 0: the response is uncorrelated with every predictor".into()));
    }
    let p = c.len();
    let drop_tol = tol.krylov_drop * c_norm;

    // Orthonormal Krylov basis; each new direction is Σ̂ applied to the
    // latest basis vector, rescaled to ‖Ĉ‖ before orthogonalization.
    let mut basis: Vec<DVector<f64>> = vec![c / c_norm];
    let mut images: Vec<DVector<f64>> = Vec::new();
    while basis.len() < q.min(p) {
        let last = basis.last().expect("nonempty");
        let image = apply(last);
        let scale = image.norm();
        images.push(image.clone());
        if !(scale > 0.0) {
            break;
        }
        let mut w = image * (c_norm / scale);
        for _ in 0..2 {
            for v in &basis {
                let dot = v.dot(&w);
                w.axpy(-dot, v, 1.0);
            }
        }
        let res = w.norm();
        if res < drop_tol {
            break;
        }
        basis.push(w / res);
    }
    let k = basis.len();
    while images.len() < k {
        images.push(apply(&basis[images.len()]));
    }
    let kt = DMatrix::from_columns(&basis);
    let sk = DMatrix::from_columns(&images[..k]);
    let gram = numerics::symmetrize(kt.transpose() * sk);
    let chol = numerics::cholesky(&gram, "K̃ᵀΣ̂K̃")?;
    let b = &kt * chol.solve(&(kt.transpose() * c));
    let mut est = CoefficientEstimate::new(CoefMethod::Pls, b)?;
    est.q = Some(q);
    est.effective_q = Some(k);
    Ok(est)
}

/// Marginal screening rule for supervised principal components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScreenRule {
    TopK(usize),
    /// Keep predictors whose score strictly exceeds the threshold.
    Threshold(f64),
}

impl FromStr for ScreenRule {
    type Err = Error;

    /// `top:<k>` or `thr:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("screen rule '{s}' must look like top:5 or thr:0.2"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "top" => arg.trim().parse().map(ScreenRule::TopK).map_err(|_| bad()),
            "thr" => {
                let t: f64 = arg.trim().parse().map_err(|_| bad())?;
                if !(t >= 0.0) {
                    return Err(bad());
                }
                Ok(ScreenRule::Threshold(t))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ScreenRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScreenRule::TopK(k) => write!(f, "top:{k}"),
            ScreenRule::Threshold(t) => write!(f, "thr:{t}"),
        }
    }
}

/// Partition of predictors into a kept block `X₁` and a dropped block `X₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenedPartition {
    /// Kept indices, in decreasing score order.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Screens on `|corr(X_j, y)|`; ties favor the lower index.
pub fn screen_predictors(data: &Dataset, rule: ScreenRule) -> Result<ScreenedPartition> {
    let p = data.p();
    let xc = data.centered_x();
    let yc = data.y().add_scalar(-data.y().mean());
    let yn = yc.norm();
    let scores: Vec<f64> = xc
        .column_iter()
        .map(|col| if yn > 0.0 { (col.dot(&yc) / (col.norm() * yn)).abs().min(1.0) } else { 0.0 })
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let kept: Vec<usize> = match rule {
        ScreenRule::TopK(k) => {
            if k > p {
                return Err(Error::invalid(format!("top:{k} exceeds the {p} predictors")));
            }
            order.iter().copied().take(k).collect()
        }
        ScreenRule::Threshold(t) => order.iter().copied().filter(|&j| scores[j] > t).collect(),
    };
    if kept.is_empty() {
        return Err(Error::Degenerate(format!("screening rule {rule} kept no predictors")));
    }
    let mut dropped: Vec<usize> = (0..p).filter(|j| !kept.contains(j)).collect();
    dropped.sort_unstable();
    Ok(ScreenedPartition { kept, dropped, scores })
}

/// A linear reduction `x ↦ basisᵀ(x − μ)` on the full predictor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub label: String,
    pub mu: DVector<f64>,
    pub basis: Basis,
}

impl Reduction {
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        reduce_with(&self.mu, self.basis.matrix(), x)
    }

    pub fn d(&self) -> usize {
        self.basis.cols()
    }
}

impl From<&FittedReduction> for Reduction {
    fn from(fit: &FittedReduction) -> Self {
        Reduction {
            label: fit.kind.to_string(),
            mu: fit.mu.clone(),
            basis: fit.gamma.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpcReduction {
    pub partition: ScreenedPartition,
    /// PCA loadings of the kept block, zero on dropped coordinates.
    pub reduction: Reduction,
    pub eigenvalues: DVector<f64>,
}

/// Supervised principal components: screen, then PCA of the kept block.
pub fn spc(data: &Dataset, rule: ScreenRule, d: usize) -> Result<SpcReduction> {
    let partition = screen_predictors(data, rule)?;
    let k = partition.kept.len();
    if d == 0 || d > k {
        return Err(Error::invalid(format!("d = {d} must be between 1 and the {k} kept predictors")));
    }
    let mut cols = partition.kept.clone();
    cols.sort_unstable();
    let block = Dataset::new(data.x().select_columns(cols.iter()), data.y().clone())?;
    let pc = fit_pc(&block, d)?;
    let mut embedded = DMatrix::zeros(data.p(), d);
    for (row, &j) in cols.iter().enumerate() {
        embedded.set_row(j, &pc.gamma.matrix().row(row));
    }
    let xc = block.centered_x();
    let sigma = SymmetricMatrix::new(xc.transpose() * &xc / block.n() as f64)?;
    let (vals, _) = sym_eigen(&sigma)?;
    Ok(SpcReduction {
        partition,
        reduction: Reduction {
            label: "SPC".into(),
            mu: data.column_means(),
            basis: Basis::new(embedded)?,
        },
        eigenvalues: vals.rows(0, d).into_owned(),
    })
}

/// PCA after scaling every predictor to unit standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedPc {
    /// Marginal standard deviations (divisor `n`).
    pub scales: DVector<f64>,
    /// Loadings `V` on the standardized predictors.
    pub standardized: Basis,
    /// The same linear functionals in original units: `D⁻¹V`.
    pub original: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub mu: DVector<f64>,
}

impl StandardizedPc {
    /// Orthonormal basis for `span(D⁻¹V)`.
    pub fn span(&self) -> Result<Basis> {
        Basis::orthonormalize(&self.original)
    }

    /// Component scores `((x − x̄)/s)ᵀV`.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        reduce_with(&self.mu, &self.original, x)
    }

    pub fn reduction(&self) -> Result<Reduction> {
        Ok(Reduction {
            label: "SPCA".into(),
            mu: self.mu.clone(),
            basis: self.span()?,
        })
    }
}

pub fn standardized_pc(data: &Dataset, d: usize) -> Result<StandardizedPc> {
    let p = data.p();
    if d == 0 || d > p {
        return Err(Error::invalid(format!("d = {d} must satisfy 1 <= d <= p = {p}")));
    }
    let n = data.n() as f64;
    let xc = data.centered_x();
    let scales = DVector::from_iterator(p, xc.column_iter().map(|c| (c.norm_squared() / n).sqrt()));
    let mut z = xc;
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    let corr = SymmetricMatrix::new(z.transpose() * &z / n)?;
    let (vals, vecs) = sym_eigen(&corr)?;
    let v = vecs.matrix().columns(0, d).into_owned();
    let mut original = v.clone();
    for (j, mut row) in original.row_iter_mut().enumerate() {
        row /= scales[j];
    }
    Ok(StandardizedPc {
        scales,
        standardized: Basis::new(v)?,
        original,
        eigenvalues: vals.rows(0, d).into_owned(),
        mu: data.column_means(),
    })
}

/// R² of the least-squares regression of `u` on `Z` with an intercept.
pub fn r2_between(u: &DVector<f64>, z: &DMatrix<f64>) -> Result<f64> {
    let n = u.len();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "r2_between: rows",
            expected: n,
            found: z.nrows(),
        });
    }
    if z.ncols() == 0 || z.ncols() >= n {
        return Err(Error::invalid("r2_between needs 1 <= columns < rows"));
    }
    let uc = u.add_scalar(-u.mean());
    let sst = uc.norm_squared();
    if !(sst > 0.0) {
        return Err(Error::Degenerate("r2_between: response vector is constant".into()));
    }
    let zc = center_columns(z);
    let qr = zc.clone().qr();
    let rdiag = qr.r().diagonal();
    let scale = zc.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if rdiag.iter().any(|v| !(v.abs() > 1e-12 * scale)) {
        return Err(Error::singular("centered Z is rank deficient"));
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * &uc);
    let ssr = (&uc - fitted).norm_squared();
    Ok((1.0 - ssr / sst).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn moments_from(sigma: DMatrix<f64>, c: DVector<f64>) -> MomentSet {
        let p = c.len();
        let s = SymmetricMatrix::new(sigma).unwrap();
        MomentSet {
            n: 100,
            p,
            r: 1,
            xbar: DVector::zeros(p),
            ybar: 0.0,
            sigma: s.clone(),
            sigma_fit: SymmetricMatrix::new(DMatrix::zeros(p, p)).unwrap(),
            sigma_res: s,
            c_hat: c,
            cross_xf: DMatrix::zeros(p, 1),
            var_f: SymmetricMatrix::identity(1),
        }
    }

    #[test]
    fn ols_identity_and_scalar() {
        let c = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        let m = moments_from(DMatrix::identity(3, 3), c.clone());
        assert_eq!(ols_coeffs(&m).unwrap().b, c);
        let m = moments_from(DMatrix::from_element(1, 1, 4.0), DVector::from_element(1, 2.0));
        assert_abs_diff_eq!(ols_coeffs(&m).unwrap().b[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ols_singular() {
        let m = moments_from(DMatrix::from_diagonal_element(2, 2, 0.0), DVector::from_element(2, 1.0));
        assert!(matches!(ols_coeffs(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn pls_single_eigenvector() {
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[5.0, 2.0, 1.0]));
        let c = DVector::from_column_slice(&[0.0, 3.0, 0.0]);
        let m = moments_from(sigma, c);
        let pls = pls_coeffs(&m, 1).unwrap();
        assert_abs_diff_eq!(pls.b[1], 1.5, epsilon = 1e-14);
        assert_eq!(pls.effective_q, Some(1));
        // Higher orders collapse: Σ̂Ĉ ∝ Ĉ.
        assert_eq!(pls_coeffs(&m, 3).unwrap().effective_q, Some(1));
    }

    #[test]
    fn pls_zero_c() {
        let m = moments_from(DMatrix::identity(2, 2), DVector::zeros(2));
        assert!(matches!(pls_coeffs(&m, 1), Err(Error::Degenerate(_))));
        let m = moments_from(DMatrix::identity(2, 2), DVector::from_element(2, 1.0));
        assert!(pls_coeffs(&m, 0).is_err());
    }

    #[test]
    fn screen_rule_parsing() {
        assert_eq!("top:3".parse::<ScreenRule>().unwrap(), ScreenRule::TopK(3));
        assert_eq!("thr:0.25".parse::<ScreenRule>().unwrap(), ScreenRule::Threshold(0.25));
        assert!("thr:-1".parse::<ScreenRule>().is_err());
        assert!("best:2".parse::<ScreenRule>().is_err());
    }

    #[test]
    fn r2_exact_and_orthogonal() {
        let z = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let u = z.column(0).map(|v| 3.0 - 2.0 * v);
        assert_abs_diff_eq!(r2_between(&u, &z).unwrap(), 1.0, epsilon = 1e-14);
        let u = DVector::from_column_slice(&[1.0, -1.0, 0.0, -1.0, 1.0]);
        assert_abs_diff_eq!(r2_between(&u, &z).unwrap(), 0.0, epsilon = 1e-14);
        let z2 = DMatrix::from_column_slice(5, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!(matches!(r2_between(&u, &z2), Err(Error::Singular { .. })));
    }
}
