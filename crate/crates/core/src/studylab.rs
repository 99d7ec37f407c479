//! Simulation designs and the analytical studies built on them.
//!
//! Random draws come from `ChaCha8Rng` seeded with a `u64`; normals use
//! `rand_distr::StandardNormal` and correlated normals are formed from the
//! eigen-factor `V Λ^{1/2}` of the target covariance. Replication `k` of an
//! experiment seeded with `s` uses seed `s ^ k`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{
    ols_coeffs, pls_coeffs, projected_ols, r2_between, spc, standardized_pc, CoefficientEstimate, Reduction,
    ScreenRule,
};
use crate::error::{Error, Result};
use crate::estimation::{fit_pc, fit_pfc_iso, ExtendedProblem, GrassmannOptions};
use crate::model::{build_basis, moments, BasisSpec, Dataset};
use crate::numerics::{self, chi2_sf, max_principal_angle, sym_eigen, Basis, SymmetricMatrix};

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

/// Square-root factor `V Λ^{1/2}` of a PSD matrix.
fn sqrt_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(&SymmetricMatrix::new(s.clone())?)?;
    let mut f = vecs.into_matrix();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        col *= vals[j].max(0.0).sqrt();
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Forward model Y = βᵀX + ε, X ~ N(0, Σ)
// ---------------------------------------------------------------------------

/// Forward regression with a unit coefficient vector and known eigenstructure.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSim {
    beta: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: Basis,
    sigma_eps2: f64,
}

impl ForwardSim {
    pub fn new(beta: DVector<f64>, eigenvalues: DVector<f64>, eigenvectors: Basis, sigma_eps2: f64) -> Result<Self> {
        let p = beta.len();
        if eigenvalues.len() != p || eigenvectors.rows() != p || eigenvectors.cols() != p {
            return Err(Error::invalid("forward sim: β, eigenvalues and eigenvectors must share p"));
        }
        if (beta.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("forward sim: ‖β‖ must be 1, got {}", beta.norm())));
        }
        if eigenvalues.iter().any(|v| !(*v > 0.0)) || eigenvalues.as_slice().windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid("forward sim: eigenvalues must be positive and strictly descending"));
        }
        if !(sigma_eps2 >= 0.0) {
            return Err(Error::invalid("forward sim: σ_ε² must be nonnegative"));
        }
        Ok(ForwardSim {
            beta,
            eigenvalues,
            eigenvectors,
            sigma_eps2,
        })
    }

    pub fn from_sigma(beta: DVector<f64>, sigma: &SymmetricMatrix, sigma_eps2: f64) -> Result<Self> {
        let (vals, vecs) = sym_eigen(sigma)?;
        Self::new(beta, vals, vecs, sigma_eps2)
    }

    /// `p = 3`, `λ = (4, 2, 1)`, `V = I`, `β = (v₁ + v₂)/√2`, `σ_ε² = 1`.
    pub fn half_aligned() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        ForwardSim::new(
            DVector::from_column_slice(&[s, s, 0.0]),
            DVector::from_column_slice(&[4.0, 2.0, 1.0]),
            Basis::axes(3, 3),
            1.0,
        )
        .expect("valid preset")
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Basis {
        &self.eigenvectors
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_eps2
    }

    /// Same sim with `λ₁` replaced (must stay above `λ₂`).
    pub fn with_lambda1(&self, lambda1: f64) -> Result<Self> {
        let mut vals = self.eigenvalues.clone();
        vals[0] = lambda1;
        Self::new(self.beta.clone(), vals, self.eigenvectors.clone(), self.sigma_eps2)
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let v = self.eigenvectors.matrix();
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }

    fn loadings(&self) -> Vec<f64> {
        self.eigenvectors
            .matrix()
            .column_iter()
            .map(|v| v.dot(&self.beta).powi(2))
            .collect()
    }

    /// Squared correlation of `Y` with the first principal component:
    /// `(βᵀv₁)²λ₁ / (σ_ε² + Σⱼ (βᵀvⱼ)²λⱼ)`.
    pub fn rho1_squared(&self) -> f64 {
        let a = self.loadings();
        let total: f64 = a.iter().zip(self.eigenvalues.iter()).map(|(a, l)| a * l).sum();
        let num = a[0] * self.eigenvalues[0];
        let den = self.sigma_eps2 + total;
        if den > 0.0 {
            (num / den).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// `Var(Y | v₁ᵀX) = σ_ε² + Σ_{j≥2} (βᵀvⱼ)²λⱼ`; never reads `λ₁`.
    pub fn cond_var_pc1(&self) -> f64 {
        let a = self.loadings();
        self.sigma_eps2
            + a.iter()
                .zip(self.eigenvalues.iter())
                .skip(1)
                .map(|(a, l)| a * l)
                .sum::<f64>()
    }

    /// Draws `n` rows of `X ~ N(0, Σ)` and `Y = Xβ + ε`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 2 {
            return Err(Error::invalid("simulate_forward needs n >= 2"));
        }
        let p = self.p();
        let mut factor = self.eigenvectors.matrix().clone();
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j].sqrt();
        }
        let eps_sd = self.sigma_eps2.sqrt();
        let mut rng = rng_for(seed);
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let xi = &factor * normal_vec(&mut rng, p);
            let e: f64 = StandardNormal.sample(&mut rng);
            y[i] = xi.dot(&self.beta) + eps_sd * e;
            x.set_row(i, &xi.transpose());
        }
        Dataset::new(x, y)
    }
}

pub fn rho1_squared(sim: &ForwardSim) -> f64 {
    sim.rho1_squared()
}

pub fn cond_var_pc1(sim: &ForwardSim) -> f64 {
    sim.cond_var_pc1()
}

pub fn simulate_forward(sim: &ForwardSim, n: usize, seed: u64) -> Result<Dataset> {
    sim.simulate(n, seed)
}

// ---------------------------------------------------------------------------
// Inverse model X | y = μ + Γβf_y + e
// ---------------------------------------------------------------------------

/// Sampling law of the response in inverse simulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Default for YLaw {
    fn default() -> Self {
        YLaw::Uniform { lo: -1.0, hi: 1.0 }
    }
}

impl YLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            YLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            YLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    /// `E[Y^k]`.
    pub fn raw_moment(&self, k: u32) -> f64 {
        match *self {
            YLaw::Uniform { lo, hi } => {
                (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / ((k as f64 + 1.0) * (hi - lo))
            }
            YLaw::Normal { mean, sd } => {
                // Σ_{j even} C(k, j) mean^{k−j} sd^j (j−1)!!
                let mut total = 0.0;
                let mut binom = 1.0;
                for j in 0..=k {
                    if j > 0 {
                        binom *= (k - j + 1) as f64 / j as f64;
                    }
                    if j % 2 == 0 {
                        let dfact: f64 = (1..j).step_by(2).map(|v| v as f64).product();
                        total += binom * mean.powi((k - j) as i32) * sd.powi(j as i32) * dfact;
                    }
                }
                total
            }
        }
    }

    pub fn variance(&self) -> f64 {
        self.raw_moment(2) - self.raw_moment(1).powi(2)
    }
}

/// Generator for the structured inverse model; `d = p` gives the
/// unstructured model.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSim {
    pub mu: DVector<f64>,
    pub gamma: Basis,
    /// `d × r`
    pub beta: DMatrix<f64>,
    pub omega2: SymmetricMatrix,
    pub omega0_2: Option<SymmetricMatrix>,
    pub spec: BasisSpec,
    pub y_law: YLaw,
    gamma0: Option<Basis>,
}

impl InverseSim {
    pub fn new(
        mu: DVector<f64>,
        gamma: Basis,
        beta: DMatrix<f64>,
        omega2: SymmetricMatrix,
        omega0_2: Option<SymmetricMatrix>,
        spec: BasisSpec,
        y_law: YLaw,
    ) -> Result<Self> {
        let (p, d) = (gamma.rows(), gamma.cols());
        let r = spec.r();
        if mu.len() != p || beta.nrows() != d || beta.ncols() != r || omega2.dim() != d {
            return Err(Error::invalid("inverse sim: μ, Γ, β and Ω² dimensions disagree"));
        }
        numerics::cholesky(omega2.matrix(), "Ω²")?;
        match (&omega0_2, d < p) {
            (Some(o0), true) if o0.dim() == p - d => {
                numerics::cholesky(o0.matrix(), "Ω₀²")?;
            }
            (None, false) => {}
            _ => return Err(Error::invalid("inverse sim: Ω₀² must be (p−d)×(p−d), absent when d = p")),
        }
        if let (BasisSpec::Slices { .. }, YLaw::Normal { .. }) = (spec, y_law) {
            return Err(Error::invalid("inverse sim: slice bases are generated for uniform responses only"));
        }
        let gamma0 = gamma.complement();
        Ok(InverseSim {
            mu,
            gamma,
            beta,
            omega2,
            omega0_2,
            spec,
            y_law,
            gamma0,
        })
    }

    pub fn p(&self) -> usize {
        self.gamma.rows()
    }

    pub fn d(&self) -> usize {
        self.gamma.cols()
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    pub fn gamma0(&self) -> Option<&Basis> {
        self.gamma0.as_ref()
    }

    /// Population `f_y`: the basis centered at its population mean.
    pub fn population_f(&self, y: f64) -> DVector<f64> {
        match self.spec {
            BasisSpec::Polynomial { degree } => {
                DVector::from_fn(degree, |k, _| y.powi(k as i32 + 1) - self.y_law.raw_moment(k as u32 + 1))
            }
            BasisSpec::Slices { count } => {
                let YLaw::Uniform { lo, hi } = self.y_law else { unreachable!("checked in new") };
                let s = (((y - lo) / (hi - lo)) * count as f64).floor().clamp(0.0, count as f64 - 1.0) as usize;
                DVector::from_fn(count - 1, |k, _| if s == k + 1 { 1.0 } else { 0.0 } - 1.0 / count as f64)
            }
        }
    }

    /// Population `Var(f_Y)`.
    pub fn var_f(&self) -> DMatrix<f64> {
        match self.spec {
            BasisSpec::Polynomial { degree } => DMatrix::from_fn(degree, degree, |a, b| {
                let (a, b) = (a as u32 + 1, b as u32 + 1);
                self.y_law.raw_moment(a + b) - self.y_law.raw_moment(a) * self.y_law.raw_moment(b)
            }),
            BasisSpec::Slices { count } => {
                let h = count as f64;
                DMatrix::from_fn(count - 1, count - 1, |a, b| if a == b { 1.0 / h } else { 0.0 } - 1.0 / (h * h))
            }
        }
    }

    /// Population `Cov(f_Y, Y)`.
    pub fn cov_f_y(&self) -> DVector<f64> {
        let m1 = self.y_law.raw_moment(1);
        match self.spec {
            BasisSpec::Polynomial { degree } => DVector::from_fn(degree, |k, _| {
                let k = k as u32 + 1;
                self.y_law.raw_moment(k + 1) - self.y_law.raw_moment(k) * m1
            }),
            BasisSpec::Slices { count } => {
                let YLaw::Uniform { lo, hi } = self.y_law else { unreachable!("checked in new") };
                let h = count as f64;
                let w = (hi - lo) / h;
                DVector::from_fn(count - 1, |k, _| {
                    let mid = lo + w * (k as f64 + 1.5);
                    mid / h - m1 / h
                })
            }
        }
    }

    /// `Var(X | Y) = ΓΩ²Γᵀ + Γ₀Ω₀²Γ₀ᵀ`.
    pub fn error_covariance(&self) -> DMatrix<f64> {
        let g = self.gamma.matrix();
        let mut s = g * self.omega2.matrix() * g.transpose();
        if let (Some(g0), Some(o0)) = (&self.gamma0, &self.omega0_2) {
            s += g0.matrix() * o0.matrix() * g0.matrix().transpose();
        }
        numerics::symmetrize(s)
    }

    /// `M = Ω² + β Var(f_Y) βᵀ`.
    pub fn m_matrix(&self) -> DMatrix<f64> {
        numerics::symmetrize(self.omega2.matrix() + &self.beta * self.var_f() * self.beta.transpose())
    }

    /// Population `Var(X) = ΓMΓᵀ + Γ₀Ω₀²Γ₀ᵀ`.
    pub fn population_sigma(&self) -> DMatrix<f64> {
        let g = self.gamma.matrix();
        let mut s = g * self.m_matrix() * g.transpose();
        if let (Some(g0), Some(o0)) = (&self.gamma0, &self.omega0_2) {
            s += g0.matrix() * o0.matrix() * g0.matrix().transpose();
        }
        numerics::symmetrize(s)
    }

    /// Population `Cov(X, Y) = Γβ Cov(f_Y, Y)`.
    pub fn population_cov_xy(&self) -> DVector<f64> {
        self.gamma.matrix() * (&self.beta * self.cov_f_y())
    }

    /// Population OLS coefficients `Σ⁻¹Cov(X, Y)`.
    pub fn population_ols(&self) -> Result<DVector<f64>> {
        let chol = numerics::cholesky(&self.population_sigma(), "population Σ")?;
        Ok(chol.solve(&self.population_cov_xy()))
    }

    /// Draws `n` observations.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        let (p, r) = (self.p(), self.r());
        if n < p + r + 2 {
            return Err(Error::InsufficientSample { n, required: p + r + 2 });
        }
        let factor = sqrt_factor(&self.error_covariance())?;
        let shift = self.gamma.matrix() * &self.beta;
        let mut rng = rng_for(seed);
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let yi = self.y_law.sample(&mut rng);
            let xi = &self.mu + &shift * self.population_f(yi) + &factor * normal_vec(&mut rng, p);
            y[i] = yi;
            x.set_row(i, &xi.transpose());
        }
        Dataset::new(x, y)
    }

    /// `E[Var(Y | ΓᵀX)]`, the smallest achievable forward MSE.
    ///
    /// Monte Carlo over `ΓᵀX` with `draws` samples; the posterior variance
    /// at each sample is integrated over a fine response grid. Uniform
    /// response laws only.
    pub fn oracle_forward_mse(&self, draws: usize, seed: u64) -> Result<f64> {
        let YLaw::Uniform { lo, hi } = self.y_law else {
            return Err(Error::invalid("oracle forward MSE is implemented for uniform responses"));
        };
        let d = self.d();
        let grid_n = 4001;
        let grid: Vec<f64> = (0..grid_n)
            .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / grid_n as f64)
            .collect();
        let means: Vec<DVector<f64>> = grid.iter().map(|&y| &self.beta * self.population_f(y)).collect();
        let chol = numerics::cholesky(self.omega2.matrix(), "Ω²")?;
        let l = chol.l();
        let prec = chol.inverse();
        let total: f64 = (0..draws)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng_for(seed ^ k as u64);
                let y0 = self.y_law.sample(&mut rng);
                let t = &self.beta * self.population_f(y0) + &l * normal_vec(&mut rng, d);
                let logw: Vec<f64> = means
                    .iter()
                    .map(|m| {
                        let r = &t - m;
                        -0.5 * (r.transpose() * &prec * &r)[(0, 0)]
                    })
                    .collect();
                let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for (w, &y) in logw.iter().zip(&grid) {
                    let w = (w - mx).exp();
                    s0 += w;
                    s1 += w * y;
                    s2 += w * y * y;
                }
                let mean = s1 / s0;
                s2 / s0 - mean * mean
            })
            .sum();
        Ok(total / draws as f64)
    }

    /// `p = 6`, `d = 2`, cubic basis, anisotropic `Ω₀² = diag(4, 2, 1, 0.25)`.
    pub fn preset_recovery() -> Self {
        let raw = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, -1.0, 0.5, 0.5, -1.0, 0.0, 0.5],
        );
        let gamma = Basis::orthonormalize(&raw).expect("full rank");
        let beta = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 1.0, 0.0, 4.0, 0.0]);
        let omega2 = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3])).expect("square");
        InverseSim::new(
            DVector::from_column_slice(&[1.0, -1.0, 0.5, 0.0, 2.0, -0.5]),
            gamma,
            beta,
            omega2,
            Some(SymmetricMatrix::from_diagonal(&[4.0, 2.0, 1.0, 0.25])),
            BasisSpec::Polynomial { degree: 3 },
            YLaw::default(),
        )
        .expect("valid preset")
    }

    /// `p = 5`, `d = 1`, linear basis: a single-index design for prediction.
    pub fn preset_single_index() -> Self {
        let raw = DMatrix::from_column_slice(5, 1, &[1.0, 1.0, 0.0, -1.0, 0.5]);
        InverseSim::new(
            DVector::zeros(5),
            Basis::orthonormalize(&raw).expect("nonzero"),
            DMatrix::from_element(1, 1, 1.0),
            SymmetricMatrix::from_diagonal(&[0.1]),
            Some(SymmetricMatrix::from_diagonal(&[3.0, 1.0, 0.5, 0.2])),
            BasisSpec::Polynomial { degree: 1 },
            YLaw::default(),
        )
        .expect("valid preset")
    }

    /// Exactly low-rank truth (`d = 1` in `p = 10`) for the bias–variance study.
    pub fn preset_low_rank() -> Self {
        let p = 10;
        let raw = DMatrix::from_fn(p, 1, |i, _| 1.0 + 0.25 * i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 });
        let omega0: Vec<f64> = (0..p - 1).map(|j| 2.0 / (1.0 + j as f64 * 0.5)).collect();
        InverseSim::new(
            DVector::zeros(p),
            Basis::orthonormalize(&raw).expect("nonzero"),
            DMatrix::from_element(1, 1, 2.0),
            SymmetricMatrix::from_diagonal(&[0.25]),
            Some(SymmetricMatrix::from_diagonal(&omega0)),
            BasisSpec::Polynomial { degree: 1 },
            YLaw::default(),
        )
        .expect("valid preset")
    }

    /// Full-rank truth (`d = p = 4`, quartic basis). Axis `j > 1` has mean
    /// `s_j (f₁ + f_j)` with `s = (2, 1, 0.5, 0.25)` and error variance
    /// growing along the axes, so each extra fitted direction carries less
    /// of the coefficient vector than the one before.
    pub fn preset_graded() -> Self {
        let s = [2.0, 1.0, 0.5, 0.25];
        let mut beta = DMatrix::zeros(4, 4);
        for (j, &sj) in s.iter().enumerate() {
            beta[(j, 0)] = sj;
            if j > 0 {
                beta[(j, j)] = sj;
            }
        }
        InverseSim::new(
            DVector::zeros(4),
            Basis::axes(4, 4),
            beta,
            SymmetricMatrix::from_diagonal(&[0.5, 1.0, 2.0, 4.0]),
            None,
            BasisSpec::Polynomial { degree: 4 },
            YLaw::default(),
        )
        .expect("valid preset")
    }

    /// Named presets accepted by the command line.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "recovery" => Ok(Self::preset_recovery()),
            "single-index" => Ok(Self::preset_single_index()),
            "low-rank" => Ok(Self::preset_low_rank()),
            "graded" => Ok(Self::preset_graded()),
            other => Err(Error::invalid(format!(
                "unknown inverse preset '{other}'; valid presets: {}",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub const PRESETS: [&'static str; 4] = ["recovery", "single-index", "low-rank", "graded"];
}

pub fn simulate_inverse(sim: &InverseSim, n: usize, seed: u64) -> Result<Dataset> {
    sim.simulate(n, seed)
}

/// `X ~ N(0, I_p)`, `Y = X₁² + noise·ε`: mean-flat, variance-dependent `X₁ | Y`.
pub fn simulate_square_response(n: usize, p: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng_for(seed);
    let x = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        x[(i, 0)].powi(2) + noise * e
    });
    Dataset::new(x, y)
}

/// Homoscedastic linear inverse data: `y ~ N(0, 1)`, `X_j = b_j y + e_j`.
pub fn simulate_linear_inverse(n: usize, slopes: &[f64], seed: u64) -> Result<Dataset> {
    let mut rng = rng_for(seed);
    let y = normal_vec(&mut rng, n);
    let x = DMatrix::from_fn(n, slopes.len(), |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        slopes[j] * y[i] + e
    });
    Dataset::new(x, y)
}

// ---------------------------------------------------------------------------
// Heteroscedasticity diagnostic for X_j | Y
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroOptions {
    pub alpha: f64,
    /// Slopes with `|t|` below this count as flat.
    pub flat_t: f64,
}

impl Default for HeteroOptions {
    fn default() -> Self {
        HeteroOptions { alpha: 0.05, flat_t: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroRow {
    /// 0-based predictor index.
    pub predictor: usize,
    pub slope: f64,
    /// Slope over its heteroscedasticity-consistent (HC1) standard error.
    pub slope_t: f64,
    /// `n·R²` of squared residuals on `y`, 1 df.
    pub variance_stat: f64,
    pub variance_pvalue: f64,
    /// Variance depends on `y` at level `alpha`.
    pub heteroscedastic: bool,
    /// Heteroscedastic with a flat mean: the case a mean-only reduction misses.
    pub flagged: bool,
}

/// Per-predictor score test for `Var(X_j | Y)` depending on `y`.
pub fn hetero_diag(data: &Dataset, opts: HeteroOptions) -> Result<Vec<HeteroRow>> {
    let n = data.n();
    if n < 8 {
        return Err(Error::invalid(format!("heteroscedasticity diagnostic needs n >= 8, got {n}")));
    }
    let y = data.y();
    let yc = y.add_scalar(-y.mean());
    let syy = yc.norm_squared();
    if !(syy > 1e-300) {
        return Err(Error::invalid("response has zero variance"));
    }
    let nf = n as f64;
    data.x()
        .column_iter()
        .enumerate()
        .map(|(j, col)| {
            let xc = col.add_scalar(-col.mean());
            let slope = xc.dot(&yc) / syy;
            let resid = &xc - &yc * slope;
            // HC1 sandwich variance: the flat-mean check must not be fooled by
            // the very variance change it is paired with.
            let meat: f64 = yc.iter().zip(resid.iter()).map(|(a, e)| (a * e).powi(2)).sum();
            let se = (meat * nf / (nf - 2.0)).sqrt() / syy;
            let slope_t = if se > 0.0 { slope / se } else { f64::INFINITY };
            let sq = resid.map(|e| e * e);
            let sqc = sq.add_scalar(-sq.mean());
            let denom = sqc.norm_squared() * syy;
            let r2 = if denom > 0.0 { sqc.dot(&yc).powi(2) / denom } else { 0.0 };
            let variance_stat = nf * r2;
            let variance_pvalue = chi2_sf(variance_stat, 1)?;
            let heteroscedastic = variance_pvalue < opts.alpha;
            Ok(HeteroRow {
                predictor: j,
                slope,
                slope_t,
                variance_stat,
                variance_pvalue,
                heteroscedastic,
                flagged: heteroscedastic && slope_t.abs() < opts.flat_t,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

/// One long-format report line: `method,reference,metric,value,rep,params`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    /// Second method for pairwise metrics, `truth` for comparisons with the
    /// generator, empty otherwise.
    pub reference: String,
    pub metric: String,
    pub value: f64,
    /// Replication index; empty for aggregates.
    pub rep: Option<usize>,
    /// `key=value` pairs joined by `;`.
    pub params: String,
}

pub const REPORT_HEADER: &str = "method,reference,metric,value,rep,params";

impl ReportRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method,
            self.reference,
            self.metric,
            fmt_f64(self.value),
            self.rep.map(|r| r.to_string()).unwrap_or_default(),
            self.params
        )
    }
}

/// Shortest round-trip decimal, `NaN` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Bias–variance experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BiasVarianceConfig {
    pub truth: InverseSim,
    /// Basis used when fitting; defaults to the generator's.
    pub fit_spec: BasisSpec,
    pub n_grid: Vec<usize>,
    pub d_fit_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub opts: GrassmannOptions,
}

impl BiasVarianceConfig {
    pub fn new(truth: InverseSim, n_grid: Vec<usize>, d_fit_grid: Vec<usize>, replications: usize, seed: u64) -> Self {
        let fit_spec = truth.spec;
        BiasVarianceConfig {
            truth,
            fit_spec,
            n_grid,
            d_fit_grid,
            replications,
            seed,
            opts: GrassmannOptions {
                random_starts: 2,
                ..GrassmannOptions::with_seed(seed)
            },
        }
    }
}

/// Aggregates over replications for one `(n, d_fit)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVarianceCell {
    pub n: usize,
    pub d_fit: usize,
    pub replications: usize,
    /// Mean of `‖b̂ − B‖²`; equals `bias2 + variance`.
    pub mse: f64,
    pub median_se: f64,
    pub bias2: f64,
    pub variance: f64,
    /// Per-replication `‖b̂ − B‖²`.
    pub squared_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasVarianceReport {
    pub p: usize,
    pub truth_b: DVector<f64>,
    pub cells: Vec<BiasVarianceCell>,
}

impl BiasVarianceReport {
    pub fn cell(&self, n: usize, d_fit: usize) -> Option<&BiasVarianceCell> {
        self.cells.iter().find(|c| c.n == n && c.d_fit == d_fit)
    }

    /// Long-format rows; every value is an empirical summary.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let params = format!("n={};d_fit={};p={};reps={};kind=empirical", c.n, c.d_fit, self.p, c.replications);
            for (metric, value) in [
                ("coef_mse", c.mse),
                ("coef_median_se", c.median_se),
                ("coef_bias2", c.bias2),
                ("coef_variance", c.variance),
            ] {
                rows.push(ReportRow {
                    method: "PROJECTED".into(),
                    reference: "truth".into(),
                    metric: metric.into(),
                    value,
                    rep: None,
                    params: params.clone(),
                });
            }
        }
        rows
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Projected-OLS coefficient error at each fitted dimension, decomposed
/// into squared bias and variance across replications.
pub fn bias_variance_experiment(cfg: &BiasVarianceConfig) -> Result<BiasVarianceReport> {
    let p = cfg.truth.p();
    if cfg.replications == 0 || cfg.n_grid.is_empty() || cfg.d_fit_grid.is_empty() {
        return Err(Error::invalid("bias–variance experiment needs replications and nonempty grids"));
    }
    if cfg.d_fit_grid.iter().any(|&d| d == 0 || d > p) {
        return Err(Error::invalid(format!("every fitted d must lie in 1..={p}")));
    }
    let truth_b = cfg.truth.population_ols()?;
    let mut cells = Vec::new();
    for &n in &cfg.n_grid {
        // estimates[rep][k] for d_fit_grid[k]
        let estimates: Vec<Vec<DVector<f64>>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let data = cfg.truth.simulate(n, cfg.seed ^ rep as u64)?;
                let problem = ExtendedProblem::new(&data, cfg.fit_spec)?;
                cfg.d_fit_grid
                    .iter()
                    .map(|&d| {
                        let fit = problem.fit(d, &cfg.opts)?.fit;
                        Ok(projected_ols(&fit, &problem.moments)?.b)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &d_fit) in cfg.d_fit_grid.iter().enumerate() {
            let bs: Vec<&DVector<f64>> = estimates.iter().map(|e| &e[k]).collect();
            let reps = bs.len() as f64;
            let mean = bs.iter().fold(DVector::zeros(p), |acc, b| acc + *b) / reps;
            let squared_errors: Vec<f64> = bs.iter().map(|b| (*b - &truth_b).norm_squared()).collect();
            let variance = bs.iter().map(|b| (*b - &mean).norm_squared()).sum::<f64>() / reps;
            cells.push(BiasVarianceCell {
                n,
                d_fit,
                replications: cfg.replications,
                mse: squared_errors.iter().sum::<f64>() / reps,
                median_se: median(&squared_errors),
                bias2: (&mean - &truth_b).norm_squared(),
                variance,
                squared_errors,
            });
        }
    }
    Ok(BiasVarianceReport { p, truth_b, cells })
}

// ---------------------------------------------------------------------------
// Method comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pc,
    StandardizedPc,
    Spc,
    PfcIso,
    Extended,
    Ols,
    Projected,
    Pls,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Pc,
        Method::StandardizedPc,
        Method::Spc,
        Method::PfcIso,
        Method::Extended,
        Method::Ols,
        Method::Projected,
        Method::Pls,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Pc => "pc",
            Method::StandardizedPc => "spca",
            Method::Spc => "spc",
            Method::PfcIso => "pfc",
            Method::Extended => "extended",
            Method::Ols => "ols",
            Method::Projected => "projected",
            Method::Pls => "pls",
        }
    }

    pub fn is_reduction(&self) -> bool {
        matches!(
            self,
            Method::Pc | Method::StandardizedPc | Method::Spc | Method::PfcIso | Method::Extended
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "standardized-pc" | "standardized_pc" => "spca",
            "pfc-iso" | "pfc_iso" => "pfc",
            other => other,
        };
        Method::ALL.iter().copied().find(|m| m.name() == alias).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::invalid(format!("unknown method '{s}'; valid methods: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Max principal angle to the true span.
    Angle,
    /// R² of each reduction's first coordinate on every other reduction.
    R2,
    /// `‖b̂ − B‖²` against the true coefficients.
    CoefMse,
    /// Held-out squared prediction error on a seeded 80/20 split.
    PredMse,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Angle, Metric::R2, Metric::CoefMse, Metric::PredMse];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Angle => "angle",
            Metric::R2 => "r2",
            Metric::CoefMse => "coef_mse",
            Metric::PredMse => "pred_mse",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Metric::ALL.iter().copied().find(|m| m.name() == key).ok_or_else(|| {
            let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::invalid(format!("unknown metric '{s}'; valid metrics: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub d: usize,
    pub spec: BasisSpec,
    pub q: usize,
    pub screen: ScreenRule,
    pub seed: u64,
    pub opts: GrassmannOptions,
}

impl ComparisonConfig {
    pub fn new(methods: Vec<Method>, metrics: Vec<Metric>, d: usize, spec: BasisSpec) -> Self {
        ComparisonConfig {
            methods,
            metrics,
            d,
            spec,
            q: d.max(1),
            screen: ScreenRule::Threshold(0.1),
            seed: 0,
            opts: GrassmannOptions::default(),
        }
    }
}

/// Known generator quantities, when the data are simulated.
#[derive(Debug, Clone, Default)]
pub struct Truth {
    pub span: Option<Basis>,
    pub b: Option<DVector<f64>>,
}

impl Truth {
    pub fn of_inverse(sim: &InverseSim) -> Result<Self> {
        Ok(Truth {
            span: Some(sim.gamma.clone()),
            b: Some(sim.population_ols()?),
        })
    }

    pub fn of_forward(sim: &ForwardSim) -> Result<Self> {
        Ok(Truth {
            span: Some(Basis::orthonormalize(&DMatrix::from_column_slice(sim.p(), 1, sim.beta().as_slice()))?),
            b: Some(sim.beta().clone()),
        })
    }
}

fn reduction_for(method: Method, data: &Dataset, cfg: &ComparisonConfig) -> Result<Reduction> {
    let mut red = match method {
        Method::Pc => Reduction::from(&fit_pc(data, cfg.d)?),
        Method::StandardizedPc => standardized_pc(data, cfg.d)?.reduction()?,
        Method::Spc => spc(data, cfg.screen, cfg.d)?.reduction,
        Method::PfcIso => Reduction::from(&fit_pfc_iso(data, cfg.spec, cfg.d)?),
        Method::Extended => Reduction::from(&ExtendedProblem::new(data, cfg.spec)?.fit(cfg.d, &cfg.opts)?.fit),
        other => return Err(Error::invalid(format!("{other} is not a reduction method"))),
    };
    red.label = method.name().into();
    Ok(red)
}

fn coefficients_for(method: Method, data: &Dataset, cfg: &ComparisonConfig) -> Result<(CoefficientEstimate, f64, DVector<f64>)> {
    let basis = build_basis(data.y(), cfg.spec)?;
    let m = moments(data, &basis)?;
    let est = match method {
        Method::Ols => ols_coeffs(&m)?,
        Method::Pls => pls_coeffs(&m, cfg.q)?,
        Method::Projected => {
            let problem = ExtendedProblem::from_moments(m.clone(), cfg.spec)?;
            projected_ols(&problem.fit(cfg.d, &cfg.opts)?.fit, &m)?
        }
        other => return Err(Error::invalid(format!("{other} is not a coefficient method"))),
    };
    Ok((est, m.ybar, m.xbar))
}

/// Deterministic 80/20 split of `0..n` by seed.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed));
    let n_train = ((n as f64) * 0.8).round() as usize;
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Compares reductions and coefficient estimators on one dataset.
pub fn method_comparison(data: &Dataset, truth: &Truth, cfg: &ComparisonConfig) -> Result<Vec<ReportRow>> {
    if cfg.methods.is_empty() {
        return Err(Error::invalid("no methods to compare"));
    }
    let params = format!("d={};basis={};q={};screen={};seed={}", cfg.d, cfg.spec, cfg.q, cfg.screen, cfg.seed);
    let row = |method: &str, reference: &str, metric: Metric, value: f64| ReportRow {
        method: method.into(),
        reference: reference.into(),
        metric: metric.name().into(),
        value,
        rep: Some(0),
        params: params.clone(),
    };
    let mut rows = Vec::new();

    let reductions: Vec<Reduction> = cfg
        .methods
        .iter()
        .filter(|m| m.is_reduction())
        .map(|&m| reduction_for(m, data, cfg))
        .collect::<Result<_>>()?;

    for metric in &cfg.metrics {
        match metric {
            Metric::Angle => {
                let Some(span) = &truth.span else { continue };
                for red in &reductions {
                    rows.push(row(&red.label, "truth", *metric, max_principal_angle(&red.basis, span)?));
                }
            }
            Metric::R2 => {
                let scores: Vec<DMatrix<f64>> =
                    reductions.iter().map(|r| r.project(data.x())).collect::<Result<_>>()?;
                for (a, sa) in reductions.iter().zip(&scores) {
                    let first = sa.column(0).into_owned();
                    for (b, sb) in reductions.iter().zip(&scores) {
                        rows.push(row(&a.label, &b.label, *metric, r2_between(&first, sb)?));
                    }
                }
            }
            Metric::CoefMse | Metric::PredMse => {
                let (train, test) = train_test_split(data.n(), cfg.seed);
                let train_data = data.select_rows(&train)?;
                for &m in cfg.methods.iter().filter(|m| !m.is_reduction()) {
                    let (est, ybar, xbar) = coefficients_for(m, &train_data, cfg)?;
                    if *metric == Metric::CoefMse {
                        if let Some(b) = &truth.b {
                            rows.push(row(m.name(), "truth", *metric, (&est.b - b).norm_squared()));
                        }
                    } else {
                        let mse = test
                            .iter()
                            .map(|&i| {
                                let xi = data.x().row(i).transpose();
                                let pred = ybar + (xi - &xbar).dot(&est.b);
                                (data.y()[i] - pred).powi(2)
                            })
                            .sum::<f64>()
                            / test.len().max(1) as f64;
                        rows.push(row(m.name(), "holdout", *metric, mse));
                    }
                }
            }
        }
    }
    Ok(rows)
}
