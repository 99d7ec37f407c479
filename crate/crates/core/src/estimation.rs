//! Fitting the PC, isotropic PFC and structured inverse models, and
//! likelihood-ratio inference on the reduction dimension.

use log::debug;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    self, build_basis, inner_mle, moments, BasisSpec, Dataset, FittedReduction, InnerMle, ModelKind,
    MomentSet, ProfileObjective,
};
use crate::numerics::{self, canonicalize_signs, chi2_sf, qf, sym_eigen, Basis, SymmetricMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Controls for the Grassmann ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannOptions {
    pub max_iters: usize,
    /// Stop once the Frobenius norm of the Riemannian gradient of `L/n`
    /// drops below this.
    pub grad_tol: f64,
    /// Trial step of the first iteration; later iterations start from a
    /// Barzilai–Borwein estimate.
    pub initial_step: f64,
    pub shrink: f64,
    /// Armijo constant for the sufficient-increase test.
    pub sufficient_increase: f64,
    pub random_starts: usize,
    /// Eigenvector seeds are every `d`-subset of the top `d + extra`
    /// eigenvectors of Σ̂_fit and of Σ̂.
    pub eigen_pool_extra: usize,
    pub seed: u64,
}

impl Default for GrassmannOptions {
    fn default() -> Self {
        GrassmannOptions {
            max_iters: 500,
            grad_tol: 1e-7,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            random_starts: 10,
            eigen_pool_extra: 2,
            seed: 0,
        }
    }
}

impl GrassmannOptions {
    pub fn with_seed(seed: u64) -> Self {
        GrassmannOptions {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = self.grad_tol > 0.0
            && self.initial_step > 0.0
            && self.sufficient_increase > 0.0
            && self.sufficient_increase < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if !positive || self.max_iters == 0 {
            return Err(Error::invalid("Grassmann options need positive tolerances, 0 < shrink < 1 and max_iters >= 1"));
        }
        Ok(())
    }
}

/// Where a multistart run began.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedKind {
    /// Columns (by index) of the Σ̂_fit eigenvectors.
    FitEigen(Vec<usize>),
    /// Columns (by index) of the Σ̂ eigenvectors.
    MarginalEigen(Vec<usize>),
    Random(usize),
}

impl SeedKind {
    pub fn is_eigen(&self) -> bool {
        !matches!(self, SeedKind::Random(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub kind: SeedKind,
    pub start_loglik: f64,
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A structured-model fit along with the multistart record.
#[derive(Debug, Clone)]
pub struct ExtendedFit {
    pub fit: FittedReduction,
    pub seeds: Vec<SeedOutcome>,
    /// Index into `seeds` of the winning run, `None` when `d = p`.
    pub winner: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub d: usize,
    pub lambda: f64,
    pub df: u64,
    pub pvalue: f64,
}

/// Free parameters of the structured model: `μ`, `span(Γ)`, `β`, `Ω²`, `Ω₀²`.
pub fn extended_param_count(p: usize, d: usize, r: usize) -> usize {
    assert!(d <= p);
    let q = p - d;
    p + d * q + d * r + d * (d + 1) / 2 + q * (q + 1) / 2
}

/// Free parameters of the unstructured model: `μ`, a `p × r` coefficient
/// matrix and a general `Σ`.
pub fn full_param_count(p: usize, r: usize) -> usize {
    p + p * r + p * (p + 1) / 2
}

/// Degrees of freedom of `Λ_d`, from the parameter-count difference.
pub fn lrt_df(p: usize, d: usize, r: usize) -> u64 {
    (full_param_count(p, r) - extended_param_count(p, d, r)) as u64
}

fn check_d(d: usize, p: usize) -> Result<()> {
    if d == 0 || d > p {
        return Err(Error::invalid(format!("dimension d = {d} must satisfy 1 <= d <= p = {p}")));
    }
    Ok(())
}

fn split_basis(vecs: &Basis, d: usize) -> Result<(Basis, Option<Basis>)> {
    let p = vecs.rows();
    let g = Basis::new(vecs.matrix().columns(0, d).into_owned())?;
    let g0 = if d < p {
        Some(Basis::new(vecs.matrix().columns(d, p - d).into_owned())?)
    } else {
        None
    };
    Ok((g, g0))
}

fn scaled_identity(dim: usize, s2: f64) -> SymmetricMatrix {
    SymmetricMatrix::from_diagonal(&vec![s2; dim])
}

/// Principal-component inverse model: `Γ̂` = top `d` eigenvectors of Σ̂.
///
/// The reported log-likelihood is the isotropic-error one with `σ̂²` the
/// average of the discarded eigenvalues (the smallest eigenvalue when
/// `d = p`, where nothing is discarded).
pub fn fit_pc(data: &Dataset, d: usize) -> Result<FittedReduction> {
    let p = data.p();
    check_d(d, p)?;
    let n = data.n() as f64;
    let xc = data.centered_x();
    let sigma = SymmetricMatrix::new(xc.transpose() * &xc / n)?;
    let (vals, vecs) = sym_eigen(&sigma)?;
    let (gamma, gamma0) = split_basis(&vecs, d)?;
    let sigma2 = if d < p {
        vals.rows(d, p - d).mean()
    } else {
        vals[p - 1]
    };
    if !(sigma2 > 0.0) || !(vals[d - 1] > 0.0) {
        return Err(Error::singular("Σ̂ (zero eigenvalue in the PC likelihood)"));
    }
    let kept: f64 = vals.rows(0, d).iter().map(|v| v.ln()).sum();
    let loglik = if d < p {
        -0.5 * n * (p as f64 * LN_2PI + kept + (p - d) as f64 * sigma2.ln() + p as f64)
    } else {
        -0.5 * n * (p as f64 * LN_2PI + kept + p as f64)
    };
    Ok(FittedReduction {
        kind: ModelKind::Pc,
        d,
        n: data.n(),
        mu: data.column_means(),
        gamma,
        gamma0,
        beta: DMatrix::zeros(d, 0),
        omega2: scaled_identity(d, sigma2),
        omega0_2: (d < p).then(|| scaled_identity(p - d, sigma2)),
        loglik,
        spec: None,
        converged: true,
        iterations: 0,
        seed: None,
    })
}

/// Isotropic principal fitted components: `Γ̂` = top `d` eigenvectors of
/// Σ̂_fit, `σ̂² = (tr Σ̂ − Σ_{j≤d} λ_j(Σ̂_fit)) / p`.
pub fn fit_pfc_iso(data: &Dataset, spec: BasisSpec, d: usize) -> Result<FittedReduction> {
    let p = data.p();
    check_d(d, p)?;
    let basis = build_basis(data.y(), spec)?;
    let m = moments(data, &basis)?;
    let (vals, vecs) = sym_eigen(&m.sigma_fit)?;
    let cutoff = 1e-10 * vals[0].abs().max(m.sigma.max_abs());
    let rank = vals.iter().filter(|&&v| v > cutoff).count().min(spec.r());
    if d > rank {
        return Err(Error::invalid(format!(
            "d = {d} exceeds rank(Σ̂_fit) = {rank} (at most min(p, r) = {})",
            p.min(spec.r())
        )));
    }
    let (gamma, gamma0) = split_basis(&vecs, d)?;
    let trace = m.sigma.matrix().trace();
    let sigma2 = (trace - vals.rows(0, d).sum()) / p as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::singular("Σ̂_res (zero isotropic residual variance)"));
    }
    let InnerMle { beta, .. } = inner_mle(&gamma, None, &m)?;
    let n = m.n as f64;
    Ok(FittedReduction {
        kind: ModelKind::PfcIso,
        d,
        n: m.n,
        mu: m.xbar.clone(),
        gamma,
        gamma0,
        beta,
        omega2: scaled_identity(d, sigma2),
        omega0_2: (d < p).then(|| scaled_identity(p - d, sigma2)),
        loglik: -0.5 * n * p as f64 * (LN_2PI + sigma2.ln() + 1.0),
        spec: Some(spec),
        converged: true,
        iterations: 0,
        seed: None,
    })
}

/// Moments and objective for one `(data, spec)` pair, shared across `d`.
#[derive(Debug, Clone)]
pub struct ExtendedProblem {
    pub spec: BasisSpec,
    pub moments: MomentSet,
    objective: ProfileObjective,
    fit_eigen: Basis,
    marginal_eigen: Basis,
    full_loglik: f64,
}

impl ExtendedProblem {
    pub fn new(data: &Dataset, spec: BasisSpec) -> Result<Self> {
        let (n, p, r) = (data.n(), data.p(), spec.r());
        if n < p + r + 2 {
            return Err(Error::InsufficientSample { n, required: p + r + 2 });
        }
        let basis = build_basis(data.y(), spec)?;
        let m = moments(data, &basis)?;
        Self::from_moments(m, spec)
    }

    pub fn from_moments(m: MomentSet, spec: BasisSpec) -> Result<Self> {
        if numerics::cholesky(m.sigma.matrix(), "Σ̂").is_err() {
            return Err(Error::singular(
                "Σ̂ is not positive definite; screen predictors or apply a prior reduction",
            ));
        }
        let objective = ProfileObjective::new(&m)?;
        let (_, fit_eigen) = sym_eigen(&m.sigma_fit)?;
        let (_, marginal_eigen) = sym_eigen(&m.sigma)?;
        let full_loglik = model::full_model_loglik(&m)?;
        Ok(ExtendedProblem {
            spec,
            moments: m,
            objective,
            fit_eigen,
            marginal_eigen,
            full_loglik,
        })
    }

    pub fn p(&self) -> usize {
        self.moments.p
    }

    pub fn full_loglik(&self) -> f64 {
        self.full_loglik
    }

    pub fn objective(&self) -> &ProfileObjective {
        &self.objective
    }

    fn seeds(&self, d: usize, opts: &GrassmannOptions) -> Vec<(SeedKind, DMatrix<f64>)> {
        let p = self.p();
        let pool = (d + opts.eigen_pool_extra).min(p);
        let mut out = Vec::new();
        for subset in combinations(pool, d) {
            out.push((SeedKind::FitEigen(subset.clone()), self.fit_eigen.matrix().select_columns(subset.iter())));
        }
        for subset in combinations(pool, d) {
            out.push((
                SeedKind::MarginalEigen(subset.clone()),
                self.marginal_eigen.matrix().select_columns(subset.iter()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for k in 0..opts.random_starts {
            let g = DMatrix::from_fn(p, d, |_, _| StandardNormal.sample(&mut rng));
            out.push((SeedKind::Random(k), qf(&g)));
        }
        out
    }

    /// Maximizes the profile likelihood over `d`-planes.
    pub fn fit(&self, d: usize, opts: &GrassmannOptions) -> Result<ExtendedFit> {
        opts.validate()?;
        let p = self.p();
        check_d(d, p)?;
        if d == p {
            let gamma = self.canonical_gamma(self.fit_eigen.matrix().clone())?;
            let fit = self.assemble(gamma, self.full_loglik, true, 0, opts.seed)?;
            return Ok(ExtendedFit {
                fit,
                seeds: Vec::new(),
                winner: None,
            });
        }
        let seeds = self.seeds(d, opts);
        let runs: Vec<Result<(SeedOutcome, DMatrix<f64>)>> = seeds
            .into_par_iter()
            .map(|(kind, start)| {
                let s = qf(&start);
                let start_ll = self.objective.value(&s)?;
                let run = ascend(&self.objective, s, opts)?;
                Ok((
                    SeedOutcome {
                        kind,
                        start_loglik: start_ll,
                        final_loglik: run.value * self.objective.n(),
                        iterations: run.iterations,
                        converged: run.converged,
                    },
                    run.s,
                ))
            })
            .collect();

        let mut outcomes: Vec<SeedOutcome> = Vec::with_capacity(runs.len());
        let mut best: Option<(usize, DMatrix<f64>)> = None;
        let mut first_err = None;
        for (i, run) in runs.into_iter().enumerate() {
            match run {
                Ok((outcome, s)) => {
                    let better = match &best {
                        None => true,
                        Some((b, _)) => outcome.final_loglik > outcomes[*b].final_loglik,
                    };
                    outcomes.push(outcome);
                    if better {
                        best = Some((outcomes.len() - 1, s));
                    }
                }
                Err(e) => {
                    debug!("seed {i} failed: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        let (winner, s) = match best {
            Some(b) => b,
            None => return Err(first_err.unwrap_or_else(|| Error::invalid("no seeds to start from"))),
        };
        let w = &outcomes[winner];
        debug!(
            "d = {d}: best loglik {:.6} from {:?} after {} iterations (converged: {})",
            w.final_loglik, w.kind, w.iterations, w.converged
        );
        let gamma = self.canonical_gamma(s)?;
        let fit = self.assemble(gamma, w.final_loglik, w.converged, w.iterations, opts.seed)?;
        Ok(ExtendedFit {
            fit,
            seeds: outcomes,
            winner: Some(winner),
        })
    }

    /// Rotates `S` so `ΓᵀΣ̂_fitΓ` is diagonal descending, with canonical signs.
    fn canonical_gamma(&self, s: DMatrix<f64>) -> Result<Basis> {
        let s = qf(&s);
        let inner = SymmetricMatrix::new(s.transpose() * self.moments.sigma_fit.matrix() * &s)?;
        let (_, w) = sym_eigen(&inner)?;
        let mut g = s * w.matrix();
        canonicalize_signs(&mut g);
        Basis::orthonormalize(&g).and_then(|b| {
            // QR may flip signs again; reapply the convention.
            let mut m = b.into_matrix();
            canonicalize_signs(&mut m);
            Basis::new(m)
        })
    }

    fn assemble(&self, gamma: Basis, loglik: f64, converged: bool, iterations: usize, seed: u64) -> Result<FittedReduction> {
        let d = gamma.cols();
        let p = self.p();
        let gamma0 = match gamma.complement() {
            Some(c) => {
                let inner = SymmetricMatrix::new(c.matrix().transpose() * self.moments.sigma.matrix() * c.matrix())?;
                let (_, w) = sym_eigen(&inner)?;
                let mut g0 = c.matrix() * w.matrix();
                canonicalize_signs(&mut g0);
                Some(Basis::new(g0)?)
            }
            None => None,
        };
        let inner = inner_mle(&gamma, gamma0, &self.moments)?;
        numerics::cholesky(inner.omega2.matrix(), "Ω̂²")?;
        if let Some(o0) = &inner.omega0_2 {
            numerics::cholesky(o0.matrix(), "Ω̂₀²")?;
        }
        debug_assert_eq!(inner.gamma0.as_ref().map_or(0, |g| g.cols()), p - d);
        Ok(FittedReduction {
            kind: ModelKind::Extended,
            d,
            n: self.moments.n,
            mu: self.moments.xbar.clone(),
            gamma,
            gamma0: inner.gamma0,
            beta: inner.beta,
            omega2: inner.omega2,
            omega0_2: inner.omega0_2,
            loglik,
            spec: Some(self.spec),
            converged,
            iterations,
            seed: Some(seed),
        })
    }

    pub fn lrt(&self, d: usize, opts: &GrassmannOptions) -> Result<(TestResult, ExtendedFit)> {
        let fit = self.fit(d, opts)?;
        let lambda = (2.0 * (self.full_loglik - fit.fit.loglik)).max(0.0);
        let df = lrt_df(self.p(), d, self.spec.r());
        let pvalue = if df > 0 { chi2_sf(lambda, df)? } else { 1.0 };
        Ok((TestResult { d, lambda, df, pvalue }, fit))
    }

    /// Norm of the Riemannian gradient of `L/n` at `span(gamma)`.
    pub fn riemannian_gradient_norm(&self, gamma: &Basis) -> Result<f64> {
        let s = gamma.matrix();
        Ok(riemannian(s, &self.objective.per_obs_gradient(s)?).norm())
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Projects a Euclidean gradient onto the horizontal space at `S`.
pub(crate) fn riemannian(s: &DMatrix<f64>, egrad: &DMatrix<f64>) -> DMatrix<f64> {
    egrad - s * (s.transpose() * egrad)
}

#[derive(Debug, Clone)]
struct Ascent {
    s: DMatrix<f64>,
    /// Per-observation objective at `s`.
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Riemannian gradient ascent with QR retraction, Barzilai–Borwein trial
/// steps and Armijo backtracking.
fn ascend(obj: &ProfileObjective, start: DMatrix<f64>, opts: &GrassmannOptions) -> Result<Ascent> {
    let mut s = start;
    let mut f = obj.per_obs_value(&s)?;
    let mut g = riemannian(&s, &obj.per_obs_gradient(&s)?);
    let mut step = opts.initial_step;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;

    for it in 0..opts.max_iters {
        let gn2 = g.norm_squared();
        if gn2.sqrt() < opts.grad_tol {
            return Ok(Ascent { s, value: f, iterations: it, converged: true });
        }
        if let Some((sp, gp)) = &prev {
            let ds = &s - sp;
            let dg = &g - gp;
            let sy = ds.dot(&dg).abs();
            if sy > 0.0 {
                step = (ds.norm_squared() / sy).clamp(1e-10, 1e10);
            }
        }
        let mut accepted = None;
        let mut t = step;
        while t > 1e-18 {
            let cand = qf(&(&s + &g * t));
            if let Ok(fc) = obj.per_obs_value(&cand) {
                if fc >= f + opts.sufficient_increase * t * gn2 {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= opts.shrink;
        }
        let Some((cand, fc)) = accepted else {
            // No ascent step exists at working precision.
            let converged = gn2.sqrt() < opts.grad_tol * 10.0;
            return Ok(Ascent { s, value: f, iterations: it, converged });
        };
        let gc = riemannian(&cand, &obj.per_obs_gradient(&cand)?);
        prev = Some((std::mem::replace(&mut s, cand), std::mem::replace(&mut g, gc)));
        f = fc;
    }
    let converged = g.norm() < opts.grad_tol;
    Ok(Ascent { s, value: f, iterations: opts.max_iters, converged })
}

/// Structured inverse-model fit by multistart Grassmann ascent.
pub fn fit_extended(data: &Dataset, spec: BasisSpec, d: usize, opts: &GrassmannOptions) -> Result<FittedReduction> {
    Ok(ExtendedProblem::new(data, spec)?.fit(d, opts)?.fit)
}

/// `Λ_d = 2(L_full − L_d)` with its `χ²_{r(p−d)}` p-value.
pub fn lrt_dimension(data: &Dataset, spec: BasisSpec, d: usize, opts: &GrassmannOptions) -> Result<TestResult> {
    Ok(ExtendedProblem::new(data, spec)?.lrt(d, opts)?.0)
}

/// Smallest `d` in the trail whose p-value exceeds `alpha`, else `p`.
pub fn select_from_trail(trail: &[TestResult], alpha: f64, p: usize) -> usize {
    trail.iter().find(|t| t.pvalue > alpha).map_or(p, |t| t.d)
}

/// Sequential testing of `d = 1, 2, …` until a test is not rejected.
pub fn select_dimension(
    data: &Dataset,
    spec: BasisSpec,
    alpha: f64,
    opts: &GrassmannOptions,
) -> Result<(usize, Vec<TestResult>)> {
    let problem = ExtendedProblem::new(data, spec)?;
    select_dimension_in(&problem, alpha, opts)
}

pub fn select_dimension_in(
    problem: &ExtendedProblem,
    alpha: f64,
    opts: &GrassmannOptions,
) -> Result<(usize, Vec<TestResult>)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let p = problem.p();
    let mut trail = Vec::new();
    for d in 1..p {
        let (test, _) = problem.lrt(d, opts)?;
        let stop = test.pvalue > alpha;
        trail.push(test);
        if stop {
            return Ok((d, trail));
        }
    }
    Ok((p, trail))
}

/// `(X − 1μ̂ᵀ)Γ̂`.
pub fn reduce(fit: &FittedReduction, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    fit.reduce(x)
}

/// Finite-difference derivative of `L` along a unit tangent direction `z`
/// at `S`, retracting with QR on both sides.
pub fn directional_derivative_fd(obj: &ProfileObjective, s: &DMatrix<f64>, z: &DMatrix<f64>, h: f64) -> Result<f64> {
    let plus = obj.value(&qf(&(s + z * h)))?;
    let minus = obj.value(&qf(&(s - z * h)))?;
    Ok((plus - minus) / (2.0 * h))
}

/// Random unit tangent direction at `S` (horizontal, Frobenius norm 1).
pub fn random_tangent(s: &DMatrix<f64>, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let z = DMatrix::from_fn(s.nrows(), s.ncols(), |_, _| StandardNormal.sample(rng));
    let z = riemannian(s, &z);
    let nrm = z.norm();
    z / nrm
}
