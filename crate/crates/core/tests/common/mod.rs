#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pfcr_core::model::{build_basis, moments, BasisSpec, Dataset, MomentSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| -> f64 { StandardNormal.sample(rng) })
}

/// Random data with some dependence of X on y.
pub fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut g = rng(seed);
    let y = gaussian(&mut g, n, 1).column(0).into_owned();
    let mix = gaussian(&mut g, p, p);
    let load = gaussian(&mut g, 1, p);
    let x = gaussian(&mut g, n, p) * mix + &y * load + DMatrix::from_fn(n, p, |i, _| 0.3 * y[i] * y[i]);
    Dataset::new(x, y).unwrap()
}

pub fn moments_for(data: &Dataset, spec: BasisSpec) -> MomentSet {
    moments(data, &build_basis(data.y(), spec).unwrap()).unwrap()
}

/// Sample covariance with divisor n, computed directly from rows.
pub fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n as f64);
    let mut s = DMatrix::zeros(x.ncols(), x.ncols());
    for i in 0..n {
        let r = x.row(i).transpose() - &mean;
        s += &r * r.transpose();
    }
    s / n as f64
}

/// Gaussian log density through an explicit inverse and LU determinant.
pub fn brute_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let p = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let det = cov.clone().lu().determinant();
    let r = x - mean;
    -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + det.ln() + (r.transpose() * inv * &r)[(0, 0)])
}

/// Orthonormal basis of span(m) by classical Gram–Schmidt.
pub fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        for k in 0..j {
            let qk = q.column(k).into_owned();
            v -= &qk * qk.dot(&v);
        }
        let nv = v.norm();
        q.set_column(j, &(v / nv));
    }
    q
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
