mod common;

use common::{brute_log_density, gaussian, random_data, rng};
use nalgebra::{DMatrix, DVector};
use pfcr_core::estimation::{fit_extended, GrassmannOptions};
use pfcr_core::model::{build_basis, BasisSpec, Dataset, FittedReduction};
use pfcr_core::prediction::{forward_mean, log_inverse_density, residuals, Predictor};
use pfcr_core::studylab::InverseSim;
use pfcr_core::{Basis, SymmetricMatrix};
use proptest::prelude::*;

const POLY2: BasisSpec = BasisSpec::Polynomial { degree: 2 };

fn fitted(seed: u64, n: usize, p: usize, d: usize) -> (Dataset, Predictor) {
    let data = random_data(seed, n, p);
    let fit = fit_extended(&data, POLY2, d, &GrassmannOptions::default()).unwrap();
    let pred = Predictor::new(fit, data.y().clone()).unwrap();
    (data, pred)
}

fn sd(v: &DVector<f64>) -> f64 {
    let m = v.mean();
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn log_density_matches_brute_force() {
    let (data, pred) = fitted(1, 40, 4, 2);
    let cov = pred.fit().implied_covariance();
    let mut g = rng(2);
    for i in [0, 7, 39] {
        let x = gaussian(&mut g, 4, 1).column(0) * 2.0 + data.x().row(i).transpose();
        let ours = log_inverse_density(&pred, &x, i).unwrap();
        let brute = brute_log_density(&x, &pred.conditional_mean(i), &cov);
        assert!((ours - brute).abs() < 1e-8, "{ours} vs {brute}");
    }
}

#[test]
fn log_density_at_mode() {
    let (_, pred) = fitted(3, 40, 3, 1);
    let cov = pred.fit().implied_covariance();
    let logdet = cov.clone().lu().determinant().ln();
    let x = pred.conditional_mean(5);
    let expect = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet;
    assert!((log_inverse_density(&pred, &x, 5).unwrap() - expect).abs() < 1e-10);
}

#[test]
fn weights_match_explicit_densities() {
    let (data, pred) = fitted(4, 30, 3, 1);
    let cov = pred.fit().implied_covariance();
    let x = data.x().row(3).transpose();
    let dens: Vec<f64> = (0..30).map(|i| brute_log_density(&x, &pred.conditional_mean(i), &cov).exp()).collect();
    let total: f64 = dens.iter().sum();
    let expect: f64 = dens.iter().zip(data.y().iter()).map(|(d, y)| d * y).sum::<f64>() / total;
    assert!((forward_mean(&pred, &x).unwrap() - expect).abs() < 1e-10);
}

#[test]
fn constant_response_predicts_the_constant() {
    let (data, pred) = fitted(5, 30, 3, 1);
    // the design comes from the fitting response; the averaged values are all c
    let design = build_basis(data.y(), POLY2).unwrap();
    let c = 2.75;
    let flat = Predictor::with_design(pred.fit().clone(), DVector::from_element(30, c), design).unwrap();
    let mut g = rng(6);
    for _ in 0..20 {
        let x = gaussian(&mut g, 3, 1).column(0) * 5.0;
        assert_eq!(flat.forward_mean(&x).unwrap(), c);
    }
    let (r, _) = flat.residuals(data.x(), &DVector::from_element(30, c)).unwrap();
    assert!(r.iter().all(|v| *v == 0.0));
}

#[test]
fn design_must_align_with_responses() {
    let (data, pred) = fitted(7, 30, 3, 1);
    let design = build_basis(&data.y().rows(0, 20).into_owned(), POLY2).unwrap();
    assert!(Predictor::with_design(pred.fit().clone(), data.y().clone(), design).is_err());
}

#[test]
fn translation_equivariance() {
    let (data, pred) = fitted(8, 50, 4, 2);
    let shift = DVector::from_column_slice(&[3.0, -1.0, 0.5, 10.0]);
    let mut moved: FittedReduction = pred.fit().clone();
    moved.mu += &shift;
    let moved = Predictor::new(moved, data.y().clone()).unwrap();
    for i in 0..10 {
        let x = data.x().row(i).transpose();
        let a = pred.forward_mean(&x).unwrap();
        let b = moved.forward_mean(&(&x + &shift)).unwrap();
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn weights_ignore_directions_outside_the_reduction() {
    let (data, pred) = fitted(9, 50, 5, 2);
    let fit = pred.fit();
    // v with Γ̂ᵀΣ̂⁻¹v = 0 is Σ̂Γ̂₀c
    let cov = fit.implied_covariance();
    let g0 = fit.gamma0.as_ref().unwrap().matrix();
    let mut g = rng(10);
    for i in 0..5 {
        let v = &cov * g0 * gaussian(&mut g, 3, 1).column(0) * 4.0;
        let x = data.x().row(i).transpose();
        let w0 = pred.weights(&x).unwrap();
        let w1 = pred.weights(&(&x + v)).unwrap();
        assert!((w0 - w1).amax() < 1e-9);
    }
}

#[test]
fn near_noiseless_model_predicts_well() {
    let gamma = Basis::orthonormalize(&DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, -1.0])).unwrap();
    let sim = InverseSim::new(
        DVector::zeros(4),
        gamma,
        DMatrix::from_row_slice(1, 2, &[3.0, 1.0]),
        SymmetricMatrix::from_diagonal(&[1e-4]),
        Some(SymmetricMatrix::from_diagonal(&[1.0, 1.0, 1.0])),
        POLY2,
        Default::default(),
    )
    .unwrap();
    let data = sim.simulate(400, 11).unwrap();
    let fit = fit_extended(&data, POLY2, 1, &GrassmannOptions::default()).unwrap();
    let pred = Predictor::new(fit, data.y().clone()).unwrap();
    let (r, z) = residuals(&pred, &data).unwrap();
    assert_eq!(z.shape(), (400, 1));
    let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / 400.0;
    assert!(mean_abs < 0.05 * sd(data.y()), "{mean_abs}");
}

#[test]
fn permuted_response_has_no_predictive_power() {
    let sim = InverseSim::preset_single_index();
    let data = sim.simulate(400, 12).unwrap();
    // a fixed derangement of the responses
    let y = DVector::from_fn(400, |i, _| data.y()[(i * 7 + 3) % 400]);
    let shuffled = Dataset::new(data.x().clone(), y.clone()).unwrap();
    let fit = fit_extended(&shuffled, POLY2, 1, &GrassmannOptions::default()).unwrap();
    let pred = Predictor::new(fit, y.clone()).unwrap();
    let (r, _) = residuals(&pred, &shuffled).unwrap();
    let ratio = sd(&r).powi(2) / sd(&y).powi(2);
    assert!(ratio > 0.85, "{ratio}");
}

#[test]
fn mismatched_query_is_rejected() {
    let (_, pred) = fitted(13, 30, 3, 1);
    assert!(pred.predict(&DMatrix::zeros(2, 4)).is_err());
    assert!(pred.forward_mean(&DVector::from_element(3, f64::NAN)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_form_a_distribution_and_mean_stays_in_range(seed in 0u64..1000, scale in 0.0f64..1e3) {
        let (data, pred) = fitted(seed % 4, 30, 3, 1);
        let mut g = rng(seed);
        let x = gaussian(&mut g, 3, 1).column(0) * scale;
        let w = pred.weights(&x).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
        let m = pred.forward_mean(&x).unwrap();
        prop_assert!(m >= data.y().min() && m <= data.y().max());
    }
}
