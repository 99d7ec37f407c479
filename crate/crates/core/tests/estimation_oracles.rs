mod common;

use common::{gaussian, moments_for, random_data, rng, sample_cov};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pfcr_core::estimation::{
    directional_derivative_fd, fit_extended, fit_pc, fit_pfc_iso, lrt_dimension, random_tangent, reduce,
    select_dimension, select_dimension_in, ExtendedProblem, GrassmannOptions,
};
use pfcr_core::model::{full_model_loglik, profile_loglik, BasisSpec, Dataset, ModelKind, ProfileObjective};
use pfcr_core::numerics::max_principal_angle;
use pfcr_core::studylab::InverseSim;
use pfcr_core::{Basis, SymmetricMatrix};
use rayon::prelude::*;

const POLY2: BasisSpec = BasisSpec::Polynomial { degree: 2 };

fn top_eigenspace(s: &DMatrix<f64>, d: usize) -> Basis {
    let e = SymmetricEigen::new(s.clone());
    let mut idx: Vec<usize> = (0..s.nrows()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    Basis::orthonormalize(&e.eigenvectors.select_columns(idx.iter().take(d))).unwrap()
}

#[test]
fn pc_picks_dominant_axis() {
    // Columns are orthogonal with sums of squares 5n, n, n around zero mean.
    let n = 8;
    let col = |k: usize| DVector::from_fn(n, |i, _| if (i >> k) & 1 == 1 { 1.0 } else { -1.0 });
    let x = DMatrix::from_columns(&[col(0) * 5f64.sqrt(), col(1), col(2)]);
    let data = Dataset::new(x, DVector::from_fn(n, |i, _| i as f64)).unwrap();
    let fit = fit_pc(&data, 1).unwrap();
    assert!(max_principal_angle(&fit.gamma, &Basis::axes(3, 1)).unwrap() < 1e-12);
    assert_eq!(fit.kind, ModelKind::Pc);
    let full = fit_pc(&data, 3).unwrap();
    assert!(max_principal_angle(&full.gamma, &Basis::axes(3, 3)).unwrap() < 1e-7);
}

#[test]
fn pc_matches_independent_eigen_oracle() {
    for seed in 0..5 {
        let data = random_data(seed, 60, 6);
        let fit = fit_pc(&data, 2).unwrap();
        let oracle = top_eigenspace(&sample_cov(data.x()), 2);
        assert!(max_principal_angle(&fit.gamma, &oracle).unwrap() < 1e-6);
        assert!(fit_pc(&data, 0).is_err() && fit_pc(&data, 7).is_err());
    }
}

#[test]
fn pfc_iso_recovers_span_with_small_noise() {
    let raw = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, -1.0, 1.0, 1.0, -0.5, 0.0]);
    let gamma = Basis::orthonormalize(&raw).unwrap();
    let sim = InverseSim::new(
        DVector::zeros(5),
        gamma.clone(),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]),
        SymmetricMatrix::from_diagonal(&[0.01, 0.01]),
        Some(SymmetricMatrix::from_diagonal(&[0.01, 0.01, 0.01])),
        POLY2,
        Default::default(),
    )
    .unwrap();
    let data = sim.simulate(500, 3).unwrap();
    let fit = fit_pfc_iso(&data, POLY2, 2).unwrap();
    assert!(max_principal_angle(&fit.gamma, &gamma).unwrap() < 0.05);
    let err = fit_pfc_iso(&data, POLY2, 3).unwrap_err().to_string();
    assert!(err.contains("rank"), "{err}");
}

#[test]
fn pfc_iso_single_direction_is_fitted_value_direction() {
    let data = random_data(5, 80, 4);
    let spec = BasisSpec::Polynomial { degree: 1 };
    let fit = fit_pfc_iso(&data, spec, 1).unwrap();
    // with r = 1 the fitted values are rank one along Cov(X, y)
    let xc = data.centered_x();
    let yc = data.y().add_scalar(-data.y().mean());
    let c = DMatrix::from_column_slice(4, 1, (xc.transpose() * yc).as_slice());
    assert!(max_principal_angle(&fit.gamma, &Basis::orthonormalize(&c).unwrap()).unwrap() < 1e-6);
}

#[test]
fn pfc_iso_null_loglik_close_to_no_signal() {
    // deterministic response with no relation to X
    let data = random_data(6, 400, 4);
    let shuffled = Dataset::new(
        data.x().clone(),
        DVector::from_fn(400, |i, _| (i as f64 * 0.618).fract() - 0.5),
    )
    .unwrap();
    let fit = fit_pfc_iso(&shuffled, POLY2, 1).unwrap();
    let m = moments_for(&shuffled, POLY2);
    let (vals, _) = pfcr_core::numerics::sym_eigen(&m.sigma_fit).unwrap();
    let (total, _) = pfcr_core::numerics::sym_eigen(&m.sigma).unwrap();
    assert!(vals[0] < 0.05 * total[0]);
    // no-signal isotropic loglik uses σ² = tr Σ̂ / p
    let p = 4.0;
    let s2 = m.sigma.matrix().trace() / p;
    let none = -0.5 * 400.0 * p * ((2.0 * std::f64::consts::PI).ln() + s2.ln() + 1.0);
    assert!((fit.loglik - none).abs() / none.abs() < 0.01);
}

fn sphere_point(theta: f64, phi: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 1, &[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()])
}

#[test]
fn extended_fit_matches_sphere_grid_search() {
    let data = random_data(9, 40, 3);
    let m = moments_for(&data, POLY2);
    let fit = fit_extended(&data, POLY2, 1, &GrassmannOptions::default()).unwrap();
    let eval = |t: f64, f: f64| profile_loglik(&Basis::new(sphere_point(t, f)).unwrap(), &m).unwrap();
    // 1° mesh over the upper hemisphere
    let step = 1f64.to_radians();
    let mut cells: Vec<(f64, f64, f64)> = (0..=90)
        .into_par_iter()
        .flat_map_iter(|i| (0..360).map(move |j| (i as f64 * step, j as f64 * step)))
        .map(|(t, f)| (eval(t, f), t, f))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    // refine the best few cells on a 0.01° mesh
    let fine = 0.01f64.to_radians();
    let mut best = cells[0].0;
    for &(_, t0, f0) in cells.iter().take(4) {
        for i in -100..=100 {
            for j in -100..=100 {
                best = best.max(eval(t0 + i as f64 * fine, f0 + j as f64 * fine));
            }
        }
    }
    assert!(fit.loglik >= best - 1e-9, "grid {best} above fit {}", fit.loglik);
    assert!(fit.loglik - best < 1e-3, "fit {} vs grid {best}", fit.loglik);
}

#[test]
fn converged_fits_have_vanishing_directional_derivatives() {
    for seed in 0..5 {
        let data = random_data(seed + 50, 200, 5);
        let problem = ExtendedProblem::new(&data, POLY2).unwrap();
        let fit = problem.fit(2, &GrassmannOptions::with_seed(seed)).unwrap();
        assert!(fit.fit.converged);
        let obj = ProfileObjective::new(&problem.moments).unwrap();
        let s = fit.fit.gamma.matrix();
        let mut g = rng(seed);
        for _ in 0..10 {
            let z = random_tangent(s, &mut g);
            let dd = directional_derivative_fd(&obj, s, &z, 1e-5).unwrap() / obj.n();
            assert!(dd.abs() < 1e-6, "{dd}");
        }
        assert!(problem.riemannian_gradient_norm(&fit.fit.gamma).unwrap() < 1e-7);
        // never below any seed start
        for sd in &fit.seeds {
            assert!(fit.fit.loglik >= sd.start_loglik);
        }
    }
}

#[test]
fn canonical_orientation() {
    let data = random_data(60, 150, 5);
    let problem = ExtendedProblem::new(&data, POLY2).unwrap();
    let fit = problem.fit(2, &GrassmannOptions::default()).unwrap().fit;
    let g = fit.gamma.matrix();
    let t = g.transpose() * problem.moments.sigma_fit.matrix() * g;
    assert!(t[(0, 1)].abs() < 1e-9 * t.norm());
    assert!(t[(0, 0)] >= t[(1, 1)]);
    for c in g.column_iter() {
        let k = c.iamax();
        assert!(c[k] >= 0.0);
    }
}

#[test]
fn lambda_is_monotone_in_d() {
    for seed in 0..3 {
        let data = random_data(seed + 70, 150, 5);
        let problem = ExtendedProblem::new(&data, POLY2).unwrap();
        let opts = GrassmannOptions::with_seed(seed);
        let lambdas: Vec<f64> = (1..5).map(|d| problem.lrt(d, &opts).unwrap().0.lambda).collect();
        for w in lambdas.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{lambdas:?}");
        }
    }
}

#[test]
fn full_dimension_delegates_to_full_model() {
    let data = random_data(80, 60, 4);
    let fit = fit_extended(&data, POLY2, 4, &GrassmannOptions::default()).unwrap();
    let full = full_model_loglik(&moments_for(&data, POLY2)).unwrap();
    assert!((fit.loglik - full).abs() < 1e-9 * full.abs());
    assert!(fit.gamma0.is_none());
}

#[test]
fn alpha_one_selects_p() {
    let data = random_data(81, 80, 4);
    let (d, trail) = select_dimension(&data, POLY2, 1.0, &GrassmannOptions::default()).unwrap();
    assert_eq!(d, 4);
    assert_eq!(trail.len(), 3);
    assert!(select_dimension(&data, POLY2, 0.0, &GrassmannOptions::default()).is_err());
}

#[test]
fn rotation_equivariance_of_fitted_spans() {
    let data = random_data(90, 150, 5);
    let mut g = rng(91);
    let q = Basis::orthonormalize(&gaussian(&mut g, 5, 5)).unwrap().into_matrix();
    let rotated = Dataset::new(data.x() * &q, data.y().clone()).unwrap();
    let opts = GrassmannOptions::default();
    let a = fit_extended(&data, POLY2, 2, &opts).unwrap();
    let b = fit_extended(&rotated, POLY2, 2, &opts).unwrap();
    let back = Basis::orthonormalize(&(&q * b.gamma.matrix())).unwrap();
    assert!(max_principal_angle(&a.gamma, &back).unwrap() < 1e-6);
    for (x, y) in [(fit_pc(&data, 2), fit_pc(&rotated, 2)), (fit_pfc_iso(&data, POLY2, 2), fit_pfc_iso(&rotated, POLY2, 2))] {
        let (x, y) = (x.unwrap(), y.unwrap());
        let back = Basis::orthonormalize(&(&q * y.gamma.matrix())).unwrap();
        assert!(max_principal_angle(&x.gamma, &back).unwrap() < 1e-6);
    }
}

#[test]
fn lambda_invariant_to_similarity_transformation() {
    let data = random_data(92, 200, 4);
    let mut g = rng(93);
    let q = Basis::orthonormalize(&gaussian(&mut g, 4, 4)).unwrap().into_matrix();
    let moved = Dataset::new(data.x() * &q * 3.5, data.y().clone()).unwrap();
    let opts = GrassmannOptions::default();
    for d in 1..4 {
        let l0 = lrt_dimension(&data, POLY2, d, &opts).unwrap();
        let l1 = lrt_dimension(&moved, POLY2, d, &opts).unwrap();
        assert!((l0.lambda - l1.lambda).abs() < 1e-6 * (1.0 + l0.lambda), "d {d}: {} vs {}", l0.lambda, l1.lambda);
        assert_eq!(l0.df, l1.df);
    }
}

#[test]
fn lambda_changes_under_general_linear_transformation() {
    // The reducing structure of the error covariance is not preserved by a
    // general A, so neither is the statistic.
    let data = random_data(92, 200, 4);
    let mut g = rng(93);
    let a = gaussian(&mut g, 4, 4) + DMatrix::identity(4, 4) * 2.0;
    let moved = Dataset::new(data.x() * &a, data.y().clone()).unwrap();
    let opts = GrassmannOptions::default();
    let l0 = lrt_dimension(&data, POLY2, 2, &opts).unwrap();
    let l1 = lrt_dimension(&moved, POLY2, 2, &opts).unwrap();
    assert!((l0.lambda - l1.lambda).abs() > 1.0, "{} vs {}", l0.lambda, l1.lambda);
}

#[test]
fn reduce_contract() {
    let data = random_data(94, 50, 4);
    let fit = fit_extended(&data, POLY2, 2, &GrassmannOptions::default()).unwrap();
    let at_mean = DMatrix::from_fn(3, 4, |_, j| fit.mu[j]);
    assert!(reduce(&fit, &at_mean).unwrap().norm() < 1e-12);
    let z = reduce(&fit, data.x()).unwrap();
    let cov = sample_cov(&z);
    let m = moments_for(&data, POLY2);
    let target = fit.gamma.matrix().transpose() * m.sigma.matrix() * fit.gamma.matrix();
    assert!((cov - target).norm() < 1e-9 * (1.0 + m.sigma.max_abs()));
    assert!(reduce(&fit, &DMatrix::zeros(2, 3)).is_err());

    let mut axes = fit.clone();
    axes.gamma = Basis::axes(4, 2);
    let z = reduce(&axes, data.x()).unwrap();
    for i in 0..50 {
        for j in 0..2 {
            assert!((z[(i, j)] - (data.x()[(i, j)] - fit.mu[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn lrt_statistic_is_calibrated_at_true_dimension() {
    let sim = InverseSim::preset_recovery();
    let stats: Vec<(f64, u64)> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let data = sim.simulate(500, 300 ^ rep).unwrap();
            let problem = ExtendedProblem::new(&data, sim.spec).unwrap();
            let (t, _) = problem.lrt(2, &GrassmannOptions::with_seed(rep)).unwrap();
            (t.lambda, t.df)
        })
        .collect();
    let df = stats[0].1 as f64;
    let mean = stats.iter().map(|s| s.0).sum::<f64>() / stats.len() as f64;
    assert!((mean / df - 1.0).abs() < 0.15, "mean Λ {mean} vs df {df}");
}

#[test]
fn null_data_selects_one_at_nominal_rate() {
    let hits: usize = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let mut g = rng(400 + rep);
            let x = gaussian(&mut g, 300, 4);
            let y = gaussian(&mut g, 300, 1).column(0).into_owned();
            let data = Dataset::new(x, y).unwrap();
            let problem = ExtendedProblem::new(&data, POLY2).unwrap();
            let (d, _) = select_dimension_in(&problem, 0.05, &GrassmannOptions::with_seed(rep)).unwrap();
            usize::from(d == 1)
        })
        .sum();
    // with no dependence at all the d = 1 test is conservative
    let rate = hits as f64 / 200.0;
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn too_few_observations_is_an_input_error() {
    let data = random_data(95, 8, 5);
    let err = ExtendedProblem::new(&data, BasisSpec::Polynomial { degree: 3 }).unwrap_err();
    assert!(!err.is_numerical());
    assert!(err.to_string().contains("screen predictors"));
}
