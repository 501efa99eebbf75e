use std::f64::consts::PI;

use matspec_core::error::SpecError;
use matspec_core::inverse::{assemble, build_main_system, reconstruct, solve_main_equation, xi_sequence, DerivativeMode, IndexSet};
use matspec_core::linalg::{max_abs, CMat, C64};
use matspec_core::model::{model_spectral_data, ModelProblem};
use matspec_core::problem::{uniform_grid, BoundaryProblem};
use matspec_core::spectral::{forward, SpectralData, SpectralDatum};
use matspec_core::tolerances::Tolerances;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn l2_error(grid: &[f64], a: &[CMat], b: impl Fn(f64) -> CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let e0 = (&a[i] - b(grid[i])).norm_squared();
        let e1 = (&a[i + 1] - b(grid[i + 1])).norm_squared();
        acc += 0.5 * h * (e0 + e1);
    }
    acc.sqrt()
}

#[test]
fn identical_data_telescopes() {
    let tol = Tolerances::default();
    for omega in [vec![c(0.3)], vec![c(PI / 2.0), c(PI)], vec![c(0.0), c(0.0)], vec![c(0.2), C64::new(0.5, 0.4)]] {
        let model = ModelProblem::new(omega);
        let data = model_spectral_data(&model, 12, &tol).unwrap();
        let index = IndexSet::new(&data, &data, &model, 12, tol.merge_tol).unwrap();
        let sys = assemble(&index, 1.3);
        assert!(max_abs(&(&sys.a - CMat::identity(sys.a.nrows(), sys.a.nrows()))) <= 1e-12);
        let grid = uniform_grid(65);
        let rec = reconstruct(&data, &model, &data, 12, &grid, &tol, DerivativeMode::FiniteDifference).unwrap();
        for q in &rec.q_rec {
            assert!(max_abs(&(q - model.potential())) <= 1e-9);
        }
        assert!(max_abs(&rec.h_rec) <= 1e-9 && max_abs(&rec.big_h_rec) <= 1e-9);
        assert_eq!(rec.xi.omega, 0.0);
    }
}

#[test]
fn scalar_roundtrip_improves_with_truncation() {
    let tol = Tolerances::default();
    let q = |x: f64| CMat::from_element(1, 1, c(0.5 * x.cos()));
    let p = BoundaryProblem::from_fn(1, 257, q, CMat::zeros(1, 1), CMat::zeros(1, 1), true).unwrap();
    let data = forward(&p, 40, &tol).unwrap();
    let model = ModelProblem::from_data(&data);
    let model_data = model_spectral_data(&model, 40, &tol).unwrap();
    let xi = xi_sequence(&data, &model_data).unwrap();
    assert!(!xi.tail_growing());
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for n in [10, 20, 40] {
        let rec = reconstruct(&data, &model, &model_data, n, p.grid(), &tol, DerivativeMode::FiniteDifference).unwrap();
        let err = l2_error(p.grid(), &rec.q_rec, q);
        let hh = rec.h_rec[(0, 0)].norm() + rec.big_h_rec[(0, 0)].norm();
        assert!(err < prev.0 && hh < prev.1, "N={n}: {err} {hh}");
        prev = (err, hh);
        assert!(rec.residuals.iter().all(|&r| r <= 1e-10));
        // away from the ends the truncated series converges much faster
        let interior = p
            .grid()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.5 && x < PI - 0.5)
            .map(|(i, &x)| (rec.q_rec[i][(0, 0)] - c(0.5 * x.cos())).norm())
            .fold(0.0, f64::max);
        assert!(interior < 0.4 / n as f64, "N={n}: interior {interior}");
        if n == 40 {
            let tw = reconstruct(&data, &model, &model_data, n, p.grid(), &tol, DerivativeMode::TermWise).unwrap();
            assert!((l2_error(p.grid(), &tw.q_rec, q) - err).abs() < 0.1 * err);
            assert!(max_abs(&(&tw.h_rec - &rec.h_rec)) < 1e-12);
        }
    }
}

#[test]
fn single_band_system_matches_quadrature() {
    // m = 1, N = 0: unknowns phi(x, delta) and phi(x, 0)
    let tol = Tolerances::default();
    let model = ModelProblem::new(vec![c(0.0)]);
    let model_data = model_spectral_data(&model, 2, &tol).unwrap();
    let mut entries = model_data.entries.clone();
    let delta = 0.37;
    entries[0] = SpectralDatum::new(0, 1, c(delta), CMat::from_element(1, 1, c(0.4)), 1, 0);
    let data = SpectralData::new(1, 2, vec![c(0.0)], entries, tol.omega_group_tol).unwrap();
    let x = 2.1;
    let sys = build_main_system(x, &data, &model_data, &model, 0, &tol).unwrap();
    assert_eq!(sys.a.shape(), (2, 2));
    let simpson = |f: &dyn Fn(f64) -> f64| {
        let n = 2000;
        let h = x / n as f64;
        (0..=n).map(|i| {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(i as f64 * h)
        }).sum::<f64>() * h / 3.0
    };
    let s = delta.sqrt();
    let d_dd = simpson(&|t| (s * t).cos().powi(2));
    let d_d0 = simpson(&|t| (s * t).cos());
    let d_00 = x;
    let (w0, w1) = (0.4, -1.0 / PI);
    let expect = [[1.0 + w0 * d_dd, w0 * d_d0], [w1 * d_d0, 1.0 + w1 * d_00]];
    for r in 0..2 {
        for col in 0..2 {
            assert!((sys.a[(r, col)] - c(expect[r][col])).norm() < 1e-10, "({r},{col})");
        }
    }
    assert!((sys.rhs[(0, 0)] - c((s * x).cos())).norm() < 1e-15 && (sys.rhs[(0, 1)] - c(1.0)).norm() < 1e-15);
    let mut sys = sys;
    let sol = solve_main_equation(&mut sys, &tol).unwrap();
    assert!(sol.residual <= 1e-12);
    assert!(sys.solution_block(1).is_some());
}

#[test]
fn xi_of_single_perturbation() {
    let tol = Tolerances::default();
    let model = ModelProblem::new(vec![c(0.0)]);
    let model_data = model_spectral_data(&model, 6, &tol).unwrap();
    let mut entries = model_data.entries.clone();
    entries[0] = SpectralDatum::new(0, 1, c(0.25), CMat::from_element(1, 1, c(1.0 / PI)), 1, 0);
    let data = SpectralData::new(1, 6, vec![c(0.0)], entries, tol.omega_group_tol).unwrap();
    let xi = xi_sequence(&data, &model_data).unwrap();
    assert!((xi.xi[0] - 0.5).abs() < 1e-15);
    assert!(xi.xi[1..].iter().all(|&v| v == 0.0));
    assert!((xi.omega - 0.5).abs() < 1e-15);
}

#[test]
fn truncation_beyond_data_is_refused() {
    let tol = Tolerances::default();
    let model = ModelProblem::new(vec![c(0.0)]);
    let d = model_spectral_data(&model, 5, &tol).unwrap();
    let err = build_main_system(0.5, &d, &d, &model, 6, &tol).unwrap_err();
    assert_eq!(err, SpecError::TruncationTooLarge { n_trunc: 6, n_max: 5 });
}
