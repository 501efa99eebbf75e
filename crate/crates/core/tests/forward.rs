use std::f64::consts::PI;

use matspec_core::linalg::{max_abs, CMat, C64};
use matspec_core::problem::BoundaryProblem;
use matspec_core::spectral::{compute_omega, forward};
use matspec_core::tolerances::Tolerances;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn diag(v: &[C64]) -> CMat {
    CMat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { c(0.0) })
}

#[test]
fn zero_potential_scalar() {
    let p = BoundaryProblem::constant(diag(&[c(0.0)]), 257).unwrap();
    let data = forward(&p, 10, &Tolerances::default()).unwrap();
    for n in 0..=10 {
        let e = data.get(n, 1);
        assert!((e.lambda - c((n * n) as f64)).norm() < 1e-8, "n={n}: {}", e.lambda);
        let expect = if n == 0 { 1.0 / PI } else { 2.0 / PI };
        assert!((e.alpha[(0, 0)] - c(expect)).norm() < 1e-7, "n={n}: {}", e.alpha);
        assert_eq!(e.multiplicity, 1);
    }
}

#[test]
fn decoupled_pair() {
    let p = BoundaryProblem::constant(diag(&[c(1.0), c(2.0)]), 257).unwrap();
    let tol = Tolerances::default();
    let om = compute_omega(&p, &tol);
    assert!(om.diagonal);
    assert!((om.matrix[(0, 0)] - c(PI / 2.0)).norm() < 1e-10 && (om.matrix[(1, 1)] - c(PI)).norm() < 1e-10);
    let data = forward(&p, 8, &tol).unwrap();
    for n in 0..=8 {
        for q in 1..=2 {
            let e = data.get(n, q);
            assert!((e.lambda - c((n * n + q) as f64)).norm() < 1e-8, "({n},{q}): {}", e.lambda);
        }
    }
    let a = &data.get(3, 2).alpha;
    let mut expect = CMat::zeros(2, 2);
    expect[(1, 1)] = c(2.0 / PI);
    assert!(max_abs(&(a - expect)) < 1e-7);
}

#[test]
fn constant_complex_shift() {
    let p = BoundaryProblem::constant(diag(&[C64::new(0.0, 2.0)]), 257).unwrap();
    let data = forward(&p, 6, &Tolerances::default()).unwrap();
    for n in 0..=6 {
        let e = data.get(n, 1);
        assert!((e.lambda - C64::new((n * n) as f64, 2.0)).norm() < 1e-8, "n={n}: {}", e.lambda);
        let expect = if n == 0 { 1.0 / PI } else { 2.0 / PI };
        assert!((e.alpha[(0, 0)] - c(expect)).norm() < 1e-7);
    }
}
