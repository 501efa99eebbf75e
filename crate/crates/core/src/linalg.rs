//! Small dense complex linear algebra used throughout the crate.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Row-sum norm `max_j sum_k |a_jk|`, the norm used for weight matrices.
pub fn row_sum_norm(a: &CMat) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Singular value decomposition `a = u diag(s) v^H` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

/// One-sided Jacobi SVD.
///
/// Used instead of `nalgebra`'s bidiagonal SVD, which loses several digits
/// on nearly rank-deficient input, the case that rank decisions depend on.
pub fn svd(a: &CMat) -> Svd {
    let (rows, cols) = a.shape();
    if rows < cols {
        let t = svd(&a.adjoint());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut w = a.clone();
    let mut v = CMat::identity(cols, cols);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = w.column(p).iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = w.column(q).iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = w.column(p).iter().zip(w.column(q).iter()).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let xp = mat[(r, p)];
                        let xq = mat[(r, q)] * phase.conj();
                        mat[(r, p)] = xp * c - xq * s;
                        mat[(r, q)] = (xp * s + xq * c) * phase;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = CMat::zeros(rows, cols);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / C64::new(norms[j], 0.0)));
        }
    }
    let v = CMat::from_fn(cols, cols, |r, k| v[(r, order[k])]);
    Svd { u, s, v }
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    svd(a).s
}

/// 2-norm condition number; infinite for exactly singular input.
pub fn condition_number(a: &CMat) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Number of singular values above `rel * ||a||_rowsum`.
pub fn numerical_rank(a: &CMat, rel: f64) -> usize {
    let scale = row_sum_norm(a);
    if scale == 0.0 {
        return 0;
    }
    singular_values(a).into_iter().filter(|&s| s > rel * scale).count()
}

/// Orthonormal basis (as columns) of the range of `a`, using left singular
/// vectors whose singular value exceeds `rel * ||a||`.
pub fn range_basis(a: &CMat, rel: f64) -> CMat {
    let n = a.nrows();
    let scale = row_sum_norm(a);
    if scale == 0.0 {
        return CMat::zeros(n, 0);
    }
    let d = svd(a);
    let keep = d.s.iter().filter(|&&s| s > rel * scale).count();
    d.u.columns(0, keep).into_owned()
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint()
}

/// LU factorisation with partial pivoting that also solves with the adjoint.
pub struct Factorization {
    lu: nalgebra::linalg::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    l: CMat,
    u: CMat,
}

impl Factorization {
    pub fn new(a: CMat) -> Self {
        let lu = a.lu();
        let (l, u) = (lu.l(), lu.u());
        Self { lu, l, u }
    }

    pub fn is_invertible(&self) -> bool {
        self.lu.is_invertible()
    }

    /// Solves `a x = b`.
    pub fn solve(&self, b: &CMat) -> Option<CMat> {
        self.lu.solve(b)
    }

    /// Solves `a^H x = b`. With `P a = L U`, `a^H = U^H L^H P`.
    pub fn solve_adjoint(&self, b: &CMat) -> Option<CMat> {
        let w = self.u.ad_solve_upper_triangular(b)?;
        let mut v = self.l.ad_solve_lower_triangular(&w)?;
        self.lu.p().inv_permute_rows(&mut v);
        Some(v)
    }

    /// Lower estimate of `||a^-1||_1` (Hager's method with Higham's extra probe).
    pub fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.u.nrows();
        if n == 0 {
            return 0.0;
        }
        if !self.is_invertible() {
            return f64::INFINITY;
        }
        let norm1 = |v: &CMat| v.iter().map(|z| z.norm()).sum::<f64>();
        let mut x = CMat::from_element(n, 1, C64::new(1.0 / n as f64, 0.0));
        let mut est = 0.0f64;
        for _ in 0..5 {
            let Some(y) = self.solve(&x) else { return f64::INFINITY };
            let ny = norm1(&y);
            if ny <= est {
                break;
            }
            est = ny;
            let sign = y.map(|z| if z.norm() > 0.0 { z / z.norm() } else { ONE });
            let Some(z) = self.solve_adjoint(&sign) else { return f64::INFINITY };
            let (j, zj) = z.iter().enumerate().fold((0, 0.0), |acc, (k, v)| if v.norm() > acc.1 { (k, v.norm()) } else { acc });
            let zx: C64 = z.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
            if zj <= zx.re {
                break;
            }
            x = CMat::zeros(n, 1);
            x[(j, 0)] = ONE;
        }
        let alt = CMat::from_fn(n, 1, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            C64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
        });
        if let Some(y) = self.solve(&alt) {
            est = est.max(2.0 * norm1(&y) / (3.0 * n as f64));
        }
        est
    }
}

/// Column-sum norm.
pub fn norm1(a: &CMat) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_range() {
        let v = CMat::from_column_slice(3, 1, &[ONE, C64::new(0.0, 1.0), ZERO]);
        let a = &v * v.adjoint();
        assert_eq!(numerical_rank(&a, 1e-7), 1);
        let basis = range_basis(&a, 1e-7);
        assert_eq!(basis.ncols(), 1);
        let proj = &basis * basis.adjoint();
        assert!((proj - &a / C64::new(2.0, 0.0)).norm() < 1e-12);
        assert_eq!(numerical_rank(&CMat::zeros(2, 2), 1e-7), 0);
        assert!(condition_number(&CMat::identity(3, 3)) < 1.0 + 1e-12);
    }

    #[test]
    fn jacobi_svd_near_rank_one() {
        // nearly real rank-one input, where bidiagonal QR iterations drift
        let v = [0.3, -0.45, 0.2];
        let a = CMat::from_fn(3, 3, |i, j| C64::new(v[i] * v[j] + 1e-16 * (i + 2 * j) as f64, 1e-17 * (i as f64 - j as f64)));
        let d = svd(&a);
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        assert!((d.s[0] - norm2).abs() < 1e-14);
        assert!(d.s[1] < 1e-14);
        let rec = &d.u * CMat::from_diagonal(&nalgebra::DVector::from_iterator(3, d.s.iter().map(|&x| C64::new(x, 0.0)))) * d.v.adjoint();
        assert!((rec - &a).norm() < 1e-15);
        let b = CMat::from_fn(2, 3, |i, j| C64::new((i + j) as f64, (i * j) as f64 - 0.5));
        let d = svd(&b);
        let rec = &d.u * CMat::from_diagonal(&nalgebra::DVector::from_iterator(2, d.s.iter().map(|&x| C64::new(x, 0.0)))) * d.v.adjoint();
        assert!((rec - &b).norm() < 1e-13);
    }

    #[test]
    fn factorization_adjoint_and_condition() {
        let a = CMat::from_fn(5, 5, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 6.0 } else { 0.0 }, (i as f64 - j as f64) * 0.3));
        let f = Factorization::new(a.clone());
        let b = CMat::from_fn(5, 2, |i, j| C64::new(i as f64 + 1.0, j as f64 - 0.5));
        assert!((&a * f.solve(&b).unwrap() - &b).norm() < 1e-12);
        assert!((a.adjoint() * f.solve_adjoint(&b).unwrap() - &b).norm() < 1e-12);
        let exact = norm1(&a.clone().try_inverse().unwrap());
        let est = f.inverse_norm1_estimate();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 3.0, "{est} vs {exact}");
    }

    #[test]
    fn norms() {
        let a = CMat::from_row_slice(2, 2, &[ONE, C64::new(-2.0, 0.0), C64::new(0.0, 3.0), ONE]);
        assert_eq!(row_sum_norm(&a), 4.0);
        assert_eq!(max_abs(&a), 3.0);
    }
}
