//! The boundary value problem `-Y'' + Q(x) Y = lambda Y` on `(0, pi)` with
//! `Y'(0) - h Y(0) = 0` and `Y'(pi) + H Y(pi) = 0`.

use std::f64::consts::PI;

use crate::error::{Result, SpecError};
use crate::linalg::{max_abs, CMat, C64};

pub const MIN_GRID_NODES: usize = 65;
const ENDPOINT_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-10;

/// `L(Q, h, H)` sampled on a grid. `Q` is piecewise linear between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProblem {
    m: usize,
    grid: Vec<f64>,
    q: Vec<CMat>,
    h: CMat,
    big_h: CMat,
    selfadjoint_hint: bool,
}

impl BoundaryProblem {
    pub fn new(grid: Vec<f64>, q: Vec<CMat>, h: CMat, big_h: CMat, selfadjoint_hint: bool) -> Result<Self> {
        let m = h.nrows();
        let p = Self { m, grid, q, h, big_h, selfadjoint_hint };
        p.validate()?;
        Ok(p)
    }

    /// Samples `q_fn` on a uniform grid of `nodes` points over `[0, pi]`.
    pub fn from_fn<F>(m: usize, nodes: usize, q_fn: F, h: CMat, big_h: CMat, selfadjoint_hint: bool) -> Result<Self>
    where
        F: Fn(f64) -> CMat,
    {
        let grid = uniform_grid(nodes);
        let q = grid.iter().map(|&x| q_fn(x)).collect();
        if h.nrows() != m {
            return Err(SpecError::InvalidProblem(format!("h is {}x{}, expected m = {m}", h.nrows(), h.ncols())));
        }
        Self::new(grid, q, h, big_h, selfadjoint_hint)
    }

    /// Constant potential with `h = H = 0`.
    pub fn constant(q: CMat, nodes: usize) -> Result<Self> {
        let m = q.nrows();
        let hermitian = (&q - q.adjoint()).iter().all(|z| z.norm() <= HERMITIAN_TOL);
        Self::from_fn(m, nodes, |_| q.clone(), CMat::zeros(m, m), CMat::zeros(m, m), hermitian)
    }

    fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(SpecError::InvalidProblem("matrix dimension must be positive".into()));
        }
        let g = &self.grid;
        if g.len() < MIN_GRID_NODES {
            return Err(SpecError::InvalidProblem(format!(
                "grid has {} nodes, at least {MIN_GRID_NODES} required",
                g.len()
            )));
        }
        if g[0].abs() > ENDPOINT_TOL || (g[g.len() - 1] - PI).abs() > ENDPOINT_TOL {
            return Err(SpecError::InvalidProblem("grid must start at 0 and end at pi".into()));
        }
        if let Some(i) = g.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SpecError::InvalidProblem(format!("grid not strictly increasing at node {}", i + 1)));
        }
        if self.q.len() != g.len() {
            return Err(SpecError::InvalidProblem(format!(
                "{} potential samples for {} grid nodes",
                self.q.len(),
                g.len()
            )));
        }
        for (name, a) in [("h", &self.h), ("H", &self.big_h)] {
            if a.nrows() != m || a.ncols() != m {
                return Err(SpecError::InvalidProblem(format!("{name} must be {m}x{m}")));
            }
            if !crate::linalg::is_finite(a) {
                return Err(SpecError::InvalidProblem(format!("{name} has non-finite entries")));
            }
        }
        for (i, qi) in self.q.iter().enumerate() {
            if qi.nrows() != m || qi.ncols() != m {
                return Err(SpecError::InvalidProblem(format!("Q at node {i} must be {m}x{m}")));
            }
            if !crate::linalg::is_finite(qi) {
                return Err(SpecError::InvalidProblem(format!("Q at node {i} has non-finite entries")));
            }
        }
        if self.selfadjoint_hint {
            let herm = |a: &CMat| max_abs(&(a - a.adjoint())) <= HERMITIAN_TOL;
            if !herm(&self.h) || !herm(&self.big_h) {
                return Err(SpecError::InvalidProblem("selfadjoint_hint set but h or H is not Hermitian".into()));
            }
            if let Some(i) = self.q.iter().position(|qi| !herm(qi)) {
                return Err(SpecError::InvalidProblem(format!(
                    "selfadjoint_hint set but Q is not Hermitian at node {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn q(&self) -> &[CMat] {
        &self.q
    }
    pub fn h(&self) -> &CMat {
        &self.h
    }
    pub fn big_h(&self) -> &CMat {
        &self.big_h
    }
    pub fn selfadjoint_hint(&self) -> bool {
        self.selfadjoint_hint
    }

    /// `Q(x)` by linear interpolation of the node samples.
    pub fn q_at(&self, x: f64) -> CMat {
        let g = &self.grid;
        let i = match g.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.q[i].clone(),
            Err(0) => return self.q[0].clone(),
            Err(i) if i >= g.len() => return self.q[g.len() - 1].clone(),
            Err(i) => i - 1,
        };
        let t = (x - g[i]) / (g[i + 1] - g[i]);
        &self.q[i] * C64::new(1.0 - t, 0.0) + &self.q[i + 1] * C64::new(t, 0.0)
    }

    /// `int_0^pi Q`, exact for the piecewise linear potential.
    pub fn integral_q(&self) -> CMat {
        let mut acc = CMat::zeros(self.m, self.m);
        for i in 0..self.grid.len() - 1 {
            let w = 0.5 * (self.grid[i + 1] - self.grid[i]);
            acc += (&self.q[i] + &self.q[i + 1]) * C64::new(w, 0.0);
        }
        acc
    }

    /// The same continuous problem on a grid with every interval split `factor` times.
    pub fn refined(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let mut grid = Vec::with_capacity((self.grid.len() - 1) * factor + 1);
        let mut q = Vec::with_capacity(grid.capacity());
        for i in 0..self.grid.len() - 1 {
            let (a, b) = (self.grid[i], self.grid[i + 1]);
            for k in 0..factor {
                let t = k as f64 / factor as f64;
                grid.push(a + t * (b - a));
                q.push(&self.q[i] * C64::new(1.0 - t, 0.0) + &self.q[i + 1] * C64::new(t, 0.0));
            }
        }
        grid.push(*self.grid.last().unwrap());
        q.push(self.q.last().unwrap().clone());
        Self { m: self.m, grid, q, h: self.h.clone(), big_h: self.big_h.clone(), selfadjoint_hint: self.selfadjoint_hint }
    }

    /// `L(Q^T, h^T, H^T)`: its column solutions are the transposed row
    /// solutions of the dual problem `-Z'' + Z Q = lambda Z`.
    pub fn transposed(&self) -> Self {
        Self {
            m: self.m,
            grid: self.grid.clone(),
            q: self.q.iter().map(|a| a.transpose()).collect(),
            h: self.h.transpose(),
            big_h: self.big_h.transpose(),
            selfadjoint_hint: self.selfadjoint_hint,
        }
    }

    /// Conjugates every coefficient by the constant unitary `u`: `Q -> U^dagger Q U`.
    /// Spectra are unchanged and weight matrices transform as `U^dagger alpha U`.
    pub fn unitary_transform(&self, u: &CMat) -> Self {
        let ua = u.adjoint();
        let tr = |a: &CMat| &ua * a * u;
        Self {
            m: self.m,
            grid: self.grid.clone(),
            q: self.q.iter().map(tr).collect(),
            h: tr(&self.h),
            big_h: tr(&self.big_h),
            selfadjoint_hint: self.selfadjoint_hint,
        }
    }

    /// Applies the unitary transform that diagonalises a normal `omega`.
    ///
    /// Returns the transformed problem and the unitary used. Fails when
    /// `omega` is not normal, since then no unitary can diagonalise it.
    pub fn diagonalize_omega(&self) -> Result<(Self, CMat)> {
        let omega = crate::spectral::omega_matrix(self);
        let scale = 1.0 + max_abs(&omega);
        let commutator = &omega * omega.adjoint() - omega.adjoint() * &omega;
        if max_abs(&commutator) > 1e-9 * scale * scale {
            return Err(SpecError::InvalidProblem("omega is not normal; no unitary diagonalises it".into()));
        }
        let schur = omega.clone().schur();
        let (u, t) = schur.unpack();
        let off = (0..self.m)
            .flat_map(|i| (0..self.m).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| t[(i, j)].norm())
            .fold(0.0, f64::max);
        if off > 1e-8 * scale {
            return Err(SpecError::InvalidProblem("Schur form of omega is not diagonal".into()));
        }
        Ok((self.unitary_transform(&u), u))
    }
}

pub fn uniform_grid(nodes: usize) -> Vec<f64> {
    let n = nodes.max(2) - 1;
    (0..=n).map(|i| if i == n { PI } else { PI * i as f64 / n as f64 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(vals: &[f64]) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|&v| C64::new(v, 0.0))))
    }

    #[test]
    fn rejects_short_or_bad_grids() {
        let z = CMat::zeros(1, 1);
        assert!(BoundaryProblem::from_fn(1, 33, |_| z.clone(), z.clone(), z.clone(), false).is_err());
        let mut grid = uniform_grid(65);
        grid[10] = grid[9];
        let q = vec![z.clone(); 65];
        assert!(BoundaryProblem::new(grid, q.clone(), z.clone(), z.clone(), false).is_err());
        let mut grid = uniform_grid(65);
        *grid.last_mut().unwrap() = 3.0;
        assert!(BoundaryProblem::new(grid, q, z.clone(), z, false).is_err());
    }

    #[test]
    fn rejects_non_finite_and_non_hermitian() {
        let z = CMat::zeros(1, 1);
        let bad = |x: f64| if x > 1.0 { CMat::from_element(1, 1, C64::new(f64::NAN, 0.0)) } else { CMat::zeros(1, 1) };
        assert!(BoundaryProblem::from_fn(1, 65, bad, z.clone(), z.clone(), false).is_err());
        let q = CMat::from_element(1, 1, C64::new(0.0, 2.0));
        assert!(BoundaryProblem::from_fn(1, 65, |_| q.clone(), z.clone(), z, true).is_err());
    }

    #[test]
    fn interpolation_and_integral() {
        let p = BoundaryProblem::from_fn(1, 129, |x| CMat::from_element(1, 1, C64::new(x, 0.0)), CMat::zeros(1, 1), CMat::zeros(1, 1), false).unwrap();
        assert!((p.q_at(1.2345)[(0, 0)].re - 1.2345).abs() < 1e-14);
        assert!((p.integral_q()[(0, 0)].re - PI * PI / 2.0).abs() < 1e-12);
        let r = p.refined(3);
        assert_eq!(r.grid().len(), 128 * 3 + 1);
        assert!((r.integral_q()[(0, 0)].re - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn diagonalize_hermitian_omega() {
        let q = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.3, 0.0), C64::new(0.3, 0.0), C64::new(2.0, 0.0)]);
        let p = BoundaryProblem::constant(q, 65).unwrap();
        let (t, u) = p.diagonalize_omega().unwrap();
        let omega = crate::spectral::omega_matrix(&t);
        assert!(omega[(0, 1)].norm() < 1e-12 && omega[(1, 0)].norm() < 1e-12);
        assert!((&u * u.adjoint() - diag(&[1.0, 1.0])).norm() < 1e-12);
    }
}
