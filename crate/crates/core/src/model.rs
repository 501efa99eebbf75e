//! The default model problem `Q~ = (2/pi) omega`, `h~ = H~ = 0` in closed form.
//!
//! With a diagonal constant potential every channel decouples into the
//! scalar problem `-y'' + s_q y = lambda y`, `s_q = 2 omega_q / pi`, so all
//! quantities reduce to cosines of `nu_q = sqrt(lambda - s_q)`.

use std::f64::consts::PI;

use crate::error::Result;
use crate::linalg::{CMat, C64};
use crate::problem::BoundaryProblem;
use crate::scalar::{branch_sqrt, sinc_scaled};
use crate::spectral::{SpectralData, SpectralDatum};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProblem {
    pub m: usize,
    /// Diagonal of omega.
    pub omega: Vec<C64>,
    /// `2 omega_q / pi`, the constant potential of channel `q`.
    pub shift_q: Vec<C64>,
}

impl ModelProblem {
    pub fn new(omega: Vec<C64>) -> Self {
        let shift_q = omega.iter().map(|w| w * (2.0 / PI)).collect();
        Self { m: omega.len(), omega, shift_q }
    }

    pub fn from_data(data: &SpectralData) -> Self {
        Self::new(data.omega.clone())
    }

    /// `nu_q(lambda)` for every channel.
    pub fn nu(&self, lambda: C64) -> Vec<C64> {
        self.shift_q.iter().map(|s| branch_sqrt(lambda - s)).collect()
    }

    pub fn potential(&self) -> CMat {
        diag(&self.shift_q)
    }

    /// The model as a general boundary problem, for the ODE path.
    pub fn to_problem(&self, nodes: usize) -> Result<BoundaryProblem> {
        BoundaryProblem::constant(self.potential(), nodes)
    }
}

fn diag(v: &[C64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}

/// `phi~(x, lambda) = diag cos(nu_q x)`.
pub fn model_phi(model: &ModelProblem, lambda: C64, x: f64) -> CMat {
    let v: Vec<C64> = model.nu(lambda).iter().map(|nu| (nu * x).cos()).collect();
    diag(&v)
}

/// The dual solution coincides with `phi~` because everything is diagonal.
pub fn model_phistar(model: &ModelProblem, lambda: C64, x: f64) -> CMat {
    model_phi(model, lambda, x)
}

/// `d/dx phi~(x, lambda) = diag(-nu_q sin(nu_q x))`.
pub fn model_dphi(model: &ModelProblem, lambda: C64, x: f64) -> CMat {
    let v: Vec<C64> = model.nu(lambda).iter().map(|nu| -nu * (nu * x).sin()).collect();
    diag(&v)
}

/// `int_0^x cos(a t) cos(b t) dt`, continuous through `a = +-b` and `a = b = 0`.
pub fn cos_product_integral(a: C64, b: C64, x: f64) -> C64 {
    (sinc_scaled(a - b, x) + sinc_scaled(a + b, x)) * 0.5
}

/// Diagonal of `D~(x, lambda, mu)` given `nu(lambda)` and `nu(mu)`.
pub fn model_d_diag(nu_lambda: &[C64], nu_mu: &[C64], x: f64) -> Vec<C64> {
    nu_lambda.iter().zip(nu_mu).map(|(&a, &b)| cos_product_integral(a, b, x)).collect()
}

/// `D~(x, lambda, mu) = int_0^x phi~*(t, mu) phi~(t, lambda) dt`.
pub fn model_d_kernel(model: &ModelProblem, lambda: C64, mu: C64, x: f64) -> CMat {
    diag(&model_d_diag(&model.nu(lambda), &model.nu(mu), x))
}

/// Eigenvalues `n^2 + s_q` and weights `(c_n / pi) e_q e_q^T`, `c_0 = 1`, `c_n = 2`.
///
/// Coinciding values, within or across bands, form one cluster whose members
/// all carry the summed weight.
pub fn model_spectral_data(model: &ModelProblem, n_max: usize, tol: &Tolerances) -> Result<SpectralData> {
    let m = model.m;
    let mut lambdas = Vec::with_capacity((n_max + 1) * m);
    for n in 0..=n_max {
        for q in 0..m {
            lambdas.push(C64::new((n * n) as f64, 0.0) + model.shift_q[q]);
        }
    }
    let mut cluster = vec![usize::MAX; lambdas.len()];
    let mut heads: Vec<usize> = Vec::new();
    for k in 0..lambdas.len() {
        let l = lambdas[k];
        let found = heads.iter().position(|&h| (lambdas[h] - l).norm() <= tol.merge_tol * (1.0 + l.norm()));
        cluster[k] = match found {
            Some(id) => id,
            None => {
                heads.push(k);
                heads.len() - 1
            }
        };
    }
    let mut alphas = vec![CMat::zeros(m, m); heads.len()];
    let mut counts = vec![0usize; heads.len()];
    for (k, &id) in cluster.iter().enumerate() {
        let (n, q) = (k / m, k % m);
        let w = if n == 0 { 1.0 / PI } else { 2.0 / PI };
        alphas[id][(q, q)] += C64::new(w, 0.0);
        counts[id] += 1;
    }
    let entries = (0..lambdas.len())
        .map(|k| {
            let id = cluster[k];
            SpectralDatum::new(k / m, k % m + 1, lambdas[heads[id]], alphas[id].clone(), counts[id], id)
        })
        .collect();
    SpectralData::new(m, n_max, model.omega.clone(), entries, tol.omega_group_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn zero_omega_is_cosine() {
        let model = ModelProblem::new(vec![c(0.0)]);
        let p = model_phi(&model, c(9.0), 0.7);
        assert!((p[(0, 0)] - c((3.0f64 * 0.7).cos())).norm() < 1e-15);
        let d = model_dphi(&model, c(9.0), 0.7);
        assert!((d[(0, 0)] + c(3.0 * (3.0f64 * 0.7).sin())).norm() < 1e-14);
    }

    #[test]
    fn removable_point_gives_one() {
        let model = ModelProblem::new(vec![c(PI / 2.0)]);
        assert!((model_phi(&model, c(1.0), 2.3)[(0, 0)] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn shifted_channels() {
        let model = ModelProblem::new(vec![c(PI / 2.0), c(PI)]);
        let p = model_phi(&model, c(5.0), 1.1);
        assert!((p[(0, 0)] - c((2.0f64 * 1.1).cos())).norm() < 1e-14);
        assert!((p[(1, 1)] - c((3.0f64.sqrt() * 1.1).cos())).norm() < 1e-14);
        assert_eq!(p[(0, 1)], c(0.0));
    }

    #[test]
    fn kernel_special_values() {
        let model = ModelProblem::new(vec![c(0.0)]);
        assert!((model_d_kernel(&model, c(0.0), c(0.0), PI)[(0, 0)] - c(PI)).norm() < 1e-14);
        assert!(model_d_kernel(&model, c(1.0), c(4.0), PI)[(0, 0)].norm() < 1e-14);
        let nu = 1.7f64;
        let x = 0.9;
        let same = model_d_kernel(&model, c(nu * nu), c(nu * nu), x)[(0, 0)];
        assert!((same - c(x / 2.0 + (2.0 * nu * x).sin() / (4.0 * nu))).norm() < 1e-14);
    }

    #[test]
    fn coincident_channels_cluster() {
        let model = ModelProblem::new(vec![c(0.0), c(0.0)]);
        let data = model_spectral_data(&model, 4, &Tolerances::default()).unwrap();
        for n in 1..=4 {
            let e = data.get(n, 1);
            assert_eq!(e.multiplicity, 2);
            assert_eq!(e.lambda, c((n * n) as f64));
            assert!((&e.alpha - CMat::identity(2, 2) * c(2.0 / PI)).norm() < 1e-15);
            assert!(data.is_head(data.index(n, 1)) && !data.is_head(data.index(n, 2)));
        }
    }

    #[test]
    fn clusters_across_bands() {
        // shifts 0 and 3: lambda_{1,2} = 1 + 3 = lambda_{2,1}
        let model = ModelProblem::new(vec![c(0.0), c(1.5 * PI)]);
        let data = model_spectral_data(&model, 3, &Tolerances::default()).unwrap();
        let a = data.get(1, 2);
        let b = data.get(2, 1);
        assert_eq!(a.cluster_id, b.cluster_id);
        assert_eq!(a.multiplicity, 2);
        assert!((a.alpha[(0, 0)] - c(2.0 / PI)).norm() < 1e-15 && (a.alpha[(1, 1)] - c(2.0 / PI)).norm() < 1e-15);
        assert_eq!(data.get(1, 1).multiplicity, 1);
    }
}
