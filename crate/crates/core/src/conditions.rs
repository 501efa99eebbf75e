//! Numerical checks of the characterization conditions on finite spectral data.
//!
//! (A) asymptotics, (R) rank equals multiplicity, (S) self-adjointness of the
//! data, (C) completeness of the cosine system on a finite section, and the
//! structural identities that tie data back to a known problem.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{max_abs, numerical_rank, range_basis, row_sum_norm, svd, CMat, C64};
use crate::model::cos_product_integral;
use crate::ode::{boundary_form_v, integrate_solutions, product_integral, weyl_matrix, weyl_matrix_dual, MatrixSolutionSample, Solution};
use crate::problem::BoundaryProblem;
use crate::spectral::SpectralData;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

/// Fewest bands for which the tail comparison of (A) is attempted.
pub const MIN_BANDS_A: usize = 8;

/// Residuals below this are treated as converged noise by the tail rule.
pub const A_NOISE_FLOOR: f64 = 1e-8;

/// One residual sequence of (A), indexed by `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSequence {
    pub name: &'static str,
    pub values: Vec<f64>,
    /// l2 norm over `n < n_max / 2` and over `n >= n_max / 2`.
    pub lower_tail: f64,
    pub upper_tail: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AReport {
    pub verdict: Verdict,
    pub sequences: Vec<ResidualSequence>,
    /// `max ||alpha_nq||` in the row-sum norm, the bound of Assumption 2.
    pub max_alpha_norm: f64,
    /// The finite-data convention used for "square summable".
    pub rule: String,
}

fn indicator(m: usize, group: &[usize]) -> CMat {
    CMat::from_fn(m, m, |i, j| if i == j && group.contains(&i) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

/// Residuals of the four asymptotic formulas:
/// `n (rho_nq - n - omega_q / (pi n))`, `alpha_n^(s) - (2/pi) I^(s)`,
/// `n (alpha_n - (2/pi) I)` and `(I - I^(s)) alpha_nq`.
/// Matrix residuals use the Frobenius norm so that verdicts do not depend on the basis.
pub fn check_a(data: &SpectralData, tol: &Tolerances) -> AReport {
    let m = data.m;
    let sums = data.group_sums();
    let max_alpha_norm = data.max_alpha_norm();
    let rule = format!(
        "upper-half l2 tail <= {} x lower-half l2 tail + {:e}, over n = 1..n_max",
        tol.tail_growth_factor, A_NOISE_FLOOR
    );
    let mut rho = Vec::new();
    let mut group = Vec::new();
    let mut total = Vec::new();
    let mut cross = Vec::new();
    for n in 1..=data.n_max {
        let nf = n as f64;
        let r = (1..=m)
            .map(|q| {
                let e = data.get(n, q);
                (nf * (e.rho - nf - data.omega[q - 1] / (PI * nf))).norm()
            })
            .fold(0.0, f64::max);
        rho.push(r);
        let g = data
            .groups
            .iter()
            .enumerate()
            .map(|(s, js)| (&sums.per_group[n][s] - indicator(m, js) * C64::new(2.0 / PI, 0.0)).norm())
            .fold(0.0, f64::max);
        group.push(g);
        total.push(nf * (&sums.total[n] - CMat::identity(m, m) * C64::new(2.0 / PI, 0.0)).norm());
        let c = data
            .groups
            .iter()
            .flat_map(|js| {
                let proj = CMat::identity(m, m) - indicator(m, js);
                js.iter().map(move |&q| (&proj * &data.get(n, q + 1).alpha).norm()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);
        cross.push(c);
    }
    let enough = data.n_max >= MIN_BANDS_A;
    let sequences: Vec<ResidualSequence> = [("rho", rho), ("group_sum", group), ("total_sum", total), ("off_group", cross)]
        .into_iter()
        .map(|(name, values)| {
            let half = data.n_max / 2;
            let l2 = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>().sqrt();
            // values[k] belongs to n = k + 1
            let split = half.saturating_sub(1).min(values.len());
            let lower_tail = l2(&values[..split]);
            let upper_tail = l2(&values[split..]);
            let verdict = if !enough {
                Verdict::Indeterminate
            } else {
                Verdict::from_bool(upper_tail <= tol.tail_growth_factor * lower_tail + A_NOISE_FLOOR)
            };
            ResidualSequence { name, values, lower_tail, upper_tail, verdict }
        })
        .collect();
    let verdict = if !enough {
        Verdict::Indeterminate
    } else {
        Verdict::from_bool(max_alpha_norm.is_finite() && sequences.iter().all(|s| s.verdict == Verdict::Pass))
    };
    AReport { verdict, sequences, max_alpha_norm, rule }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub n: usize,
    pub q: usize,
    pub cluster_id: usize,
    pub rank: usize,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RReport {
    pub verdict: Verdict,
    pub rows: Vec<RankRow>,
    /// `(n, q)` of the first head whose rank differs from its multiplicity.
    pub first_failure: Option<(usize, usize)>,
}

/// Numerical rank of every cluster head against its multiplicity.
pub fn check_r(data: &SpectralData, tol: &Tolerances) -> RReport {
    let rows: Vec<RankRow> = (0..data.entries.len())
        .filter(|&k| data.is_head(k))
        .map(|k| {
            let e = &data.entries[k];
            RankRow { n: e.n, q: e.q, cluster_id: e.cluster_id, rank: numerical_rank(&e.alpha, tol.rank_rel), multiplicity: e.multiplicity }
        })
        .collect();
    let first_failure = rows.iter().find(|r| r.rank != r.multiplicity).map(|r| (r.n, r.q));
    RReport { verdict: Verdict::from_bool(first_failure.is_none()), rows, first_failure }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SReport {
    pub verdict: Verdict,
    /// `max |Im lambda| / (1 + |lambda|)`.
    pub max_imag: f64,
    /// `max ||alpha - alpha^dagger||`.
    pub hermitian_defect: f64,
    /// Smallest eigenvalue of any `(alpha + alpha^dagger) / 2`.
    pub min_eigenvalue: f64,
}

pub fn check_s(data: &SpectralData, tol: &Tolerances) -> SReport {
    let mut max_imag = 0.0f64;
    let mut hermitian_defect = 0.0f64;
    let mut min_eigenvalue = f64::INFINITY;
    for e in &data.entries {
        max_imag = max_imag.max(e.lambda.im.abs() / (1.0 + e.lambda.norm()));
        hermitian_defect = hermitian_defect.max(max_abs(&(&e.alpha - e.alpha.adjoint())));
        let sym = (&e.alpha + e.alpha.adjoint()) * C64::new(0.5, 0.0);
        let low = sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        min_eigenvalue = min_eigenvalue.min(low);
    }
    let t = tol.selfadjoint_tol;
    let ok = max_imag <= t && hermitian_defect <= t && min_eigenvalue >= -t;
    SReport { verdict: Verdict::from_bool(ok), max_imag, hermitian_defect, min_eigenvalue }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CReport {
    pub verdict: Verdict,
    pub n_bands: usize,
    /// Number of functions `cos(rho_nq x) E_nq^(i)` in the section.
    pub functions: usize,
    /// Smallest singular value of the Gram matrix of the normalised system.
    pub sigma_min: f64,
}

/// Finite-section completeness proxy: the Gram matrix of
/// `{cos(rho_nq x) e : e in an orthonormal basis of Ran alpha'_nq, n <= n_bands}`
/// in `L2((0, pi), C^m)`, with each function scaled to unit norm.
///
/// A vanishing `sigma_min` certifies dependence; a positive one is only evidence.
pub fn check_c(data: &SpectralData, n_bands: usize, tol: &Tolerances) -> CReport {
    if n_bands > data.n_max {
        return CReport { verdict: Verdict::Indeterminate, n_bands, functions: 0, sigma_min: f64::NAN };
    }
    let mut funcs: Vec<(C64, Vec<C64>)> = Vec::new();
    for k in 0..(n_bands + 1) * data.m {
        if !data.is_head(k) {
            continue;
        }
        let e = &data.entries[k];
        let basis = range_basis(&e.alpha, tol.rank_rel);
        for j in 0..basis.ncols() {
            funcs.push((e.rho, basis.column(j).iter().cloned().collect()));
        }
    }
    let n = funcs.len();
    let mut gram = CMat::from_fn(n, n, |a, b| {
        let (ra, ea) = &funcs[a];
        let (rb, eb) = &funcs[b];
        let dot: C64 = ea.iter().zip(eb.iter()).map(|(x, y)| x.conj() * y).sum();
        cos_product_integral(ra.conj(), *rb, PI) * dot
    });
    let scale: Vec<f64> = (0..n).map(|a| 1.0 / gram[(a, a)].re.abs().sqrt()).collect();
    for a in 0..n {
        for b in 0..n {
            gram[(a, b)] *= scale[a] * scale[b];
        }
    }
    let sigma_min = if n == 0 { 0.0 } else { *svd(&gram).s.last().unwrap() };
    CReport { verdict: Verdict::from_bool(n > 0 && sigma_min >= tol.gram_sigma_min), n_bands, functions: n, sigma_min }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    /// `max ||V(phi(., lambda_nq)) alpha_nq||`.
    pub kernel: f64,
    /// `max ||alpha_0 int phi* phi alpha_0 - alpha_0||` over cluster heads.
    pub orthonormal: f64,
    /// `max ||alpha_0 int phi*(., lambda_0) phi(., lambda_1) alpha_1||` over distinct heads.
    pub orthogonal: f64,
    /// `max ||M - M*|| / max(1, ||M||)` over the sample points.
    pub weyl_dual: f64,
    pub bands_checked: usize,
    pub weyl_samples: usize,
}

/// Bands used by the structural identities.
pub const STRUCTURAL_BANDS: usize = 8;
/// Points at which `M` and `M*` are compared.
pub const WEYL_SAMPLES: usize = 20;

/// Evaluates the kernel identity, the two orthogonality relations and
/// `M = M*` against the problem the data came from.
///
/// Integrals run on the grid refined four times so that quadrature error
/// stays below the identities' own accuracy for the checked bands.
pub fn check_structural(problem: &BoundaryProblem, data: &SpectralData, tol: &Tolerances) -> Result<StructuralReport> {
    let fine = problem.refined(4);
    let bands = data.n_max.min(STRUCTURAL_BANDS);
    let heads: Vec<usize> = (0..(bands + 1) * data.m).filter(|&k| data.is_head(k)).collect();
    let samples: Vec<MatrixSolutionSample> =
        heads.par_iter().map(|&k| integrate_solutions(&fine, data.entries[k].lambda)).collect::<Result<_>>()?;
    let last = fine.grid().len() - 1;
    let mut kernel = 0.0f64;
    let mut orthonormal = 0.0f64;
    let mut orthogonal = 0.0f64;
    for (a, &ka) in heads.iter().enumerate() {
        let alpha0 = &data.entries[ka].alpha;
        let v = boundary_form_v(&fine, &samples[a], Solution::Phi);
        kernel = kernel.max(row_sum_norm(&(v * alpha0)));
        for (b, &kb) in heads.iter().enumerate() {
            let alpha1 = &data.entries[kb].alpha;
            let integral = product_integral(&samples[a], &samples[b], last);
            let val = alpha0 * integral * alpha1;
            if a == b {
                orthonormal = orthonormal.max(row_sum_norm(&(val - alpha0)));
            } else {
                orthogonal = orthogonal.max(row_sum_norm(&val));
            }
        }
    }
    let points = weyl_points(data);
    let diffs: Vec<f64> = points
        .par_iter()
        .map(|&l| {
            let m = weyl_matrix(problem, l, tol.near_singular_cond)?.m;
            let ms = weyl_matrix_dual(problem, l, tol.near_singular_cond)?.m;
            Ok(row_sum_norm(&(&m - ms)) / row_sum_norm(&m).max(1.0))
        })
        .collect::<Result<_>>()?;
    Ok(StructuralReport {
        kernel,
        orthonormal,
        orthogonal,
        weyl_dual: diffs.into_iter().fold(0.0, f64::max),
        bands_checked: bands,
        weyl_samples: points.len(),
    })
}

/// Deterministic sample points kept at distance at least 0.25 from every eigenvalue.
fn weyl_points(data: &SpectralData) -> Vec<C64> {
    let mut out = Vec::with_capacity(WEYL_SAMPLES);
    let mut k = 0usize;
    while out.len() < WEYL_SAMPLES && k < 10 * WEYL_SAMPLES {
        let base = C64::new(-3.0 + 2.7 * k as f64, 0.6 * ((k % 5) as f64 - 2.0));
        if data.entries.iter().all(|e| (e.lambda - base).norm() >= 0.25) {
            out.push(base);
        }
        k += 1;
    }
    out
}

/// Which conditions a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    A,
    R,
    S,
    C,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Condition::A),
            "R" => Some(Condition::R),
            "S" => Some(Condition::S),
            "C" => Some(Condition::C),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<AReport>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<RReport>,
    #[serde(rename = "S", skip_serializing_if = "Option::is_none")]
    pub s: Option<SReport>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<CReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structural: Option<StructuralReport>,
    /// `max ||alpha_nq||`, always populated.
    pub assumption2_bound: f64,
}

impl ConditionReport {
    pub fn verdicts(&self) -> Vec<(&'static str, Verdict)> {
        let mut v = Vec::new();
        if let Some(a) = &self.a {
            v.push(("A", a.verdict));
        }
        if let Some(r) = &self.r {
            v.push(("R", r.verdict));
        }
        if let Some(s) = &self.s {
            v.push(("S", s.verdict));
        }
        if let Some(c) = &self.c {
            v.push(("C", c.verdict));
        }
        v
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts().iter().all(|(_, v)| *v == Verdict::Pass)
    }
}

/// Runs the requested checks; (C) uses every available band.
pub fn check_conditions(data: &SpectralData, which: &[Condition], tol: &Tolerances) -> ConditionReport {
    let want = |c: Condition| which.contains(&c);
    ConditionReport {
        a: want(Condition::A).then(|| check_a(data, tol)),
        r: want(Condition::R).then(|| check_r(data, tol)),
        s: want(Condition::S).then(|| check_s(data, tol)),
        c: want(Condition::C).then(|| check_c(data, data.n_max, tol)),
        structural: None,
        assumption2_bound: data.max_alpha_norm(),
    }
}
