//! Recovery of `Q`, `h`, `H` from spectral data by the method of spectral mappings.
//!
//! For each `x` the truncated main equation `psi~(x) = psi(x) (I + R~(x))` is
//! a dense linear system in the row blocks `phi(x, lambda_nqi)`. Its solution
//! feeds the series `eps0(x)`, and `Q = Q~ - 2 eps0'`, `h = h~ - eps0(0)`,
//! `H = H~ + eps0(pi)`.
//!
//! Entries whose spectral parameters coincide (a cluster, or a given value
//! equal to a model value) describe the same function `phi(x, lambda)` and
//! share one unknown. Their weights are summed into one coefficient, which
//! is what makes identical data cancel exactly.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Result, SpecError};
use crate::linalg::{norm1, row_sum_norm, CMat, Factorization, C64, ZERO};
use crate::model::{model_d_diag, ModelProblem};
use crate::spectral::SpectralData;
use crate::tolerances::Tolerances;

/// How `eps0'` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    /// Fourth-order finite differences of `eps0` on the grid.
    #[default]
    FiniteDifference,
    /// Differentiating the series term by term, with `phi'` from a second
    /// solve against the same factorised operator.
    TermWise,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconWarning {
    /// The last band carries more than `tail_warn` of `||eps0||`.
    TailTooLarge { tail: f64, eps0_norm: f64 },
    /// The upper half of `xi_n` has larger l2 mass than the lower half.
    XiTailGrowing { lower: f64, upper: f64 },
}

impl fmt::Display for ReconWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReconWarning::TailTooLarge { tail, eps0_norm } => {
                write!(f, "TailTooLarge: last band contributes {tail:.3e} to eps0 (sup norm {eps0_norm:.3e})")
            }
            ReconWarning::XiTailGrowing { lower, upper } => write!(
                f,
                "xi tail is not decreasing (lower half l2 {lower:.3e}, upper half {upper:.3e}); data may violate the asymptotics"
            ),
        }
    }
}

/// `xi_n` and `Omega = (sum ((n + 1) xi_n)^2)^(1/2)` over the available bands.
#[derive(Debug, Clone, PartialEq)]
pub struct XiReport {
    pub xi: Vec<f64>,
    pub omega: f64,
    /// l2 norms of `xi` over the lower and upper half of the bands.
    pub lower: f64,
    pub upper: f64,
}

impl XiReport {
    pub fn tail_growing(&self) -> bool {
        self.upper > self.lower
    }

    pub fn warning(&self) -> Option<ReconWarning> {
        self.tail_growing().then_some(ReconWarning::XiTailGrowing { lower: self.lower, upper: self.upper })
    }
}

fn check_compatible(data: &SpectralData, model_data: &SpectralData) -> Result<()> {
    if data.m != model_data.m {
        return Err(SpecError::DimensionMismatch(format!("data has m = {}, model data m = {}", data.m, model_data.m)));
    }
    if data.groups != model_data.groups {
        return Err(SpecError::DimensionMismatch("data and model data have different channel groups".into()));
    }
    Ok(())
}

pub fn xi_sequence(data: &SpectralData, model_data: &SpectralData) -> Result<XiReport> {
    check_compatible(data, model_data)?;
    let n_max = data.n_max.min(model_data.n_max);
    let sums = data.group_sums();
    let model_sums = model_data.group_sums();
    let mut xi = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut v = 0.0;
        for q in 1..=data.m {
            v += (data.get(n, q).rho - model_data.get(n, q).rho).norm();
        }
        for (s, g) in data.groups.iter().enumerate() {
            let head = g[0] + 1;
            for &q in g {
                v += (data.get(n, q + 1).rho - data.get(n, head).rho).norm();
                v += (model_data.get(n, q + 1).rho - model_data.get(n, head).rho).norm();
            }
            let div = if n == 0 { 1.0 } else { n as f64 };
            v += row_sum_norm(&(&sums.per_group[n][s] - &model_sums.per_group[n][s])) / div;
        }
        v += row_sum_norm(&(&sums.total[n] - &model_sums.total[n]));
        xi.push(v);
    }
    let omega = xi.iter().enumerate().map(|(n, x)| ((n + 1) as f64 * x).powi(2)).sum::<f64>().sqrt();
    let half = xi.len() / 2;
    let l2 = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(XiReport { lower: l2(&xi[..half]), upper: l2(&xi[half..]), xi, omega })
}

/// One `(n, q, i)` entry: `i = 0` given data, `i = 1` model data.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexNode {
    pub n: usize,
    pub q: usize,
    pub i: usize,
    pub lambda: C64,
    pub rho: C64,
    pub alpha_primed: CMat,
    /// Index of the unknown `phi(x, lambda)` this entry refers to.
    pub unknown: usize,
}

/// A distinct spectral parameter and the summed signed weight `sum (-1)^i alpha'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unknown {
    pub lambda: C64,
    pub weight: CMat,
    nu: Vec<C64>,
}

impl Unknown {
    pub fn is_active(&self) -> bool {
        self.weight.iter().any(|z| *z != ZERO)
    }
}

/// The entries `(n, q, i)` for `n <= n_trunc` in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    pub m: usize,
    pub n_trunc: usize,
    pub nodes: Vec<IndexNode>,
    pub unknowns: Vec<Unknown>,
}

impl IndexSet {
    pub fn new(data: &SpectralData, model_data: &SpectralData, model: &ModelProblem, n_trunc: usize, merge_tol: f64) -> Result<Self> {
        check_compatible(data, model_data)?;
        let avail = data.n_max.min(model_data.n_max);
        if n_trunc > avail {
            return Err(SpecError::TruncationTooLarge { n_trunc, n_max: avail });
        }
        let m = data.m;
        let mut nodes = Vec::with_capacity(2 * m * (n_trunc + 1));
        let mut unknowns: Vec<Unknown> = Vec::new();
        for n in 0..=n_trunc {
            for q in 1..=m {
                for (i, src) in [data, model_data].into_iter().enumerate() {
                    let k = src.index(n, q);
                    let e = &src.entries[k];
                    let alpha_primed = src.alpha_primed(k);
                    let lambda = e.lambda;
                    let found = unknowns.iter().position(|u| (u.lambda - lambda).norm() <= merge_tol * (1.0 + lambda.norm()));
                    let sign = if i == 0 { 1.0 } else { -1.0 };
                    let unknown = match found {
                        Some(b) => {
                            unknowns[b].weight += &alpha_primed * C64::new(sign, 0.0);
                            b
                        }
                        None => {
                            unknowns.push(Unknown { lambda, weight: &alpha_primed * C64::new(sign, 0.0), nu: model.nu(lambda) });
                            unknowns.len() - 1
                        }
                    };
                    nodes.push(IndexNode { n, q, i, lambda, rho: e.rho, alpha_primed, unknown });
                }
            }
        }
        Ok(Self { m, n_trunc, nodes, unknowns })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The `2m` entries of band `n`, ordered by `(q, i)`.
    pub fn band(&self, n: usize) -> &[IndexNode] {
        let w = 2 * self.m;
        &self.nodes[n * w..(n + 1) * w]
    }

    /// Side of the assembled operator.
    pub fn side(&self) -> usize {
        self.m * self.unknowns.len()
    }
}

/// The main equation at one `x`, in the row convention `Phi A = Phi~` with
/// `Phi = [phi_1 ... phi_U]` of shape `m x mU`.
#[derive(Debug, Clone)]
pub struct MainEquationSystem {
    pub x: f64,
    pub a: CMat,
    pub rhs: CMat,
    pub solved: Option<CMat>,
}

impl MainEquationSystem {
    /// Block `b` of the solution: `phi(x, lambda_b)`.
    pub fn solution_block(&self, b: usize) -> Option<CMat> {
        let m = self.rhs.nrows();
        self.solved.as_ref().map(|s| s.columns(b * m, m).into_owned())
    }
}

fn cosines(index: &IndexSet, x: f64) -> Vec<Vec<C64>> {
    index.unknowns.iter().map(|u| u.nu.iter().map(|nu| (nu * x).cos()).collect()).collect()
}

/// Assembles `I + R~(x)` and `psi~(x)` from the closed-form model.
pub fn assemble(index: &IndexSet, x: f64) -> MainEquationSystem {
    let m = index.m;
    let nu = index.unknowns.len();
    let side = m * nu;
    let mut a = CMat::identity(side, side);
    for (b, ub) in index.unknowns.iter().enumerate() {
        if !ub.is_active() {
            continue;
        }
        for (c, uc) in index.unknowns.iter().enumerate() {
            let d = model_d_diag(&uc.nu, &ub.nu, x);
            for r in 0..m {
                for col in 0..m {
                    a[(b * m + r, c * m + col)] += ub.weight[(r, col)] * d[col];
                }
            }
        }
    }
    let cos = cosines(index, x);
    let mut rhs = CMat::zeros(m, side);
    for (b, cb) in cos.iter().enumerate() {
        for q in 0..m {
            rhs[(q, b * m + q)] = cb[q];
        }
    }
    MainEquationSystem { x, a, rhs, solved: None }
}

pub fn build_main_system(
    x: f64,
    data: &SpectralData,
    model_data: &SpectralData,
    model: &ModelProblem,
    n_trunc: usize,
    tol: &Tolerances,
) -> Result<MainEquationSystem> {
    let index = IndexSet::new(data, model_data, model, n_trunc, tol.merge_tol)?;
    Ok(assemble(&index, x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainSolution {
    /// `Phi` of shape `m x mU`.
    pub phi: CMat,
    /// `||Phi~ - Phi A||_F / ||Phi~||_F`.
    pub residual: f64,
    /// 1-norm condition estimate of `A`.
    pub cond: f64,
}

struct Solved {
    solution: MainSolution,
    factor: Factorization,
}

fn solve_factored(system: &MainEquationSystem, tol: &Tolerances) -> Result<Solved> {
    let t = system.a.transpose();
    let norm = norm1(&t);
    let factor = Factorization::new(t);
    let singular = || SpecError::MainEquationSingular { x: system.x, cond: f64::INFINITY };
    if !factor.is_invertible() {
        return Err(singular());
    }
    let cond = norm * factor.inverse_norm1_estimate();
    if !cond.is_finite() || cond > tol.main_cond {
        return Err(SpecError::MainEquationSingular { x: system.x, cond });
    }
    let phi = factor.solve(&system.rhs.transpose()).ok_or_else(singular)?.transpose();
    let scale = system.rhs.norm().max(f64::MIN_POSITIVE);
    let residual = (&system.rhs - &phi * &system.a).norm() / scale;
    if !(residual <= tol.main_residual) {
        return Err(SpecError::MainEquationSingular { x: system.x, cond });
    }
    Ok(Solved { solution: MainSolution { phi, residual, cond }, factor })
}

/// Solves the dense system; fails when the condition estimate exceeds
/// `main_cond` or the residual exceeds `main_residual`.
pub fn solve_main_equation(system: &mut MainEquationSystem, tol: &Tolerances) -> Result<MainSolution> {
    let s = solve_factored(system, tol)?.solution;
    system.solved = Some(s.phi.clone());
    Ok(s)
}

fn block(phi: &CMat, b: usize, m: usize) -> CMat {
    phi.columns(b * m, m).into_owned()
}

/// `a * diag(d)`.
fn scale_cols(a: &CMat, d: &[C64]) -> CMat {
    let mut out = a.clone();
    for (j, dj) in d.iter().enumerate() {
        let mut col = out.column_mut(j);
        col *= *dj;
    }
    out
}

/// Values at one grid node.
#[derive(Debug, Clone)]
struct PointResult {
    eps0: CMat,
    deps0: Option<CMat>,
    last_band: f64,
    residual: f64,
    cond: f64,
}

fn solve_point(index: &IndexSet, x: f64, tol: &Tolerances, mode: DerivativeMode) -> Result<PointResult> {
    let m = index.m;
    let system = assemble(index, x);
    let Solved { solution, factor } = solve_factored(&system, tol)?;
    let phi = &solution.phi;
    let cos = cosines(index, x);
    // paired form: (phi0 - phi1) a0 c0 + phi1 a0 (c0 - c1) + phi1 (a0 - a1) c1
    let mut eps0 = CMat::zeros(m, m);
    let mut last_band = CMat::zeros(m, m);
    for n in 0..=index.n_trunc {
        let mut band = CMat::zeros(m, m);
        for pair in index.band(n).chunks(2) {
            let (g, t) = (&pair[0], &pair[1]);
            let (p0, p1) = (block(phi, g.unknown, m), block(phi, t.unknown, m));
            let (c0, c1) = (&cos[g.unknown], &cos[t.unknown]);
            let dc: Vec<C64> = c0.iter().zip(c1).map(|(a, b)| a - b).collect();
            band += scale_cols(&((&p0 - &p1) * &g.alpha_primed), c0);
            band += scale_cols(&(&p1 * &g.alpha_primed), &dc);
            band += scale_cols(&(&p1 * (&g.alpha_primed - &t.alpha_primed)), c1);
        }
        eps0 += &band;
        if n == index.n_trunc {
            last_band = band;
        }
    }
    let deps0 = match mode {
        DerivativeMode::FiniteDifference => None,
        DerivativeMode::TermWise => {
            // Phi' A = Phi~' - eps0 Phi~, since d/dx D~(x, l, mu) = phi~*(x, mu) phi~(x, l)
            let side = index.side();
            let mut rhs = CMat::zeros(m, side);
            for (b, u) in index.unknowns.iter().enumerate() {
                let dtilde: Vec<C64> = u.nu.iter().map(|nu| -nu * (nu * x).sin()).collect();
                let mut blk = CMat::from_diagonal(&nalgebra::DVector::from_vec(dtilde));
                blk -= scale_cols(&eps0, &cos[b]);
                rhs.columns_mut(b * m, m).copy_from(&blk);
            }
            let singular = || SpecError::MainEquationSingular { x, cond: f64::INFINITY };
            let dphi = factor.solve(&rhs.transpose()).ok_or_else(singular)?.transpose();
            let mut d = CMat::zeros(m, m);
            for (b, u) in index.unknowns.iter().enumerate() {
                if !u.is_active() {
                    continue;
                }
                let dc: Vec<C64> = u.nu.iter().map(|nu| -nu * (nu * x).sin()).collect();
                d += scale_cols(&(block(&dphi, b, m) * &u.weight), &cos[b]);
                d += scale_cols(&(block(phi, b, m) * &u.weight), &dc);
            }
            Some(d)
        }
    };
    Ok(PointResult { eps0, deps0, last_band: row_sum_norm(&last_band), residual: solution.residual, cond: solution.cond })
}

/// Weights of the first derivative at `x0` from the values at `xs`.
fn derivative_weights(xs: &[f64], x0: f64) -> Vec<f64> {
    let k = xs.len();
    (0..k)
        .map(|j| {
            let mut total = 0.0;
            for i in (0..k).filter(|&i| i != j) {
                let mut term = 1.0 / (xs[j] - xs[i]);
                for l in (0..k).filter(|&l| l != j && l != i) {
                    term *= (x0 - xs[l]) / (xs[j] - xs[l]);
                }
                total += term;
            }
            total
        })
        .collect()
}

/// Five-point derivative on a possibly non-uniform grid, one-sided near the ends.
pub fn grid_derivative(grid: &[f64], values: &[CMat]) -> Vec<CMat> {
    let n = grid.len();
    let width = 5.min(n);
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(n - width);
            let xs = &grid[start..start + width];
            let w = derivative_weights(xs, grid[i]);
            let mut acc = CMat::zeros(values[i].nrows(), values[i].ncols());
            for (k, wk) in w.iter().enumerate() {
                acc += &values[start + k] * C64::new(*wk, 0.0);
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub grid: Vec<f64>,
    pub q_rec: Vec<CMat>,
    pub h_rec: CMat,
    pub big_h_rec: CMat,
    pub eps0: Vec<CMat>,
    /// Main-equation residual per grid node.
    pub residuals: Vec<f64>,
    /// Condition estimate per grid node.
    pub conds: Vec<f64>,
    pub truncation: usize,
    pub xi: XiReport,
    /// `sup_x ||last band contribution to eps0(x)||`, the truncation indicator.
    pub tail: f64,
    pub eps0_norm: f64,
    pub derivative: DerivativeMode,
    pub warnings: Vec<ReconWarning>,
}

impl ReconstructionResult {
    /// `Omega` over the available prefix.
    pub fn omega(&self) -> f64 {
        self.xi.omega
    }

    /// The recovered problem, for re-running the forward map.
    pub fn to_problem(&self, selfadjoint_hint: bool) -> Result<crate::problem::BoundaryProblem> {
        crate::problem::BoundaryProblem::new(
            self.grid.clone(),
            self.q_rec.clone(),
            self.h_rec.clone(),
            self.big_h_rec.clone(),
            selfadjoint_hint,
        )
    }
}

/// Runs the main equation at every grid node (in parallel, collected in
/// grid order) and assembles `Q`, `h`, `H`.
pub fn reconstruct(
    data: &SpectralData,
    model: &ModelProblem,
    model_data: &SpectralData,
    n_trunc: usize,
    grid: &[f64],
    tol: &Tolerances,
    mode: DerivativeMode,
) -> Result<ReconstructionResult> {
    if grid.len() < 5 {
        return Err(SpecError::DimensionMismatch(format!("grid has {} nodes, at least 5 required", grid.len())));
    }
    if grid[0].abs() > 1e-12 || (grid[grid.len() - 1] - PI).abs() > 1e-12 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpecError::DimensionMismatch("grid must increase from 0 to pi".into()));
    }
    let xi = xi_sequence(data, model_data)?;
    let index = IndexSet::new(data, model_data, model, n_trunc, tol.merge_tol)?;
    let points: Vec<Result<PointResult>> = grid.par_iter().map(|&x| solve_point(&index, x, tol, mode)).collect();
    let points: Vec<PointResult> = points.into_iter().collect::<Result<_>>()?;
    let eps0: Vec<CMat> = points.iter().map(|p| p.eps0.clone()).collect();
    let deps0 = match mode {
        DerivativeMode::FiniteDifference => grid_derivative(grid, &eps0),
        DerivativeMode::TermWise => points.iter().map(|p| p.deps0.clone().expect("term-wise derivative")).collect(),
    };
    let q_model = model.potential();
    let q_rec = deps0.iter().map(|d| &q_model - d * C64::new(2.0, 0.0)).collect();
    let h_rec = -eps0[0].clone();
    let big_h_rec = eps0[eps0.len() - 1].clone();
    let tail = points.iter().map(|p| p.last_band).fold(0.0, f64::max);
    let eps0_norm = eps0.iter().map(row_sum_norm).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if let Some(w) = xi.warning() {
        warnings.push(w);
    }
    if tail > tol.tail_warn * eps0_norm {
        warnings.push(ReconWarning::TailTooLarge { tail, eps0_norm });
    }
    Ok(ReconstructionResult {
        grid: grid.to_vec(),
        q_rec,
        h_rec,
        big_h_rec,
        eps0,
        residuals: points.iter().map(|p| p.residual).collect(),
        conds: points.iter().map(|p| p.cond).collect(),
        truncation: n_trunc,
        xi,
        tail,
        eps0_norm,
        derivative: mode,
        warnings,
    })
}
