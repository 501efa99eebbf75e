//! Fundamental matrix solutions, boundary forms, the characteristic function
//! and the Weyl matrix.
//!
//! The first-order system `Y' = A(x) Y`, `A = [[0, I], [Q(x) - lambda, 0]]`,
//! is advanced with the fourth-order Magnus scheme. `Q` is linear on each
//! substep, so the two Gauss-point samples reduce to the midpoint value and
//! the slope:
//!
//! `Omega = [[-(h^3/12) Q', h I], [h (Q_mid - lambda), (h^3/12) Q']]`.
//!
//! `exp(Omega)` is taken as `exp(E/2) exp(Omega_0) exp(E/2)` with `E` the
//! block-diagonal slope term. This symmetric split keeps fourth order, and
//! `exp(Omega_0)` has the closed form `[[C, h S], [h (Q_mid - lambda) S, C]]`
//! with `C`, `S` the cosh/sinh series of `X = h^2 (Q_mid - lambda)`, so a step
//! needs only `m x m` products. The step is exact for piecewise constant
//! potentials.

use crate::error::{Result, SpecError};
use crate::linalg::{condition_number, row_sum_norm, CMat, C64, ONE, ZERO};
use crate::problem::BoundaryProblem;

/// Substep control for the Magnus integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Substeps per grid interval regardless of lambda.
    pub min_substeps: usize,
    /// Upper bound for `h * sqrt(|lambda|)` on a substep.
    pub max_phase_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { min_substeps: 2, max_phase_step: 0.5 }
    }
}

impl IntegratorConfig {
    /// The same scheme with every substep halved.
    pub fn halved(self) -> Self {
        Self { min_substeps: self.min_substeps * 2, max_phase_step: self.max_phase_step / 2.0 }
    }
}

/// Values of `phi`, `S` and the dual `phi*`, `S*` on the problem grid for one lambda.
#[derive(Debug, Clone)]
pub struct MatrixSolutionSample {
    pub lambda: C64,
    pub grid: Vec<f64>,
    pub phi: Vec<CMat>,
    pub dphi: Vec<CMat>,
    pub s: Vec<CMat>,
    pub ds: Vec<CMat>,
    pub phistar: Vec<CMat>,
    pub dphistar: Vec<CMat>,
    pub sstar: Vec<CMat>,
    pub dsstar: Vec<CMat>,
}

/// `phi`, `S` and their derivatives at `x = pi`.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub lambda: C64,
    pub phi: CMat,
    pub dphi: CMat,
    pub s: CMat,
    pub ds: CMat,
}

/// Which fundamental solution a boundary form is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solution {
    Phi,
    S,
}

#[derive(Debug, Clone)]
struct Interval {
    len: f64,
    // row-major m x m
    q_left: Vec<C64>,
    slope: Vec<C64>,
    sloped: bool,
    q_norm: f64,
}

/// Precomputed interval data of one problem; evaluates solutions for any lambda.
#[derive(Debug, Clone)]
pub struct Propagator {
    m: usize,
    grid: Vec<f64>,
    h: CMat,
    big_h: CMat,
    intervals: Vec<Interval>,
    config: IntegratorConfig,
}

fn row_major(a: &CMat) -> Vec<C64> {
    let (r, c) = a.shape();
    (0..r * c).map(|i| a[(i / c, i % c)]).collect()
}

impl Propagator {
    pub fn new(problem: &BoundaryProblem) -> Self {
        Self::with_config(problem, IntegratorConfig::default())
    }

    pub fn with_config(problem: &BoundaryProblem, config: IntegratorConfig) -> Self {
        let grid = problem.grid().to_vec();
        let q = problem.q();
        let intervals = (0..grid.len() - 1)
            .map(|i| {
                let len = grid[i + 1] - grid[i];
                let slope = (&q[i + 1] - &q[i]) / C64::new(len, 0.0);
                Interval {
                    len,
                    q_left: row_major(&q[i]),
                    sloped: slope.iter().any(|z| *z != ZERO),
                    slope: row_major(&slope),
                    q_norm: row_sum_norm(&q[i]).max(row_sum_norm(&q[i + 1])),
                }
            })
            .collect();
        Self { m: problem.m(), grid, h: problem.h().clone(), big_h: problem.big_h().clone(), intervals, config }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn substeps(&self, iv: &Interval, lambda: C64) -> usize {
        let phase = iv.len * (lambda.norm() + iv.q_norm).sqrt();
        let by_phase = (phase / self.config.max_phase_step).ceil() as usize;
        self.config.min_substeps.max(by_phase).max(1)
    }

    /// Advances the `2m x 2m` state `y = [[phi, S], [phi', S']]` across every
    /// interval, calling `visit(node_index, state)` at each grid node
    /// (including node 0) with the state in row-major order.
    fn run<F>(&self, lambda: C64, y: &mut [C64], visit: F) -> Result<()>
    where
        F: FnMut(usize, &[C64]) -> Result<()>,
    {
        match self.m {
            1 => self.run_fixed::<1, 2, F>(lambda, y, visit),
            2 => self.run_fixed::<2, 4, F>(lambda, y, visit),
            3 => self.run_fixed::<3, 6, F>(lambda, y, visit),
            4 => self.run_fixed::<4, 8, F>(lambda, y, visit),
            _ => self.run_general(lambda, y, visit),
        }
    }

    fn run_fixed<const M: usize, const N: usize, F>(&self, lambda: C64, y: &mut [C64], mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &[C64]) -> Result<()>,
    {
        use fixed::{add, cosh_sinh, exp, mul, scale, Rows, Sq};
        let mut top: Rows<M, N> = [[ZERO; N]; M];
        let mut bot: Rows<M, N> = [[ZERO; N]; M];
        for r in 0..M {
            top[r].copy_from_slice(&y[r * N..(r + 1) * N]);
            bot[r].copy_from_slice(&y[(M + r) * N..(M + r + 1) * N]);
        }
        let store = |y: &mut [C64], top: &Rows<M, N>, bot: &Rows<M, N>| {
            for r in 0..M {
                y[r * N..(r + 1) * N].copy_from_slice(&top[r]);
                y[(M + r) * N..(M + r + 1) * N].copy_from_slice(&bot[r]);
            }
        };
        visit(0, y)?;
        for (idx, iv) in self.intervals.iter().enumerate() {
            let sub = self.substeps(iv, lambda);
            let hs = iv.len / sub as f64;
            let mut q_left: Sq<M> = [[ZERO; M]; M];
            let mut slope: Sq<M> = [[ZERO; M]; M];
            for r in 0..M {
                q_left[r].copy_from_slice(&iv.q_left[r * M..(r + 1) * M]);
                slope[r].copy_from_slice(&iv.slope[r * M..(r + 1) * M]);
            }
            let half_corr = hs * hs * hs / 24.0;
            let gates = iv.sloped.then(|| (exp(&scale(&slope, -half_corr)), exp(&scale(&slope, half_corr))));
            for j in 0..sub {
                let xm = (j as f64 + 0.5) * hs;
                let mut a = add(&q_left, &scale(&slope, xm));
                for (r, row) in a.iter_mut().enumerate() {
                    row[r] -= lambda;
                }
                let (c, s) = cosh_sinh(&scale(&a, hs * hs));
                let hs_s = scale(&s, hs);
                let ha_s = scale(&mul(&a, &s), hs);
                if let Some((gm, gp)) = &gates {
                    top = mul(gm, &top);
                    bot = mul(gp, &bot);
                }
                let new_top = fixed::add_rows(&mul(&c, &top), &mul(&hs_s, &bot));
                let new_bot = fixed::add_rows(&mul(&ha_s, &top), &mul(&c, &bot));
                top = new_top;
                bot = new_bot;
                if let Some((gm, gp)) = &gates {
                    top = mul(gm, &top);
                    bot = mul(gp, &bot);
                }
            }
            let finite = |rows: &Rows<M, N>| rows.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite());
            if !(finite(&top) && finite(&bot)) {
                return Err(SpecError::NonFiniteState { node: idx + 1, lambda: format!("{lambda}") });
            }
            store(y, &top, &bot);
            visit(idx + 1, y)?;
        }
        Ok(())
    }

    /// The same step as `run_fixed` on heap matrices, for large `m`.
    fn run_general<F>(&self, lambda: C64, y: &mut [C64], mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &[C64]) -> Result<()>,
    {
        let m = self.m;
        let k = 2 * m;
        let mut top = CMat::from_fn(m, k, |r, c| y[r * k + c]);
        let mut bot = CMat::from_fn(m, k, |r, c| y[(m + r) * k + c]);
        visit(0, y)?;
        for (idx, iv) in self.intervals.iter().enumerate() {
            let sub = self.substeps(iv, lambda);
            let hs = iv.len / sub as f64;
            let q_left = CMat::from_row_slice(m, m, &iv.q_left);
            let slope = CMat::from_row_slice(m, m, &iv.slope);
            let half_corr = hs * hs * hs / 24.0;
            let gates = iv.sloped.then(|| ((&slope * C64::new(-half_corr, 0.0)).exp(), (&slope * C64::new(half_corr, 0.0)).exp()));
            for j in 0..sub {
                let xm = (j as f64 + 0.5) * hs;
                let a = &q_left + &slope * C64::new(xm, 0.0) - CMat::identity(m, m) * lambda;
                let (c, s) = cosh_sinh_dyn(&(&a * C64::new(hs * hs, 0.0)));
                let hs_s = &s * C64::new(hs, 0.0);
                let ha_s = &a * &s * C64::new(hs, 0.0);
                if let Some((gm, gp)) = &gates {
                    top = gm * &top;
                    bot = gp * &bot;
                }
                let new_top = &c * &top + &hs_s * &bot;
                let new_bot = &ha_s * &top + &c * &bot;
                top = new_top;
                bot = new_bot;
                if let Some((gm, gp)) = &gates {
                    top = gm * &top;
                    bot = gp * &bot;
                }
            }
            if !(crate::linalg::is_finite(&top) && crate::linalg::is_finite(&bot)) {
                return Err(SpecError::NonFiniteState { node: idx + 1, lambda: format!("{lambda}") });
            }
            for r in 0..m {
                for c in 0..k {
                    y[r * k + c] = top[(r, c)];
                    y[(m + r) * k + c] = bot[(r, c)];
                }
            }
            visit(idx + 1, y)?;
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<C64> {
        // columns [phi | S] stacked over [value; derivative]
        let m = self.m;
        let k = 2 * m;
        let mut y = vec![ZERO; 2 * m * k];
        for r in 0..m {
            y[r * k + r] = ONE;
            y[(m + r) * k + m + r] = ONE;
            for c in 0..m {
                y[(m + r) * k + c] = self.h[(r, c)];
            }
        }
        y
    }

    fn split(&self, y: &[C64]) -> (CMat, CMat, CMat, CMat) {
        let m = self.m;
        let k = 2 * m;
        let blk = |r0: usize, c0: usize| CMat::from_fn(m, m, |r, c| y[(r0 + r) * k + c0 + c]);
        (blk(0, 0), blk(m, 0), blk(0, m), blk(m, m))
    }

    /// `phi, phi', S, S'` at `x = pi`.
    pub fn endpoint(&self, lambda: C64) -> Result<Endpoint> {
        check_lambda(lambda)?;
        let mut y = self.initial_state();
        self.run(lambda, &mut y, |_, _| Ok(()))?;
        let (phi, dphi, s, ds) = self.split(&y);
        Ok(Endpoint { lambda, phi, dphi, s, ds })
    }

    /// `phi, phi', S, S'` at every grid node.
    pub fn nodes(&self, lambda: C64) -> Result<[Vec<CMat>; 4]> {
        check_lambda(lambda)?;
        let n = self.grid.len();
        let mut out: [Vec<CMat>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
        let mut y = self.initial_state();
        self.run(lambda, &mut y, |_, state| {
            let (a, b, c, d) = self.split(state);
            out[0].push(a);
            out[1].push(b);
            out[2].push(c);
            out[3].push(d);
            Ok(())
        })?;
        Ok(out)
    }

    /// `V(Y) = Y'(pi) + H Y(pi)` applied to `phi` or `S`.
    pub fn boundary_v(&self, end: &Endpoint, which: Solution) -> CMat {
        match which {
            Solution::Phi => &end.dphi + &self.big_h * &end.phi,
            Solution::S => &end.ds + &self.big_h * &end.s,
        }
    }

    /// `Delta(lambda) = det V(phi)`.
    pub fn char_det(&self, lambda: C64) -> Result<C64> {
        let end = self.endpoint(lambda)?;
        Ok(self.boundary_v(&end, Solution::Phi).determinant())
    }

    /// `M(lambda) = -(V(phi))^{-1} V(S)` with the condition number of `V(phi)`.
    pub fn weyl_matrix(&self, lambda: C64, max_cond: f64) -> Result<WeylValue> {
        let end = self.endpoint(lambda)?;
        weyl_from_endpoint(self, &end, max_cond)
    }
}

/// A Weyl matrix value together with the conditioning of `V(phi)`.
#[derive(Debug, Clone)]
pub struct WeylValue {
    pub m: CMat,
    pub cond: f64,
}

pub(crate) fn weyl_from_endpoint(p: &Propagator, end: &Endpoint, max_cond: f64) -> Result<WeylValue> {
    let vphi = p.boundary_v(end, Solution::Phi);
    let vs = p.boundary_v(end, Solution::S);
    let cond = condition_number(&vphi);
    if !(cond <= max_cond) {
        return Err(SpecError::NearSingular { lambda: format!("{}", end.lambda), cond });
    }
    let lu = vphi.lu();
    let sol = lu
        .solve(&vs)
        .ok_or_else(|| SpecError::NearSingular { lambda: format!("{}", end.lambda), cond: f64::INFINITY })?;
    Ok(WeylValue { m: -sol, cond })
}

fn check_lambda(lambda: C64) -> Result<()> {
    if lambda.re.is_finite() && lambda.im.is_finite() {
        Ok(())
    } else {
        Err(SpecError::InvalidProblem(format!("lambda {lambda} is not finite")))
    }
}

/// Integrates `phi`, `S` and the dual `phi*`, `S*` over the problem grid.
pub fn integrate_solutions(problem: &BoundaryProblem, lambda: C64) -> Result<MatrixSolutionSample> {
    integrate_solutions_with(problem, lambda, IntegratorConfig::default())
}

pub fn integrate_solutions_with(
    problem: &BoundaryProblem,
    lambda: C64,
    config: IntegratorConfig,
) -> Result<MatrixSolutionSample> {
    let direct = Propagator::with_config(problem, config).nodes(lambda)?;
    let dual = Propagator::with_config(&problem.transposed(), config).nodes(lambda)?;
    let [phi, dphi, s, ds] = direct;
    let t = |v: Vec<CMat>| v.into_iter().map(|a| a.transpose()).collect::<Vec<_>>();
    let [w, dw, ws, dws] = dual;
    Ok(MatrixSolutionSample {
        lambda,
        grid: problem.grid().to_vec(),
        phi,
        dphi,
        s,
        ds,
        phistar: t(w),
        dphistar: t(dw),
        sstar: t(ws),
        dsstar: t(dws),
    })
}

/// `V(Y)` for `phi` or `S` taken from a full sample.
pub fn boundary_form_v(problem: &BoundaryProblem, sample: &MatrixSolutionSample, which: Solution) -> CMat {
    let last = sample.phi.len() - 1;
    match which {
        Solution::Phi => &sample.dphi[last] + problem.big_h() * &sample.phi[last],
        Solution::S => &sample.ds[last] + problem.big_h() * &sample.s[last],
    }
}

/// `U(Y) = Y'(0) - h Y(0)`.
pub fn boundary_form_u(problem: &BoundaryProblem, sample: &MatrixSolutionSample, which: Solution) -> CMat {
    match which {
        Solution::Phi => &sample.dphi[0] - problem.h() * &sample.phi[0],
        Solution::S => &sample.ds[0] - problem.h() * &sample.s[0],
    }
}

pub fn char_det(problem: &BoundaryProblem, lambda: C64) -> Result<C64> {
    Propagator::new(problem).char_det(lambda)
}

pub fn weyl_matrix(problem: &BoundaryProblem, lambda: C64, max_cond: f64) -> Result<WeylValue> {
    Propagator::new(problem).weyl_matrix(lambda, max_cond)
}

/// `M*(lambda) = -V*(S*) (V*(phi*))^{-1}`, computed from the dual problem.
pub fn weyl_matrix_dual(problem: &BoundaryProblem, lambda: C64, max_cond: f64) -> Result<WeylValue> {
    let t = Propagator::new(&problem.transposed()).weyl_matrix(lambda, max_cond)?;
    Ok(WeylValue { m: t.m.transpose(), cond: t.cond })
}

/// `<Z, Y> = Z' Y - Z Y'` at one node, with `Z = phi*(., mu)` and `Y = phi(., lambda)`.
pub fn lagrange_bracket(sample_mu: &MatrixSolutionSample, sample_lambda: &MatrixSolutionSample, i: usize) -> CMat {
    &sample_mu.dphistar[i] * &sample_lambda.phi[i] - &sample_mu.phistar[i] * &sample_lambda.dphi[i]
}

/// `int_0^{x_i} phi*(t, mu) phi(t, lambda) dt` by the cubic Hermite rule on the grid.
pub fn product_integral(sample_mu: &MatrixSolutionSample, sample_lambda: &MatrixSolutionSample, i: usize) -> CMat {
    let g = &sample_lambda.grid;
    let f = |k: usize| &sample_mu.phistar[k] * &sample_lambda.phi[k];
    let df = |k: usize| &sample_mu.dphistar[k] * &sample_lambda.phi[k] + &sample_mu.phistar[k] * &sample_lambda.dphi[k];
    let m = sample_lambda.phi[0].nrows();
    let mut acc = CMat::zeros(m, m);
    for k in 0..i {
        let len = g[k + 1] - g[k];
        acc += (f(k) + f(k + 1)) * C64::new(0.5 * len, 0.0) + (df(k) - df(k + 1)) * C64::new(len * len / 12.0, 0.0);
    }
    acc
}

/// `D(x, lambda, mu) = <phi*(x, mu), phi(x, lambda)> / (lambda - mu)`, switching to
/// the integral form `int_0^x phi*(t, mu) phi(t, lambda) dt` when `|lambda - mu| < coincidence`.
pub fn d_kernel(
    sample_mu: &MatrixSolutionSample,
    sample_lambda: &MatrixSolutionSample,
    x_index: usize,
    coincidence: f64,
) -> Result<CMat> {
    if sample_mu.grid != sample_lambda.grid {
        return Err(SpecError::GridMismatch);
    }
    if x_index >= sample_lambda.grid.len() {
        return Err(SpecError::DimensionMismatch(format!("grid index {x_index} out of range")));
    }
    let diff = sample_lambda.lambda - sample_mu.lambda;
    if diff.norm() < coincidence {
        Ok(product_integral(sample_mu, sample_lambda, x_index))
    } else {
        Ok(lagrange_bracket(sample_mu, sample_lambda, x_index) / diff)
    }
}

/// Number of terms after which `t^K / (2K)!` drops below the unit roundoff.
fn series_terms(t: f64) -> usize {
    let mut k = 1usize;
    let mut term = t / 2.0;
    while term > 1e-17 && k < 40 {
        term *= t / ((2 * k + 1) * (2 * k + 2)) as f64;
        k += 1;
    }
    k
}

/// `cosh(sqrt X) = sum X^k / (2k)!` and `sinh(sqrt X) / sqrt X = sum X^k / (2k+1)!`.
fn cosh_sinh_dyn(x: &CMat) -> (CMat, CMat) {
    let m = x.nrows();
    let t = crate::linalg::row_sum_norm(x);
    let terms = series_terms(t);
    let id = CMat::identity(m, m);
    let mut c = id.clone();
    let mut s = id.clone();
    for k in (1..=terms).rev() {
        c = &id + x * &c * C64::new(1.0 / ((2 * k - 1) * 2 * k) as f64, 0.0);
        s = &id + x * &s * C64::new(1.0 / (2 * k * (2 * k + 1)) as f64, 0.0);
    }
    (c, s)
}

/// Small dense kernels on stack arrays.
mod fixed {
    use crate::linalg::{C64, ONE, ZERO};

    pub type Sq<const M: usize> = [[C64; M]; M];
    pub type Rows<const M: usize, const N: usize> = [[C64; N]; M];

    #[inline(always)]
    pub fn mul<const M: usize, const N: usize>(a: &Sq<M>, b: &Rows<M, N>) -> Rows<M, N> {
        let mut c = [[ZERO; N]; M];
        for i in 0..M {
            for k in 0..M {
                let aik = a[i][k];
                for j in 0..N {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
        c
    }

    #[inline(always)]
    pub fn add<const M: usize>(a: &Sq<M>, b: &Sq<M>) -> Sq<M> {
        add_rows(a, b)
    }

    #[inline(always)]
    pub fn add_rows<const M: usize, const N: usize>(a: &Rows<M, N>, b: &Rows<M, N>) -> Rows<M, N> {
        let mut c = *a;
        for i in 0..M {
            for j in 0..N {
                c[i][j] += b[i][j];
            }
        }
        c
    }

    #[inline(always)]
    pub fn scale<const M: usize>(a: &Sq<M>, f: f64) -> Sq<M> {
        let mut c = *a;
        c.iter_mut().flatten().for_each(|z| *z *= f);
        c
    }

    fn identity<const M: usize>() -> Sq<M> {
        let mut c = [[ZERO; M]; M];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = ONE;
        }
        c
    }

    fn norm<const M: usize>(a: &Sq<M>) -> f64 {
        a.iter().map(|row| row.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn cosh_sinh<const M: usize>(x: &Sq<M>) -> (Sq<M>, Sq<M>) {
        let terms = super::series_terms(norm(x));
        let id = identity::<M>();
        let mut c = id;
        let mut s = id;
        for k in (1..=terms).rev() {
            c = add(&id, &scale(&mul(x, &c), 1.0 / ((2 * k - 1) * 2 * k) as f64));
            s = add(&id, &scale(&mul(x, &s), 1.0 / (2 * k * (2 * k + 1)) as f64));
        }
        (c, s)
    }

    /// Taylor scaling-and-squaring exponential.
    pub fn exp<const M: usize>(a: &Sq<M>) -> Sq<M> {
        let nrm = norm(a);
        let mut squarings = 0u32;
        if nrm > 0.5 {
            squarings = (nrm / 0.5).log2().ceil() as u32;
        }
        let sc = 0.5f64.powi(squarings as i32);
        let theta = nrm * sc;
        let mut degree = 1usize;
        let mut term = theta;
        while degree < 18 {
            term *= theta / (degree + 1) as f64;
            if term <= 1e-17 {
                break;
            }
            degree += 1;
        }
        let b = scale(a, sc);
        let id = identity::<M>();
        let mut out = id;
        for k in (1..=degree).rev() {
            out = add(&id, &scale(&mul(&b, &out), 1.0 / k as f64));
        }
        for _ in 0..squarings {
            out = mul(&out, &out);
        }
        out
    }
}
