//! Eigenvalues and weight matrices of `L(Q, h, H)`.
//!
//! Zeros of `Delta(lambda) = det V(phi)` are counted with the argument
//! principle on rectangles: one low rectangle holding bands `0..=n0` and one
//! strip per higher band, bounded by the midpoints `(n +- 1/2)^2` shifted by the
//! mean of `2 omega_q / pi`. Inside a region the zeros are estimated by Beyn's
//! contour method, then each cluster of coincident zeros gets a tight circle on
//! which the residue of `M` is taken by the trapezoid rule.

use std::f64::consts::PI;

use nalgebra::Schur;
use rayon::prelude::*;

use crate::error::{Result, SpecError};
use crate::linalg::{max_abs, numerical_rank, row_sum_norm, CMat, C64, ONE, ZERO};
use crate::ode::{Propagator, Solution};
use crate::problem::BoundaryProblem;
use crate::scalar::branch_sqrt;
use crate::tolerances::Tolerances;

/// `h + H + 1/2 int_0^pi Q`.
pub fn omega_matrix(p: &BoundaryProblem) -> CMat {
    p.h() + p.big_h() + p.integral_q() * C64::new(0.5, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaReport {
    pub matrix: CMat,
    /// Whether the off-diagonal part is below `omega_diag_tol * (1 + ||omega||)`.
    pub diagonal: bool,
    pub off_diagonal: f64,
}

impl OmegaReport {
    pub fn diagonal_values(&self) -> Vec<C64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)]).collect()
    }
}

pub fn compute_omega(problem: &BoundaryProblem, tol: &Tolerances) -> OmegaReport {
    let matrix = omega_matrix(problem);
    let m = matrix.nrows();
    let mut off = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                off = off.max(matrix[(i, j)].norm());
            }
        }
    }
    let diagonal = off <= tol.omega_diag_tol * (1.0 + row_sum_norm(&matrix));
    OmegaReport { matrix, diagonal, off_diagonal: off }
}

/// Channel groups `J_s`: indices whose omega values agree within
/// `tol * (1 + max |omega_q|)`, ordered by their smallest member.
pub fn group_partition(omega: &[C64], tol: f64) -> Vec<Vec<usize>> {
    let m = omega.len();
    let scale = 1.0 + omega.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..m {
        for j in i + 1..m {
            if (omega[i] - omega[j]).norm() <= tol * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for q in 0..m {
        let root = find(&mut parent, q);
        match groups.iter_mut().find(|g| g[0] == root) {
            Some(g) => g.push(q),
            None => groups.push(vec![q]),
        }
    }
    groups
}

/// One eigenvalue `lambda_nq` with its weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDatum {
    pub n: usize,
    /// Channel index, 1-based.
    pub q: usize,
    pub lambda: C64,
    pub rho: C64,
    pub alpha: CMat,
    pub multiplicity: usize,
    pub cluster_id: usize,
}

impl SpectralDatum {
    pub fn new(n: usize, q: usize, lambda: C64, alpha: CMat, multiplicity: usize, cluster_id: usize) -> Self {
        Self { n, q, lambda, rho: branch_sqrt(lambda), alpha, multiplicity, cluster_id }
    }
}

/// The collection `{lambda_nq, alpha_nq}` for `n = 0..=n_max`, `q = 1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub m: usize,
    pub n_max: usize,
    /// Diagonal of omega.
    pub omega: Vec<C64>,
    /// Ordered by `(n, q)`.
    pub entries: Vec<SpectralDatum>,
    pub groups: Vec<Vec<usize>>,
    heads: Vec<bool>,
}

/// `alpha_n^(s)` indexed `[n][s]` and `alpha_n` indexed `[n]`.
#[derive(Debug, Clone)]
pub struct GroupSums {
    pub per_group: Vec<Vec<CMat>>,
    pub total: Vec<CMat>,
}

impl SpectralData {
    /// Validates completeness of the index rectangle and renumbers clusters
    /// in order of first appearance.
    pub fn new(m: usize, n_max: usize, omega: Vec<C64>, mut entries: Vec<SpectralDatum>, group_tol: f64) -> Result<Self> {
        if m == 0 {
            return Err(SpecError::DimensionMismatch("m must be positive".into()));
        }
        if omega.len() != m {
            return Err(SpecError::DimensionMismatch(format!("omega has {} values, expected {m}", omega.len())));
        }
        entries.sort_by_key(|e| (e.n, e.q));
        for (k, e) in entries.iter().enumerate() {
            let (n, q) = (k / m, k % m + 1);
            if e.n != n || e.q != q {
                return Err(SpecError::DimensionMismatch(format!("entries[{k}]: expected (n, q) = ({n}, {q}), found ({}, {})", e.n, e.q)));
            }
            if e.alpha.shape() != (m, m) {
                return Err(SpecError::DimensionMismatch(format!("entries[{k}].alpha is {:?}, expected ({m}, {m})", e.alpha.shape())));
            }
        }
        if entries.len() != (n_max + 1) * m {
            return Err(SpecError::DimensionMismatch(format!(
                "entries[{}]: expected {} entries for n_max = {n_max}",
                entries.len(),
                (n_max + 1) * m
            )));
        }
        let mut ids: Vec<usize> = Vec::new();
        let mut heads = Vec::with_capacity(entries.len());
        for e in entries.iter_mut() {
            match ids.iter().position(|&id| id == e.cluster_id) {
                Some(pos) => {
                    e.cluster_id = pos;
                    heads.push(false);
                }
                None => {
                    ids.push(e.cluster_id);
                    e.cluster_id = ids.len() - 1;
                    heads.push(true);
                }
            }
        }
        let groups = group_partition(&omega, group_tol);
        Ok(Self { m, n_max, omega, entries, groups, heads })
    }

    pub fn index(&self, n: usize, q: usize) -> usize {
        n * self.m + q - 1
    }

    pub fn get(&self, n: usize, q: usize) -> &SpectralDatum {
        &self.entries[self.index(n, q)]
    }

    /// Whether entry `k` is the first member of its cluster.
    pub fn is_head(&self, k: usize) -> bool {
        self.heads[k]
    }

    /// `alpha'`: the cluster weight on the head entry, zero elsewhere.
    pub fn alpha_primed(&self, k: usize) -> CMat {
        if self.heads[k] {
            self.entries[k].alpha.clone()
        } else {
            CMat::zeros(self.m, self.m)
        }
    }

    pub fn omega_matrix(&self) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_vec(self.omega.clone()))
    }

    pub fn cluster_count(&self) -> usize {
        self.heads.iter().filter(|&&h| h).count()
    }

    /// Indices of the entries sharing cluster `id`.
    pub fn cluster_members(&self, id: usize) -> Vec<usize> {
        (0..self.entries.len()).filter(|&k| self.entries[k].cluster_id == id).collect()
    }

    /// Bands `0..=n_max` only.
    pub fn truncated(&self, n_max: usize) -> Result<Self> {
        if n_max > self.n_max {
            return Err(SpecError::TruncationTooLarge { n_trunc: n_max, n_max: self.n_max });
        }
        let entries = self.entries[..(n_max + 1) * self.m].to_vec();
        let mut out = Self::new(self.m, n_max, self.omega.clone(), entries, 0.0)?;
        out.groups = self.groups.clone();
        Ok(out)
    }

    pub fn max_alpha_norm(&self) -> f64 {
        self.entries.iter().map(|e| row_sum_norm(&e.alpha)).fold(0.0, f64::max)
    }

    pub fn group_sums(&self) -> GroupSums {
        group_sums(self)
    }
}

/// `alpha_n^(s) = sum_{q in J_s} alpha'_nq` and `alpha_n = sum_s alpha_n^(s)`.
pub fn group_sums(data: &SpectralData) -> GroupSums {
    let m = data.m;
    let mut per_group = Vec::with_capacity(data.n_max + 1);
    let mut total = Vec::with_capacity(data.n_max + 1);
    for n in 0..=data.n_max {
        let sums: Vec<CMat> = data
            .groups
            .iter()
            .map(|g| {
                g.iter().fold(CMat::zeros(m, m), |acc, &q| acc + data.alpha_primed(data.index(n, q + 1)))
            })
            .collect();
        total.push(sums.iter().fold(CMat::zeros(m, m), |acc, s| acc + s));
        per_group.push(sums);
    }
    GroupSums { per_group, total }
}

// ---------------------------------------------------------------------------
// evaluation of Delta, V(phi)^{-1} and M along contours

/// `det V(phi)` split as a unit-scale complex number and `ln |det|`.
#[derive(Debug, Clone, Copy)]
struct Det {
    unit: C64,
    log_abs: f64,
}

struct Eval<'a> {
    prop: &'a Propagator,
    m: usize,
}

impl Eval<'_> {
    fn det_of(&self, v: &CMat) -> Det {
        let scale = max_abs(v);
        if scale == 0.0 {
            return Det { unit: ZERO, log_abs: f64::NEG_INFINITY };
        }
        let d = (v / C64::new(scale, 0.0)).determinant();
        let a = d.norm();
        if a == 0.0 {
            return Det { unit: ZERO, log_abs: f64::NEG_INFINITY };
        }
        Det { unit: d / a, log_abs: a.ln() + self.m as f64 * scale.ln() }
    }

    fn delta(&self, lambda: C64) -> Result<Det> {
        let end = self.prop.endpoint(lambda)?;
        Ok(self.det_of(&self.prop.boundary_v(&end, Solution::Phi)))
    }

    /// `V(phi)^{-1}` and `Delta`; `None` if `V(phi)` cannot be inverted.
    fn resolvent(&self, lambda: C64) -> Result<Option<(CMat, Det)>> {
        let end = self.prop.endpoint(lambda)?;
        let v = self.prop.boundary_v(&end, Solution::Phi);
        let det = self.det_of(&v);
        let inv = v.try_inverse();
        Ok(inv.filter(crate::linalg::is_finite).map(|i| (i, det)))
    }

    /// `M = -V(phi)^{-1} V(S)` and `Delta`.
    fn weyl(&self, lambda: C64) -> Result<Option<(CMat, Det)>> {
        let end = self.prop.endpoint(lambda)?;
        let vphi = self.prop.boundary_v(&end, Solution::Phi);
        let vs = self.prop.boundary_v(&end, Solution::S);
        let det = self.det_of(&vphi);
        Ok(vphi.lu().solve(&vs).filter(crate::linalg::is_finite).map(|s| (-s, det)))
    }
}

const MAX_BISECT: usize = 40;

/// Argument change of `Delta` along `path(t)` for `t` from `t0` to `t1`,
/// bisecting while a step exceeds `pi / 4`. `None` if a zero sits on the path.
fn path_arg<F: Fn(f64) -> C64>(ev: &Eval, path: &F, t0: f64, t1: f64, f0: Det, f1: Det, depth: usize) -> Result<Option<f64>> {
    if f0.unit == ZERO || f1.unit == ZERO {
        return Ok(None);
    }
    let d = (f1.unit / f0.unit).arg();
    if d.abs() <= PI / 4.0 {
        return Ok(Some(d));
    }
    if depth == 0 {
        return Ok(None);
    }
    let tm = 0.5 * (t0 + t1);
    let fm = ev.delta(path(tm))?;
    let Some(a) = path_arg(ev, path, t0, tm, f0, fm, depth - 1)? else { return Ok(None) };
    let Some(b) = path_arg(ev, path, tm, t1, fm, f1, depth - 1)? else { return Ok(None) };
    Ok(Some(a + b))
}

/// Turns a total argument change into a winding number.
fn winding_from_arg(total: f64) -> Option<usize> {
    let w = total / (2.0 * PI);
    let r = w.round();
    if (w - r).abs() > 0.05 || r < 0.0 {
        None
    } else {
        Some(r as usize)
    }
}

/// Winding of `Delta` around a closed path given by ordered samples
/// `(t_j, Delta_j)` over one period of length `period`.
fn closed_winding<F: Fn(f64) -> C64>(ev: &Eval, path: &F, samples: &[(f64, Det)], period: f64) -> Result<Option<usize>> {
    let n = samples.len();
    let mut total = 0.0;
    for j in 0..n {
        let (t0, f0) = samples[j];
        let (mut t1, f1) = samples[(j + 1) % n];
        if j + 1 == n {
            t1 += period;
        }
        match path_arg(ev, path, t0, t1, f0, f1, MAX_BISECT)? {
            Some(d) => total += d,
            None => return Ok(None),
        }
    }
    Ok(winding_from_arg(total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, z: C64) -> bool {
        z.re >= self.x0 && z.re < self.x1 && z.im >= self.y0 && z.im < self.y1
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.x0, self.y0),
            C64::new(self.x1, self.y0),
            C64::new(self.x1, self.y1),
            C64::new(self.x0, self.y1),
        ]
    }

    fn split(&self, frac: f64) -> (Rect, Rect) {
        if self.x1 - self.x0 >= self.y1 - self.y0 {
            let xm = self.x0 + frac * (self.x1 - self.x0);
            (Rect { x1: xm, ..*self }, Rect { x0: xm, ..*self })
        } else {
            let ym = self.y0 + frac * (self.y1 - self.y0);
            (Rect { y1: ym, ..*self }, Rect { y0: ym, ..*self })
        }
    }
}

/// Number of zeros of `Delta` inside `rect`; `None` if a zero is too close
/// to the boundary to decide.
fn rect_count(ev: &Eval, rect: &Rect) -> Result<Option<usize>> {
    let c = rect.corners();
    let mut total = 0.0;
    for e in 0..4 {
        let (a, b) = (c[e], c[(e + 1) % 4]);
        let dr = (branch_sqrt(b) - branch_sqrt(a)).norm();
        let pieces = 6 + (4.0 * ev.m as f64 * dr).ceil() as usize;
        let path = |t: f64| a + (b - a) * t;
        let mut prev = (0.0, ev.delta(a)?);
        for k in 1..=pieces {
            let t = k as f64 / pieces as f64;
            let f = ev.delta(path(t))?;
            match path_arg(ev, &path, prev.0, t, prev.1, f, MAX_BISECT)? {
                Some(d) => total += d,
                None => return Ok(None),
            }
            prev = (t, f);
        }
    }
    Ok(winding_from_arg(total))
}

/// Samples on the circle `center + radius e^{i theta}`, kept in angle order.
struct Circle {
    center: C64,
    radius: f64,
    theta0: f64,
    nodes: usize,
    values: Vec<CMat>,
    dets: Vec<Det>,
}

impl Circle {
    fn point(&self, theta: f64) -> C64 {
        self.center + C64::from_polar(self.radius, theta)
    }

    fn theta(&self, j: usize) -> f64 {
        self.theta0 + 2.0 * PI * j as f64 / self.nodes as f64
    }

    /// Fills samples for `nodes` points, reusing the previous set when the
    /// count doubles. `f` returns `None` when the node is unusable.
    fn sample<F>(center: C64, radius: f64, theta0: f64, nodes: usize, f: &F) -> Result<Option<Self>>
    where
        F: Fn(C64) -> Result<Option<(CMat, Det)>>,
    {
        let mut c = Circle { center, radius, theta0, nodes, values: Vec::new(), dets: Vec::new() };
        for j in 0..nodes {
            match f(c.point(c.theta(j)))? {
                Some((v, d)) => {
                    c.values.push(v);
                    c.dets.push(d);
                }
                None => return Ok(None),
            }
        }
        Ok(Some(c))
    }

    fn double<F>(&mut self, f: &F) -> Result<bool>
    where
        F: Fn(C64) -> Result<Option<(CMat, Det)>>,
    {
        let n = self.nodes;
        let mut values = Vec::with_capacity(2 * n);
        let mut dets = Vec::with_capacity(2 * n);
        for j in 0..n {
            values.push(self.values[j].clone());
            dets.push(self.dets[j]);
            let theta = self.theta0 + 2.0 * PI * (2 * j + 1) as f64 / (2 * n) as f64;
            match f(self.point(theta))? {
                Some((v, d)) => {
                    values.push(v);
                    dets.push(d);
                }
                None => return Ok(false),
            }
        }
        self.nodes = 2 * n;
        self.values = values;
        self.dets = dets;
        Ok(true)
    }

    /// `(1/2 pi i) oint ((lambda - c) / r)^p F dlambda` by the trapezoid rule
    /// on every `stride`-th node.
    fn moment(&self, p: i32, stride: usize) -> CMat {
        let (r, c) = self.values[0].shape();
        let mut acc = CMat::zeros(r, c);
        for j in (0..self.nodes).step_by(stride) {
            let zeta = C64::from_polar(1.0, self.theta(j));
            acc += &self.values[j] * zeta.powi(p + 1);
        }
        acc * C64::new(self.radius * stride as f64 / self.nodes as f64, 0.0)
    }

    fn winding(&self, ev: &Eval) -> Result<Option<usize>> {
        let samples: Vec<(f64, Det)> = (0..self.nodes).map(|j| (self.theta(j), self.dets[j])).collect();
        let path = |t: f64| self.point(t);
        closed_winding(ev, &path, &samples, 2.0 * PI)
    }
}

/// Beyn's estimates of the `k` zeros inside a sampled resolvent circle.
fn beyn_estimates(circle: &Circle, k: usize, stride: usize) -> Option<Vec<C64>> {
    if k == 0 {
        return Some(Vec::new());
    }
    let a0 = circle.moment(0, stride);
    let a1 = circle.moment(1, stride);
    let d = crate::linalg::svd(&a0);
    if d.s[k - 1] <= 1e-14 * d.s[0] {
        return None;
    }
    let uk = d.u.columns(0, k).into_owned();
    let wk = d.v.columns(0, k).into_owned();
    let sinv = CMat::from_fn(k, k, |r, c| if r == c { ONE / d.s[r] } else { ZERO });
    let b = uk.adjoint() * a1 * wk * sinv;
    let ev = Schur::new(b).eigenvalues()?;
    Some(ev.iter().map(|mu| circle.center + mu * circle.radius).collect())
}

/// Zero estimates (repeated by multiplicity) in a rectangle with known count.
fn solve_tile(ev: &Eval, rect: Rect, count: usize, tol: &Tolerances, depth: usize) -> Result<Vec<C64>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if depth > 48 {
        return Err(SpecError::NoConvergence(format!("zero isolation stalled near {:?}", rect.corners()[0])));
    }
    if count <= ev.m {
        let center = C64::new(0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1));
        let (w, h) = (rect.x1 - rect.x0, rect.y1 - rect.y0);
        // a fresh region is tried with the circle spanning its longer side,
        // which stays clear of the neighbouring bands; subtiles use the
        // circumcircle
        let radius = if depth == 0 { 0.485 * w.max(h) } else { 0.525 * w.hypot(h) };
        if let Some(est) = beyn_in_circle(ev, center, radius, tol)? {
            let inside: Vec<C64> = est.into_iter().filter(|z| rect.contains(*z)).collect();
            if inside.len() == count {
                return Ok(inside);
            }
        }
    }
    for frac in [0.4921, 0.5371, 0.4513] {
        let (a, b) = rect.split(frac);
        let (Some(ca), Some(cb)) = (rect_count(ev, &a)?, rect_count(ev, &b)?) else { continue };
        if ca + cb != count {
            continue;
        }
        let mut out = solve_tile(ev, a, ca, tol, depth + 1)?;
        out.extend(solve_tile(ev, b, cb, tol, depth + 1)?);
        return Ok(out);
    }
    Err(SpecError::NoConvergence(format!("cannot subdivide region near {:?}", rect.corners()[0])))
}

/// Beyn's method on a circle. The estimates are accepted once they agree with
/// those from every other node; otherwise the node count doubles.
fn beyn_in_circle(ev: &Eval, center: C64, radius: f64, tol: &Tolerances) -> Result<Option<Vec<C64>>> {
    let f = |z: C64| ev.resolvent(z);
    let start = (tol.contour_start_nodes / 2).max(8);
    let Some(mut circle) = Circle::sample(center, radius, 0.3, start, &f)? else { return Ok(None) };
    let Some(k) = circle.winding(ev)? else { return Ok(None) };
    if k > ev.m {
        return Ok(None);
    }
    for doubling in 0..=tol.contour_max_doublings {
        if doubling > 0 && !circle.double(&f)? {
            return Ok(None);
        }
        let (Some(full), Some(half)) = (beyn_estimates(&circle, k, 1), beyn_estimates(&circle, k, 2)) else {
            continue;
        };
        let scale = 1.0 + full.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if set_distance(&full, &half) <= tol.contour_agree * scale {
            return Ok(Some(full));
        }
    }
    Ok(None)
}

/// Largest distance from a point of one set to the nearest point of the other.
fn set_distance(a: &[C64], b: &[C64]) -> f64 {
    let one = |x: &[C64], y: &[C64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    one(a, b).max(one(b, a))
}

/// Single-linkage grouping of estimates closer than `cluster_tol * (1 + |lambda|)`.
fn cluster_points(points: &[C64], tol: f64) -> Vec<(C64, usize)> {
    let mut groups: Vec<Vec<C64>> = Vec::new();
    for &p in points {
        let hits: Vec<usize> = (0..groups.len())
            .filter(|&g| groups[g].iter().any(|q| (p - q).norm() <= tol * (1.0 + p.norm())))
            .collect();
        let mut merged = vec![p];
        for &g in hits.iter().rev() {
            merged.extend(groups.remove(g));
        }
        groups.push(merged);
    }
    let mut out: Vec<(C64, usize)> = groups
        .into_iter()
        .map(|g| {
            let c = g.iter().fold(ZERO, |a, b| a + b) / g.len() as f64;
            (c, g.len())
        })
        .collect();
    out.sort_by(|a, b| (a.0.re, a.0.im).partial_cmp(&(b.0.re, b.0.im)).unwrap_or(std::cmp::Ordering::Equal));
    out
}

// ---------------------------------------------------------------------------
// location

/// A cluster of coincident eigenvalues with its residue.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedCluster {
    pub lambda: C64,
    /// Winding number of `Delta` on the residue circle.
    pub multiplicity: usize,
    /// Residue of `M` over the cluster.
    pub alpha: CMat,
    pub radius: f64,
    /// `|Delta(lambda)| / max |Delta|` on the residue circle.
    pub residual: f64,
    /// Trapezoid nodes used for the residue.
    pub nodes: usize,
}

/// Zeros grouped by counting region.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedSpectrum {
    pub m: usize,
    pub n_max: usize,
    /// Bands `0..=n0` share the low region.
    pub n0: usize,
    pub clusters: Vec<LocatedCluster>,
    /// Cluster indices of the low region.
    pub low: Vec<usize>,
    /// Cluster indices of each strip, for bands `n0 + 1..=n_max`.
    pub strips: Vec<Vec<usize>>,
}

struct Layout {
    shift: C64,
    low_left: f64,
    half_height: f64,
    strip_height: f64,
}

impl Layout {
    fn new(problem: &BoundaryProblem, omega: &[C64]) -> Self {
        let m = omega.len() as f64;
        let mean = omega.iter().fold(ZERO, |a, b| a + b) / m;
        let shift = mean * (2.0 / PI);
        let q_inf = problem.q().iter().map(row_sum_norm).fold(0.0, f64::max);
        let b = row_sum_norm(problem.h()) + row_sum_norm(problem.big_h());
        let spread = omega.iter().map(|w| (w * (2.0 / PI) - shift).norm()).fold(0.0, f64::max);
        let reach = 2.0 + q_inf + 2.0 * (b + 1.0) * (b + 1.0) + spread;
        Self { shift, low_left: shift.re - reach, half_height: reach, strip_height: 1.0 + 2.0 * spread }
    }

    fn edge(&self, n: usize) -> f64 {
        (n as f64 + 0.5).powi(2) + self.shift.re
    }

    fn strip(&self, n: usize) -> Rect {
        let t = self.strip_height.max(0.5 * n as f64);
        Rect { x0: self.edge(n - 1), x1: self.edge(n), y0: self.shift.im - t, y1: self.shift.im + t }
    }

    fn low(&self, n0: usize) -> Rect {
        Rect {
            x0: self.low_left,
            x1: self.edge(n0),
            y0: self.shift.im - self.half_height,
            y1: self.shift.im + self.half_height,
        }
    }
}

fn check_diagonal(problem: &BoundaryProblem, tol: &Tolerances) -> Result<Vec<C64>> {
    let report = compute_omega(problem, tol);
    if !report.diagonal {
        return Err(SpecError::InvalidProblem(format!(
            "omega is not diagonal (off-diagonal {:.3e}); apply the diagonalising unitary first",
            report.off_diagonal
        )));
    }
    Ok(report.diagonal_values())
}

/// Finds every eigenvalue in bands `0..=n_max` with multiplicities and residues.
pub fn locate_eigenvalues(problem: &BoundaryProblem, n_max: usize, tol: &Tolerances) -> Result<LocatedSpectrum> {
    let omega = check_diagonal(problem, tol)?;
    let m = problem.m();
    let prop = Propagator::new(problem);
    let ev = Eval { prop: &prop, m };
    let mut layout = Layout::new(problem, &omega);

    let strip_counts: Vec<Option<usize>> = (1..=n_max)
        .into_par_iter()
        .map(|n| rect_count(&ev, &layout.strip(n)))
        .collect::<Result<_>>()?;
    let mut n0 = strip_counts.iter().rposition(|c| *c != Some(m)).map_or(0, |i| i + 1);

    let expected = |n0: usize| m * (n0 + 1);
    let mut low_count = None;
    for _ in 0..4 {
        let found = rect_count(&ev, &layout.low(n0))?;
        match found {
            Some(c) if c == expected(n0) => {
                low_count = Some(c);
                break;
            }
            Some(c) if c > expected(n0) && n0 < n_max => {
                // zeros of the next strip leaked into the low region
                n0 += 1;
                continue;
            }
            _ => {}
        }
        layout.low_left -= 3.0 * (layout.low_left.abs() + 1.0);
        layout.half_height *= 2.0;
    }
    let Some(low_count) = low_count else {
        let found = rect_count(&ev, &layout.low(n0))?.unwrap_or(0);
        return Err(SpecError::CountMismatch { band: n0, found, expected: expected(n0) });
    };

    let mut regions: Vec<(Rect, usize)> = vec![(layout.low(n0), low_count)];
    regions.extend((n0 + 1..=n_max).map(|n| (layout.strip(n), m)));
    let estimates: Vec<Vec<(C64, usize)>> = regions
        .par_iter()
        .map(|(rect, count)| solve_tile(&ev, *rect, *count, tol, 0).map(|e| cluster_points(&e, tol.cluster_tol)))
        .collect::<Result<_>>()?;

    let mut centers: Vec<(C64, usize)> = Vec::new();
    for (r, list) in estimates.iter().enumerate() {
        centers.extend(list.iter().map(|(z, _)| (*z, r)));
    }
    let radii: Vec<f64> = (0..centers.len())
        .map(|i| {
            let d = (0..centers.len())
                .filter(|&j| j != i)
                .map(|j| (centers[i].0 - centers[j].0).norm())
                .fold(f64::INFINITY, f64::min);
            (0.5 * d).min(1.0)
        })
        .collect();
    let clusters: Vec<LocatedCluster> = (0..centers.len())
        .into_par_iter()
        .map(|i| refine_cluster(&ev, centers[i].0, radii[i], i, tol))
        .collect::<Result<_>>()?;

    let mut low = Vec::new();
    let mut strips = vec![Vec::new(); n_max - n0];
    for (i, &(_, r)) in centers.iter().enumerate() {
        if r == 0 {
            low.push(i);
        } else {
            strips[r - 1].push(i);
        }
    }
    let total = |idx: &[usize]| idx.iter().map(|&i| clusters[i].multiplicity).sum::<usize>();
    if total(&low) != low_count {
        return Err(SpecError::CountMismatch { band: n0, found: total(&low), expected: low_count });
    }
    for (k, s) in strips.iter().enumerate() {
        if total(s) != m {
            return Err(SpecError::CountMismatch { band: n0 + 1 + k, found: total(s), expected: m });
        }
    }
    Ok(LocatedSpectrum { m, n_max, n0, clusters, low, strips })
}

/// Residue of `M` and refined eigenvalue on a tight circle around `center`.
fn refine_cluster(ev: &Eval, center: C64, radius: f64, id: usize, tol: &Tolerances) -> Result<LocatedCluster> {
    if !(radius >= tol.contour_min_radius) {
        return Err(SpecError::ContourCollision { lambda: format!("{center}"), radius: tol.contour_min_radius });
    }
    let violated = |detail: String| SpecError::AssumptionOneViolated { cluster: id, lambda: format!("{center}"), detail };
    let f = |z: C64| ev.weyl(z);
    let Some(mut circle) = Circle::sample(center, radius, 0.7, tol.contour_start_nodes, &f)? else {
        return Err(SpecError::ContourCollision { lambda: format!("{center}"), radius });
    };
    let estimate = |c: &Circle, stride: usize| {
        let a0 = c.moment(0, stride);
        let a1 = c.moment(1, stride);
        let denom = a0.dotc(&a0);
        let mu = if denom.norm() > 0.0 { a0.dotc(&a1) / denom } else { ZERO };
        (a0, c.center + mu * c.radius)
    };
    let mut settled = None;
    for doubling in 0..=tol.contour_max_doublings {
        if doubling > 0 && !circle.double(&f)? {
            return Err(SpecError::ContourCollision { lambda: format!("{center}"), radius });
        }
        let (alpha, lambda) = estimate(&circle, 1);
        let (coarse, coarse_lambda) = estimate(&circle, 2);
        let da = max_abs(&(&alpha - &coarse));
        let dl = (lambda - coarse_lambda).norm();
        if da <= tol.contour_agree * max_abs(&alpha).max(f64::MIN_POSITIVE) && dl <= tol.contour_agree * (1.0 + lambda.norm()) {
            settled = Some((alpha, lambda));
            break;
        }
    }
    let Some((alpha, lambda)) = settled else {
        return Err(violated("residue quadrature did not settle under node doubling".into()));
    };
    let multiplicity = circle
        .winding(ev)?
        .ok_or_else(|| SpecError::NoConvergence(format!("winding undecided around {center}")))?;
    if multiplicity == 0 {
        return Err(SpecError::NoConvergence(format!("no zero inside the residue circle around {center}")));
    }
    let max_log = circle.dets.iter().map(|d| d.log_abs).fold(f64::NEG_INFINITY, f64::max);
    let at = ev.delta(lambda)?;
    let residual = (at.log_abs - max_log).exp();
    if !(residual <= tol.refine_residual) {
        return Err(SpecError::NoConvergence(format!("|Delta| residual {residual:.3e} at {lambda}")));
    }
    Ok(LocatedCluster { lambda, multiplicity, alpha, radius, residual, nodes: circle.nodes })
}

// ---------------------------------------------------------------------------
// assembly

/// Best assignment of `slots` to `seeds` by squared distance; returns the
/// seed index for each slot.
fn match_channels(slots: &[C64], seeds: &[C64]) -> Vec<usize> {
    let k = slots.len();
    let cost = |perm: &[usize]| perm.iter().enumerate().map(|(i, &q)| (slots[i] - seeds[q]).norm_sqr()).sum::<f64>();
    if k <= 7 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut perm: Vec<usize> = (0..k).collect();
        permute(&mut perm, 0, &mut |p| {
            let c = cost(p);
            if best.as_ref().is_none_or(|(b, _)| c < *b - 1e-14 * b.abs()) {
                best = Some((c, p.to_vec()));
            }
        });
        return best.map(|b| b.1).unwrap_or_default();
    }
    let mut free: Vec<usize> = (0..k).collect();
    let mut out = vec![0; k];
    for i in 0..k {
        let (pos, _) = free
            .iter()
            .enumerate()
            .min_by(|a, b| (slots[i] - seeds[*a.1]).norm().partial_cmp(&(slots[i] - seeds[*b.1]).norm()).unwrap())
            .unwrap();
        out[i] = free.remove(pos);
    }
    out
}

/// Visits permutations in lexicographic order of the first differing slot.
fn permute(p: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p[start..=i].rotate_right(1);
        permute(p, start + 1, visit);
        p[start..=i].rotate_left(1);
    }
}

/// Checks rank against multiplicity and assigns `(n, q)` labels.
///
/// The low region is ordered by real part and cut into bands of `m`; inside a
/// band, channels are matched to the seeds `n^2 + 2 omega_q / pi`.
pub fn weight_matrices(problem: &BoundaryProblem, located: &LocatedSpectrum, tol: &Tolerances) -> Result<SpectralData> {
    let omega = check_diagonal(problem, tol)?;
    let m = located.m;
    for (i, c) in located.clusters.iter().enumerate() {
        let rank = numerical_rank(&c.alpha, tol.rank_rel);
        if rank != c.multiplicity {
            return Err(SpecError::AssumptionOneViolated {
                cluster: i,
                lambda: format!("{}", c.lambda),
                detail: format!("residue rank {rank} differs from multiplicity {}", c.multiplicity),
            });
        }
    }
    let mut bands: Vec<Vec<usize>> = Vec::with_capacity(located.n_max + 1);
    let mut low = located.low.clone();
    low.sort_by(|&a, &b| {
        let (x, y) = (located.clusters[a].lambda, located.clusters[b].lambda);
        (x.re, x.im).partial_cmp(&(y.re, y.im)).unwrap_or(std::cmp::Ordering::Equal)
    });
    let slots: Vec<usize> = low.iter().flat_map(|&i| std::iter::repeat_n(i, located.clusters[i].multiplicity)).collect();
    bands.extend(slots.chunks(m).map(|c| c.to_vec()));
    for s in &located.strips {
        bands.push(s.iter().flat_map(|&i| std::iter::repeat_n(i, located.clusters[i].multiplicity)).collect());
    }
    let mut entries = Vec::with_capacity((located.n_max + 1) * m);
    for (n, band) in bands.iter().enumerate() {
        let seeds: Vec<C64> = omega.iter().map(|w| C64::new((n * n) as f64, 0.0) + w * (2.0 / PI)).collect();
        let lams: Vec<C64> = band.iter().map(|&i| located.clusters[i].lambda).collect();
        let labels = match_channels(&lams, &seeds);
        for (slot, &i) in band.iter().enumerate() {
            let c = &located.clusters[i];
            entries.push(SpectralDatum::new(n, labels[slot] + 1, c.lambda, c.alpha.clone(), c.multiplicity, i));
        }
    }
    SpectralData::new(m, located.n_max, omega, entries, tol.omega_group_tol)
}

/// Eigenvalues and weight matrices for bands `0..=n_max`.
pub fn forward(problem: &BoundaryProblem, n_max: usize, tol: &Tolerances) -> Result<SpectralData> {
    let located = locate_eigenvalues(problem, n_max, tol)?;
    weight_matrices(problem, &located, tol)
}
