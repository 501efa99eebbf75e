//! Front end for the `matspec` binary.
//!
//! `run` parses arguments, executes one workflow and returns the process exit
//! code, writing the human-readable report to `out` and diagnostics to `err`.
//! Exit codes: 0 success, 1 generic failure or failed check, 2 assumption one
//! violated, 3 eigenvalue count mismatch, 4 singular main equation.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use matspec_core::conditions::{check_conditions, check_r, check_structural, Condition, ConditionReport, Verdict};
use matspec_core::error::SpecError;
use matspec_core::inverse::{reconstruct, DerivativeMode, ReconstructionResult};
use matspec_core::io::{read_problem, read_spectral, write_result, write_spectral};
use matspec_core::linalg::{max_abs, CMat, C64};
use matspec_core::model::{model_spectral_data, ModelProblem};
use matspec_core::problem::{uniform_grid, BoundaryProblem};
use matspec_core::spectral::{compute_omega, locate_eigenvalues, weight_matrices, SpectralData};
use matspec_core::tolerances::Tolerances;
use serde_json::json;

pub const TOL_FILE_ENV: &str = "MATSPEC_TOL_FILE";
pub const DEFAULT_GRID: usize = 257;
pub const DEFAULT_NMAX: usize = 20;
pub const MIN_GRID: usize = 65;

#[derive(Parser, Debug)]
#[command(name = "matspec", version, about = "Forward and inverse spectral computations for matrix Sturm-Liouville operators")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Problem file (forward, roundtrip).
    #[arg(long, global = true)]
    problem: Option<PathBuf>,
    /// Spectral data file (inverse, check).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output file; CSV tables are written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    nmax: Option<usize>,
    #[arg(long, global = true)]
    ntrunc: Option<usize>,
    /// Reconstruction grid size; for `forward` the problem is resampled.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',', default_value = "A,R,S,C")]
    conditions: Vec<String>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true)]
    emit_plots: bool,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[arg(long = "tol-override", global = true, value_name = "KEY=VAL")]
    tol_override: Vec<String>,
    /// Refuse to reconstruct when the xi tail grows instead of only warning.
    #[arg(long, global = true)]
    xi_gate: bool,
    #[arg(long, global = true, value_enum, default_value_t = Derivative::Fd)]
    derivative: Derivative,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Spectral data of a problem.
    Forward,
    /// Reconstruct Q, h, H from spectral data.
    Inverse,
    /// Evaluate the characterization conditions on spectral data.
    Check,
    /// Forward then inverse, comparing with the input problem.
    Roundtrip,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Derivative {
    Fd,
    Termwise,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub command: Command,
    pub problem: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n_max: Option<usize>,
    pub n_trunc: Option<usize>,
    pub grid_size: Option<usize>,
    pub conditions: Vec<Condition>,
    pub workers: usize,
    pub emit_plots: bool,
    pub sweep: Vec<usize>,
    pub tol: Tolerances,
    pub xi_gate: bool,
    pub derivative: DerivativeMode,
}

#[derive(Debug)]
pub enum CliError {
    Spec(SpecError),
    Usage(String),
    /// The rank condition fails, so the main equation has no unique solution.
    RankDeficient { n: usize, q: usize, rank: usize, multiplicity: usize },
    Refused(String),
    ChecksFailed,
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Spec(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Spec(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Spec(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::RankDeficient { n, q, rank, multiplicity } => write!(
                f,
                "main equation is singular: weight matrix ({n}, {q}) has rank {rank} but multiplicity {multiplicity}"
            ),
            CliError::Refused(m) => write!(f, "{m}"),
            CliError::ChecksFailed => write!(f, "not all requested conditions pass"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(SpecError::AssumptionOneViolated { .. }) => 2,
            CliError::Spec(SpecError::CountMismatch { .. }) => 3,
            CliError::Spec(SpecError::MainEquationSingular { .. }) | CliError::RankDeficient { .. } => 4,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Defaults, then the TOML file named by `tol_file`, then `KEY=VAL` overrides.
pub fn load_tolerances(tol_file: Option<&Path>, overrides: &[String]) -> CliResult<Tolerances> {
    let mut tol = match tol_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str::<Tolerances>(&text)
                .map_err(|e| CliError::Usage(format!("tolerance file {}: {e}", path.display())))?
        }
        None => Tolerances::default(),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--tol-override expects KEY=VAL, got {kv:?}")))?;
        tol.set(k, v)?;
    }
    Ok(tol)
}

impl CliConfig {
    fn from_args(a: Args, tol_file: Option<&Path>) -> CliResult<Self> {
        let conditions = a
            .conditions
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| Condition::parse(s).ok_or_else(|| CliError::Usage(format!("unknown condition {s:?}"))))
            .collect::<CliResult<Vec<_>>>()?;
        let cfg = CliConfig {
            command: a.command,
            problem: a.problem,
            data: a.data,
            out: a.out,
            n_max: a.nmax,
            n_trunc: a.ntrunc,
            grid_size: a.grid,
            conditions,
            workers: a.workers,
            emit_plots: a.emit_plots,
            sweep: a.sweep,
            tol: load_tolerances(tol_file, &a.tol_override)?,
            xi_gate: a.xi_gate,
            derivative: match a.derivative {
                Derivative::Fd => DerivativeMode::FiniteDifference,
                Derivative::Termwise => DerivativeMode::TermWise,
            },
        };
        if cfg.workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        if let Some(g) = cfg.grid_size {
            if g < MIN_GRID {
                return Err(CliError::Usage(format!("--grid {g} is below the minimum {MIN_GRID}")));
            }
        }
        Ok(cfg)
    }

    fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_size.unwrap_or(DEFAULT_GRID))
    }

    fn problem_path(&self) -> CliResult<&Path> {
        self.problem.as_deref().ok_or_else(|| CliError::Usage("--problem is required".into()))
    }

    fn data_path(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    /// Truncation levels to run, checked against `n_max >= N_trunc >= 2`.
    fn truncations(&self, n_max: usize) -> CliResult<Vec<usize>> {
        let list = if !self.sweep.is_empty() { self.sweep.clone() } else { vec![self.n_trunc.unwrap_or(n_max)] };
        for &t in &list {
            if t < 2 || t > n_max {
                return Err(CliError::Usage(format!("truncation {t} must satisfy 2 <= N_trunc <= n_max = {n_max}")));
            }
        }
        Ok(list)
    }

    /// Prefix for CSV tables: the output path without extension, or `matspec`.
    fn plot_prefix(&self) -> PathBuf {
        match &self.out {
            Some(p) => p.with_extension(""),
            None => PathBuf::from("matspec"),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let tol_file = std::env::var_os(TOL_FILE_ENV).map(PathBuf::from);
    let result = CliConfig::from_args(parsed, tol_file.as_deref()).and_then(|cfg| execute(&cfg, out, err));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cfg: &CliConfig, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cfg.command {
        Command::Forward => cmd_forward(cfg, out, err).map(|_| ()),
        Command::Inverse => cmd_inverse(cfg, out, err).map(|_| ()),
        Command::Check => cmd_check(cfg, out).map(|_| ()),
        Command::Roundtrip => cmd_roundtrip(cfg, out, err).map(|_| ()),
    })
}

fn resample(p: &BoundaryProblem, nodes: usize) -> CliResult<BoundaryProblem> {
    let grid = uniform_grid(nodes);
    let q = grid.iter().map(|&x| p.q_at(x)).collect();
    Ok(BoundaryProblem::new(grid, q, p.h().clone(), p.big_h().clone(), p.selfadjoint_hint())?)
}

/// Brings `omega` to diagonal form when needed; returns the unitary used.
fn diagonalized(p: &BoundaryProblem, tol: &Tolerances) -> CliResult<(BoundaryProblem, Option<CMat>)> {
    if compute_omega(p, tol).diagonal {
        return Ok((p.clone(), None));
    }
    let (pd, u) = p.diagonalize_omega()?;
    Ok((pd, Some(u)))
}

fn cnum(z: C64) -> String {
    if z.im == 0.0 {
        format!("{:.10e}", z.re)
    } else {
        format!("{:.10e}{:+.10e}i", z.re, z.im)
    }
}

fn cmat_json(a: &CMat) -> serde_json::Value {
    let rows: Vec<serde_json::Value> =
        (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| json!([a[(i, j)].re, a[(i, j)].im])).collect()).collect();
    serde_json::Value::Array(rows)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Spec(SpecError::Io(format!("{}: {e}", path.display()))))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_conditions(out: &mut (dyn Write + Send), rep: &ConditionReport) -> std::io::Result<()> {
    writeln!(out, "condition  verdict        detail")?;
    if let Some(a) = &rep.a {
        let worst = a.sequences.iter().map(|s| format!("{} {:.2e}/{:.2e}", s.name, s.upper_tail, s.lower_tail)).collect::<Vec<_>>();
        writeln!(out, "A          {:<13}  {}", a.verdict.as_str(), worst.join(", "))?;
    }
    if let Some(r) = &rep.r {
        let detail = match r.first_failure {
            Some((n, q)) => {
                let row = r.rows.iter().find(|w| w.n == n && w.q == q).expect("failing row");
                format!("first failure at ({n}, {q}): rank {} vs multiplicity {}", row.rank, row.multiplicity)
            }
            None => format!("{} rows consistent", r.rows.len()),
        };
        writeln!(out, "R          {:<13}  {detail}", r.verdict.as_str())?;
    }
    if let Some(s) = &rep.s {
        writeln!(
            out,
            "S          {:<13}  max |Im lambda| {:.2e}, hermitian defect {:.2e}, min eigenvalue {:.2e}",
            s.verdict.as_str(),
            s.max_imag,
            s.hermitian_defect,
            s.min_eigenvalue
        )?;
    }
    if let Some(c) = &rep.c {
        writeln!(
            out,
            "C          {:<13}  {} functions over {} bands, sigma_min {:.3e}",
            c.verdict.as_str(),
            c.functions,
            c.n_bands,
            c.sigma_min
        )?;
    }
    if let Some(st) = &rep.structural {
        writeln!(
            out,
            "structural residuals: kernel {:.2e}, orthonormal {:.2e}, orthogonal {:.2e}, weyl dual {:.2e} ({} samples)",
            st.kernel, st.orthonormal, st.orthogonal, st.weyl_dual, st.weyl_samples
        )?;
    }
    writeln!(out, "max ||alpha_nq||: {:.6e}", rep.assumption2_bound)
}

fn rho_csv(data: &SpectralData) -> String {
    let mut s = String::from("n,q,re_rho,im_rho,residual\n");
    for e in &data.entries {
        let residual = if e.n == 0 {
            String::new()
        } else {
            let n = e.n as f64;
            let w = data.omega[e.q - 1] / std::f64::consts::PI;
            format!("{:.16e}", (n * (e.rho - C64::new(n, 0.0) - w / n)).norm())
        };
        let _ = writeln!(s, "{},{},{:.16e},{:.16e},{residual}", e.n, e.q, e.rho.re, e.rho.im);
    }
    s
}

fn xi_csv(rec: &ReconstructionResult) -> String {
    let mut s = String::from("n,xi\n");
    for (n, v) in rec.xi.xi.iter().enumerate() {
        let _ = writeln!(s, "{n},{v:.16e}");
    }
    s
}

fn qrec_csv(rec: &ReconstructionResult) -> String {
    let m = rec.h_rec.nrows();
    let mut s = String::from("x");
    for i in 1..=m {
        for j in 1..=m {
            let _ = write!(s, ",re_q{i}{j},im_q{i}{j}");
        }
    }
    s.push_str(",residual,cond\n");
    for (k, x) in rec.grid.iter().enumerate() {
        let _ = write!(s, "{x:.16e}");
        for i in 0..m {
            for j in 0..m {
                let z = rec.q_rec[k][(i, j)];
                let _ = write!(s, ",{:.16e},{:.16e}", z.re, z.im);
            }
        }
        let _ = writeln!(s, ",{:.16e},{:.16e}", rec.residuals[k], rec.conds[k]);
    }
    s
}

pub fn cmd_forward(cfg: &CliConfig, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<SpectralData> {
    let n_max = cfg.n_max.unwrap_or(DEFAULT_NMAX);
    if n_max < 2 {
        return Err(CliError::Usage("--nmax must be at least 2".into()));
    }
    let mut problem = read_problem(cfg.problem_path()?)?;
    if let Some(g) = cfg.grid_size {
        problem = resample(&problem, g)?;
    }
    let omega = compute_omega(&problem, &cfg.tol);
    let (problem, basis) = diagonalized(&problem, &cfg.tol)?;
    if basis.is_some() {
        writeln!(
            err,
            "note: omega is not diagonal (off-diagonal {:.3e}); data refers to the basis U^* Q U recorded in the report",
            omega.off_diagonal
        )?;
    }
    let located = locate_eigenvalues(&problem, n_max, &cfg.tol)?;
    let data = weight_matrices(&problem, &located, &cfg.tol)?;
    let mut report = check_conditions(&data, &[Condition::R, Condition::S], &cfg.tol);
    report.structural = Some(check_structural(&problem, &data, &cfg.tol)?);

    writeln!(out, "forward: m = {}, n_max = {n_max}, {} clusters", data.m, data.cluster_count())?;
    writeln!(out, "omega = [{}]", data.omega.iter().map(|&w| cnum(w)).collect::<Vec<_>>().join(", "))?;
    writeln!(out, "   n  q  lambda")?;
    for e in data.entries.iter().filter(|e| e.n <= 5) {
        writeln!(out, "{:>4} {:>2}  {}", e.n, e.q, cnum(e.lambda))?;
    }
    print_conditions(out, &report)?;

    match &cfg.out {
        Some(path) => {
            write_spectral(path, &data)?;
            let doc = json!({
                "conditions": report,
                "omega_basis": basis.as_ref().map(cmat_json),
            });
            let text = serde_json::to_string_pretty(&doc).expect("report serializes");
            write_text(&with_suffix(&cfg.plot_prefix(), ".report.json"), &text)?;
        }
        None => out.write_all(matspec_core::io::write_spectral_string(&data)?.as_bytes())?,
    }
    if cfg.emit_plots {
        write_text(&with_suffix(&cfg.plot_prefix(), "_rho.csv"), &rho_csv(&data))?;
    }
    Ok(data)
}

/// Refuses data for which the main equation cannot be uniquely solvable.
fn rank_gate(data: &SpectralData, tol: &Tolerances) -> CliResult<()> {
    let r = check_r(data, tol);
    if let Some((n, q)) = r.first_failure {
        let row = r.rows.iter().find(|w| w.n == n && w.q == q).expect("failing row");
        return Err(CliError::RankDeficient { n, q, rank: row.rank, multiplicity: row.multiplicity });
    }
    Ok(())
}

fn inverse_runs(
    cfg: &CliConfig,
    data: &SpectralData,
    grid: &[f64],
    err: &mut (dyn Write + Send),
) -> CliResult<Vec<ReconstructionResult>> {
    rank_gate(data, &cfg.tol)?;
    let model = ModelProblem::from_data(data);
    let model_data = model_spectral_data(&model, data.n_max, &cfg.tol)?;
    let mut runs = Vec::new();
    for n_trunc in cfg.truncations(data.n_max)? {
        let rec = reconstruct(data, &model, &model_data, n_trunc, grid, &cfg.tol, cfg.derivative)?;
        if cfg.xi_gate && rec.xi.tail_growing() {
            return Err(CliError::Refused(format!(
                "xi tail grows (lower {:.3e}, upper {:.3e}); rerun without --xi-gate to reconstruct anyway",
                rec.xi.lower, rec.xi.upper
            )));
        }
        for w in &rec.warnings {
            writeln!(err, "warning (N_trunc = {n_trunc}): {w}")?;
        }
        runs.push(rec);
    }
    Ok(runs)
}

fn print_reconstruction(out: &mut (dyn Write + Send), rec: &ReconstructionResult) -> std::io::Result<()> {
    let fmt_mat = |a: &CMat| {
        (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| cnum(a[(i, j)])).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("; ")
    };
    writeln!(out, "N_trunc = {}, Omega = {:.6e}, tail = {:.3e}", rec.truncation, rec.omega(), rec.tail)?;
    writeln!(
        out,
        "max residual {:.3e}, max condition {:.3e}",
        rec.residuals.iter().cloned().fold(0.0, f64::max),
        rec.conds.iter().cloned().fold(0.0, f64::max)
    )?;
    writeln!(out, "h_rec = [{}]", fmt_mat(&rec.h_rec))?;
    writeln!(out, "H_rec = [{}]", fmt_mat(&rec.big_h_rec))
}

pub fn cmd_inverse(cfg: &CliConfig, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<ReconstructionResult> {
    let mut data = read_spectral(cfg.data_path()?, &cfg.tol)?;
    if let Some(n) = cfg.n_max {
        if n > data.n_max {
            return Err(CliError::Usage(format!("--nmax {n} exceeds the {} bands in the data", data.n_max)));
        }
        data = data.truncated(n)?;
    }
    let grid = cfg.grid();
    let mut runs = inverse_runs(cfg, &data, &grid, err)?;
    for rec in &runs {
        print_reconstruction(out, rec)?;
    }
    let rec = runs.pop().expect("at least one truncation");
    if let Some(path) = &cfg.out {
        write_result(path, &rec)?;
    }
    if cfg.emit_plots {
        let prefix = cfg.plot_prefix();
        write_text(&with_suffix(&prefix, "_xi.csv"), &xi_csv(&rec))?;
        write_text(&with_suffix(&prefix, "_qrec.csv"), &qrec_csv(&rec))?;
    }
    Ok(rec)
}

pub fn cmd_check(cfg: &CliConfig, out: &mut (dyn Write + Send)) -> CliResult<ConditionReport> {
    let data = read_spectral(cfg.data_path()?, &cfg.tol)?;
    let which = if cfg.conditions.is_empty() { vec![Condition::A, Condition::R, Condition::S, Condition::C] } else { cfg.conditions.clone() };
    let report = check_conditions(&data, &which, &cfg.tol);
    writeln!(out, "check: m = {}, n_max = {}", data.m, data.n_max)?;
    print_conditions(out, &report)?;
    let machine = serde_json::to_string(&report).expect("report serializes");
    writeln!(out, "--- machine ---")?;
    writeln!(out, "{machine}")?;
    if let Some(path) = &cfg.out {
        write_text(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    let indeterminate = report.verdicts().iter().any(|(_, v)| *v == Verdict::Indeterminate);
    if indeterminate {
        writeln!(out, "some conditions are indeterminate on the available bands")?;
    }
    if report.all_pass() {
        Ok(report)
    } else {
        Err(CliError::ChecksFailed)
    }
}

/// Errors of one roundtrip at a fixed truncation, in the input basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripRow {
    pub n_trunc: usize,
    pub l2: f64,
    pub sup: f64,
    pub h_err: f64,
    pub big_h_err: f64,
    pub tail: f64,
    pub omega: f64,
}

#[derive(Debug, Clone)]
pub struct RoundtripReport {
    pub rows: Vec<RoundtripRow>,
    /// Reconstruction at the last truncation, in the input basis.
    pub last: ReconstructionResult,
}

fn trapezoid_l2(grid: &[f64], err: &[f64]) -> f64 {
    grid.windows(2)
        .zip(err.windows(2))
        .map(|(g, e)| 0.5 * (g[1] - g[0]) * (e[0] * e[0] + e[1] * e[1]))
        .sum::<f64>()
        .sqrt()
}

pub fn cmd_roundtrip(cfg: &CliConfig, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<RoundtripReport> {
    let problem = read_problem(cfg.problem_path()?)?;
    let wanted = cfg.sweep.iter().copied().chain(cfg.n_trunc).max().unwrap_or(DEFAULT_NMAX);
    let n_max = cfg.n_max.unwrap_or(wanted.max(2));
    let (pd, basis) = diagonalized(&problem, &cfg.tol)?;
    let data = weight_matrices(&pd, &locate_eigenvalues(&pd, n_max, &cfg.tol)?, &cfg.tol)?;
    let grid = cfg.grid();
    let back = |a: &CMat| match &basis {
        Some(u) => u * a * u.adjoint(),
        None => a.clone(),
    };
    let runs = inverse_runs(cfg, &data, &grid, err)?;
    let mut rows = Vec::new();
    let mut last = None;
    for mut rec in runs {
        rec.q_rec = rec.q_rec.iter().map(back).collect();
        rec.eps0 = rec.eps0.iter().map(back).collect();
        rec.h_rec = back(&rec.h_rec);
        rec.big_h_rec = back(&rec.big_h_rec);
        let pointwise: Vec<f64> = grid.iter().zip(&rec.q_rec).map(|(&x, q)| (q - problem.q_at(x)).norm()).collect();
        rows.push(RoundtripRow {
            n_trunc: rec.truncation,
            l2: trapezoid_l2(&grid, &pointwise),
            sup: pointwise.iter().cloned().fold(0.0, f64::max),
            h_err: max_abs(&(&rec.h_rec - problem.h())),
            big_h_err: max_abs(&(&rec.big_h_rec - problem.big_h())),
            tail: rec.tail,
            omega: rec.omega(),
        });
        last = Some(rec);
    }
    let last = last.expect("at least one truncation");

    writeln!(out, "roundtrip: m = {}, n_max = {n_max}, grid {}", problem.m(), grid.len())?;
    writeln!(out, "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12}", "N_trunc", "L2", "sup", "h", "H", "tail")?;
    let mut table = String::from("n_trunc,l2,sup,h,H,tail,omega\n");
    for r in &rows {
        writeln!(
            out,
            "{:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.n_trunc, r.l2, r.sup, r.h_err, r.big_h_err, r.tail
        )?;
        let _ = writeln!(table, "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.n_trunc, r.l2, r.sup, r.h_err, r.big_h_err, r.tail, r.omega);
    }
    if let Some(path) = &cfg.out {
        let doc = json!({
            "rows": rows.iter().map(|r| json!({
                "n_trunc": r.n_trunc, "l2": r.l2, "sup": r.sup, "h": r.h_err, "H": r.big_h_err, "tail": r.tail, "Omega": r.omega,
            })).collect::<Vec<_>>(),
            "omega_basis": basis.as_ref().map(cmat_json),
        });
        write_text(path, &serde_json::to_string_pretty(&doc).expect("report serializes"))?;
    }
    if cfg.emit_plots {
        let prefix = cfg.plot_prefix();
        write_text(&with_suffix(&prefix, "_sweep.csv"), &table)?;
        write_text(&with_suffix(&prefix, "_xi.csv"), &xi_csv(&last))?;
        let mut e = String::from("x,error\n");
        for (&x, q) in grid.iter().zip(&last.q_rec) {
            let _ = writeln!(e, "{x:.16e},{:.16e}", (q - problem.q_at(x)).norm());
        }
        write_text(&with_suffix(&prefix, "_error.csv"), &e)?;
    }
    Ok(RoundtripReport { rows, last })
}
