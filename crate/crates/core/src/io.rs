//! Text formats for problems, spectral data and reconstruction results.
//!
//! Documents are JSON. Complex numbers are `[re, im]`, matrices are arrays
//! of rows, and every float is written with 17 significant digits so a
//! read-write cycle reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::error::{Result, SpecError};
use crate::inverse::ReconstructionResult;
use crate::linalg::{CMat, C64};
use crate::problem::BoundaryProblem;
use crate::spectral::{SpectralData, SpectralDatum};
use crate::tolerances::Tolerances;

pub const FORMAT_VERSION: &str = "1";

/// Output tree with a fixed key order.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Arr(Vec<Node>),
    Obj(Vec<(String, Node)>),
}

impl Node {
    pub fn obj<K: Into<String>>(fields: Vec<(K, Node)>) -> Self {
        Node::Obj(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// A float, or `null` when it is not finite.
    pub fn float_or_null(x: f64) -> Self {
        if x.is_finite() {
            Node::Float(x)
        } else {
            Node::Null
        }
    }

    fn is_scalar(&self) -> bool {
        !matches!(self, Node::Arr(_) | Node::Obj(_))
    }
}

fn format_float(x: f64) -> String {
    // {:e} of Rust is correctly rounded, so 17 digits always round-trip
    format!("{x:.16e}")
}

fn write_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialises"));
}

fn emit(node: &Node, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match node {
        Node::Null => out.push_str("null"),
        Node::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Node::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Node::Float(x) => out.push_str(&format_float(*x)),
        Node::Str(s) => write_str(out, s),
        Node::Arr(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.len() <= 4 && items.iter().all(Node::is_scalar) {
                out.push('[');
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    emit(it, indent, out);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, it) in items.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    emit(it, indent + 1, out);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&pad(indent));
                out.push(']');
            }
        }
        Node::Obj(fields) => {
            if fields.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, v)) in fields.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_str(out, k);
                out.push_str(": ");
                emit(v, indent + 1, out);
                if i + 1 < fields.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Canonical text of a node, with a trailing newline.
pub fn to_canonical(node: &Node) -> String {
    let mut out = String::new();
    emit(node, 0, &mut out);
    out.push('\n');
    out
}

fn check_finite(x: f64, path: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(SpecError::InvalidProblem(format!("{path}: non-finite value {x}")))
    }
}

fn complex_node(z: C64, path: &str) -> Result<Node> {
    Ok(Node::Arr(vec![Node::Float(check_finite(z.re, path)?), Node::Float(check_finite(z.im, path)?)]))
}

fn matrix_node(a: &CMat, path: &str) -> Result<Node> {
    let rows = (0..a.nrows())
        .map(|i| {
            let row = (0..a.ncols()).map(|j| complex_node(a[(i, j)], &format!("{path}[{i}][{j}]"))).collect::<Result<Vec<_>>>()?;
            Ok(Node::Arr(row))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Node::Arr(rows))
}

fn floats_node(v: &[f64], path: &str) -> Result<Node> {
    Ok(Node::Arr(v.iter().enumerate().map(|(i, &x)| check_finite(x, &format!("{path}[{i}]")).map(Node::Float)).collect::<Result<_>>()?))
}

// ---- reading ----

fn perr(path: &str, msg: impl Into<String>) -> SpecError {
    SpecError::ParseError { line: 0, path: path.to_string(), msg: msg.into() }
}

fn parse_document(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| SpecError::ParseError { line: e.line(), path: String::new(), msg: e.to_string() })
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    let map = obj.as_object().ok_or_else(|| perr(path, "expected an object"))?;
    map.get(key).ok_or_else(|| perr(&join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn check_version(doc: &Value) -> Result<()> {
    let v = field(doc, "version", "")?;
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(perr("version", "expected a string")),
    };
    if s != FORMAT_VERSION {
        return Err(SpecError::UnsupportedVersion(s));
    }
    Ok(())
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| perr(path, "expected a non-negative integer"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| perr(path, "expected a number"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| perr(path, "expected an array"))
}

fn as_complex(v: &Value, path: &str) -> Result<C64> {
    let a = as_array(v, path)?;
    if a.len() != 2 {
        return Err(SpecError::DimensionMismatch(format!("{path}: complex number needs [re, im], found {} values", a.len())));
    }
    Ok(C64::new(as_f64(&a[0], &format!("{path}[0]"))?, as_f64(&a[1], &format!("{path}[1]"))?))
}

fn as_matrix(v: &Value, m: usize, path: &str) -> Result<CMat> {
    let rows = as_array(v, path)?;
    if rows.len() != m {
        return Err(SpecError::DimensionMismatch(format!("{path}: expected {m} rows, found {}", rows.len())));
    }
    let mut out = CMat::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let cols = as_array(row, &rp)?;
        if cols.len() != m {
            return Err(SpecError::DimensionMismatch(format!("{rp}: expected {m} columns, found {}", cols.len())));
        }
        for (j, z) in cols.iter().enumerate() {
            out[(i, j)] = as_complex(z, &format!("{rp}[{j}]"))?;
        }
    }
    Ok(out)
}

// ---- problems ----

pub fn problem_node(p: &BoundaryProblem) -> Result<Node> {
    let q = p.q().iter().enumerate().map(|(i, a)| matrix_node(a, &format!("Q[{i}]"))).collect::<Result<Vec<_>>>()?;
    Ok(Node::obj(vec![
        ("version", Node::Str(FORMAT_VERSION.into())),
        ("m", Node::Int(p.m() as i64)),
        ("grid", floats_node(p.grid(), "grid")?),
        ("Q", Node::Arr(q)),
        ("h", matrix_node(p.h(), "h")?),
        ("H", matrix_node(p.big_h(), "H")?),
        ("selfadjoint_hint", Node::Bool(p.selfadjoint_hint())),
    ]))
}

pub fn write_problem_string(p: &BoundaryProblem) -> Result<String> {
    Ok(to_canonical(&problem_node(p)?))
}

pub fn read_problem_str(text: &str) -> Result<BoundaryProblem> {
    let doc = parse_document(text)?;
    check_version(&doc)?;
    let m = as_usize(field(&doc, "m", "")?, "m")?;
    let grid_v = as_array(field(&doc, "grid", "")?, "grid")?;
    let grid = grid_v.iter().enumerate().map(|(i, x)| as_f64(x, &format!("grid[{i}]"))).collect::<Result<Vec<_>>>()?;
    let q_v = as_array(field(&doc, "Q", "")?, "Q")?;
    if q_v.len() != grid.len() {
        return Err(SpecError::DimensionMismatch(format!("Q: {} nodes for a grid of {}", q_v.len(), grid.len())));
    }
    let q = q_v.iter().enumerate().map(|(i, a)| as_matrix(a, m, &format!("Q[{i}]"))).collect::<Result<Vec<_>>>()?;
    let h = as_matrix(field(&doc, "h", "")?, m, "h")?;
    let big_h = as_matrix(field(&doc, "H", "")?, m, "H")?;
    let hint = field(&doc, "selfadjoint_hint", "")?.as_bool().ok_or_else(|| perr("selfadjoint_hint", "expected a boolean"))?;
    BoundaryProblem::new(grid, q, h, big_h, hint)
}

// ---- spectral data ----

pub fn spectral_node(d: &SpectralData) -> Result<Node> {
    let omega = d.omega.iter().enumerate().map(|(q, z)| complex_node(*z, &format!("omega[{q}]"))).collect::<Result<Vec<_>>>()?;
    let entries = d
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let path = format!("entries[{k}]");
            Ok(Node::obj(vec![
                ("n", Node::Int(e.n as i64)),
                ("q", Node::Int(e.q as i64)),
                ("lambda", complex_node(e.lambda, &format!("{path}.lambda"))?),
                ("alpha", matrix_node(&e.alpha, &format!("{path}.alpha"))?),
                ("multiplicity", Node::Int(e.multiplicity as i64)),
                ("cluster_id", Node::Int(e.cluster_id as i64)),
            ]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Node::obj(vec![
        ("version", Node::Str(FORMAT_VERSION.into())),
        ("m", Node::Int(d.m as i64)),
        ("n_max", Node::Int(d.n_max as i64)),
        ("omega", Node::Arr(omega)),
        ("entries", Node::Arr(entries)),
    ]))
}

pub fn write_spectral_string(d: &SpectralData) -> Result<String> {
    Ok(to_canonical(&spectral_node(d)?))
}

/// Parses spectral data; the channel groups use `tol.omega_group_tol`.
pub fn read_spectral_str(text: &str, tol: &Tolerances) -> Result<SpectralData> {
    let doc = parse_document(text)?;
    check_version(&doc)?;
    let m = as_usize(field(&doc, "m", "")?, "m")?;
    let n_max = as_usize(field(&doc, "n_max", "")?, "n_max")?;
    let omega_v = as_array(field(&doc, "omega", "")?, "omega")?;
    if omega_v.len() != m {
        return Err(SpecError::DimensionMismatch(format!("omega: {} values, expected m = {m}", omega_v.len())));
    }
    let omega = omega_v.iter().enumerate().map(|(q, z)| as_complex(z, &format!("omega[{q}]"))).collect::<Result<Vec<_>>>()?;
    let entries_v = as_array(field(&doc, "entries", "")?, "entries")?;
    let mut entries = Vec::with_capacity(entries_v.len());
    for (k, e) in entries_v.iter().enumerate() {
        let path = format!("entries[{k}]");
        let get = |key: &str| -> Result<&Value> {
            e.as_object()
                .ok_or_else(|| perr(&path, "expected an object"))?
                .get(key)
                .ok_or_else(|| SpecError::DimensionMismatch(format!("{path}.{key}: missing")))
        };
        let n = as_usize(get("n")?, &format!("{path}.n"))?;
        let q = as_usize(get("q")?, &format!("{path}.q"))?;
        let lambda = as_complex(get("lambda")?, &format!("{path}.lambda"))?;
        let alpha = as_matrix(get("alpha")?, m, &format!("{path}.alpha"))?;
        let multiplicity = as_usize(get("multiplicity")?, &format!("{path}.multiplicity"))?;
        let cluster_id = as_usize(get("cluster_id")?, &format!("{path}.cluster_id"))?;
        entries.push(SpectralDatum::new(n, q, lambda, alpha, multiplicity, cluster_id));
    }
    SpectralData::new(m, n_max, omega, entries, tol.omega_group_tol)
}

// ---- results ----

pub fn result_node(r: &ReconstructionResult) -> Result<Node> {
    let m = r.h_rec.nrows();
    let seq = |v: &[CMat], name: &str| -> Result<Node> {
        Ok(Node::Arr(v.iter().enumerate().map(|(i, a)| matrix_node(a, &format!("{name}[{i}]"))).collect::<Result<_>>()?))
    };
    let floats = |v: &[f64]| Node::Arr(v.iter().map(|&x| Node::float_or_null(x)).collect());
    let diagnostics = Node::obj(vec![
        ("truncation", Node::Int(r.truncation as i64)),
        ("Omega", Node::float_or_null(r.xi.omega)),
        ("xi", floats(&r.xi.xi)),
        ("tail", Node::float_or_null(r.tail)),
        ("eps0_sup", Node::float_or_null(r.eps0_norm)),
        ("residual_max", Node::float_or_null(r.residuals.iter().cloned().fold(0.0, f64::max))),
        ("cond_max", Node::float_or_null(r.conds.iter().cloned().fold(0.0, f64::max))),
        ("residuals", floats(&r.residuals)),
        ("derivative", Node::Str(format!("{:?}", r.derivative))),
        ("warnings", Node::Arr(r.warnings.iter().map(|w| Node::Str(w.to_string())).collect())),
    ]);
    Ok(Node::obj(vec![
        ("version", Node::Str(FORMAT_VERSION.into())),
        ("m", Node::Int(m as i64)),
        ("grid", floats_node(&r.grid, "grid")?),
        ("Q_rec", seq(&r.q_rec, "Q_rec")?),
        ("h_rec", matrix_node(&r.h_rec, "h_rec")?),
        ("H_rec", matrix_node(&r.big_h_rec, "H_rec")?),
        ("eps0", seq(&r.eps0, "eps0")?),
        ("diagnostics", diagnostics),
    ]))
}

pub fn write_result_string(r: &ReconstructionResult) -> Result<String> {
    Ok(to_canonical(&result_node(r)?))
}

/// The recovered problem stored in a result file.
pub fn read_result_problem_str(text: &str) -> Result<BoundaryProblem> {
    let doc = parse_document(text)?;
    check_version(&doc)?;
    let m = as_usize(field(&doc, "m", "")?, "m")?;
    let grid_v = as_array(field(&doc, "grid", "")?, "grid")?;
    let grid = grid_v.iter().enumerate().map(|(i, x)| as_f64(x, &format!("grid[{i}]"))).collect::<Result<Vec<_>>>()?;
    let q_v = as_array(field(&doc, "Q_rec", "")?, "Q_rec")?;
    let q = q_v.iter().enumerate().map(|(i, a)| as_matrix(a, m, &format!("Q_rec[{i}]"))).collect::<Result<Vec<_>>>()?;
    let h = as_matrix(field(&doc, "h_rec", "")?, m, "h_rec")?;
    let big_h = as_matrix(field(&doc, "H_rec", "")?, m, "H_rec")?;
    BoundaryProblem::new(grid, q, h, big_h, false)
}

// ---- files ----

pub fn read_problem(path: &Path) -> Result<BoundaryProblem> {
    read_problem_str(&std::fs::read_to_string(path)?)
}

pub fn write_problem(path: &Path, p: &BoundaryProblem) -> Result<()> {
    Ok(std::fs::write(path, write_problem_string(p)?)?)
}

pub fn read_spectral(path: &Path, tol: &Tolerances) -> Result<SpectralData> {
    read_spectral_str(&std::fs::read_to_string(path)?, tol)
}

pub fn write_spectral(path: &Path, d: &SpectralData) -> Result<()> {
    Ok(std::fs::write(path, write_spectral_string(d)?)?)
}

pub fn write_result(path: &Path, r: &ReconstructionResult) -> Result<()> {
    Ok(std::fs::write(path, write_result_string(r)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_every_bit() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 5e-324, 1.7976931348623157e308, -0.0, 2.0f64.sqrt()] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
            let v: Value = serde_json::from_str(&s).unwrap();
            assert_eq!(v.as_f64().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn short_scalar_arrays_stay_inline() {
        let n = Node::obj(vec![("z", Node::Arr(vec![Node::Float(1.0), Node::Float(-2.5)])), ("k", Node::Int(3))]);
        assert_eq!(to_canonical(&n), "{\n  \"z\": [1.0000000000000000e0, -2.5000000000000000e0],\n  \"k\": 3\n}\n");
    }
}
