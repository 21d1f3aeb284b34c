//! JSON model and report files, CSV exports.
//!
//! Model files are canonical: keys sorted, terms in canonical order, floats in
//! shortest round-trip form. A double-double scalar whose low word is nonzero
//! is written as a `[hi, lo]` pair, so saving a loaded file reproduces it
//! byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::delay_opt::LandscapeRow;
use crate::error::{Error, Result};
use crate::iodirka::{ReductionReport, TraceEntry};
use crate::model::{pole_residue_from_state_space, DelayBlock, DelayedModel, ImpulseResponse, PoleResidueModel, StateSpaceModel, Term};
use crate::precision::{dd, dd_from_parts, Cdd, Dd};

/// Any of the three model file kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    StateSpace(StateSpaceModel),
    PoleResidue(PoleResidueModel),
    Delayed(DelayedModel),
}

impl ModelFile {
    /// Pole/residue form; state-space files are diagonalized, delayed files
    /// give their core.
    pub fn pole_residue(&self) -> Result<PoleResidueModel> {
        match self {
            ModelFile::StateSpace(ss) => pole_residue_from_state_space(ss),
            ModelFile::PoleResidue(m) => Ok(m.clone()),
            ModelFile::Delayed(d) => Ok(d.core.clone()),
        }
    }

    /// Delayed form; undelayed files get all-zero, masked-off delay blocks.
    pub fn delayed(&self) -> Result<DelayedModel> {
        match self {
            ModelFile::Delayed(d) => Ok(d.clone()),
            other => Ok(DelayedModel::undelayed(other.pole_residue()?)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::StateSpace(_) => "state_space",
            ModelFile::PoleResidue(_) => "pole_residue",
            ModelFile::Delayed(_) => "delayed",
        }
    }
}

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parses a model file. Syntax errors carry line and column, schema errors
/// the JSON path of the offending field.
pub fn parse_model(text: &str) -> Result<ModelFile> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| parse_err("$", format!("line {} column {}: {e}", e.line(), e.column())))?;
    model_from_value(&v, "$")
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| match e {
        Error::Parse { path: p, message } => Error::Parse {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_model(path: &Path, m: &ModelFile) -> Result<()> {
    write_text(path, &model_to_json(m))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Canonical pretty JSON with a trailing newline.
pub fn model_to_json(m: &ModelFile) -> String {
    to_pretty(&model_to_value(m))
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| parse_err(path, format!("missing field \"{key}\"")))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| parse_err(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| parse_err(path, "expected an array"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    let x = v.as_f64().ok_or_else(|| parse_err(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(parse_err(path, "number is not finite"));
    }
    Ok(x)
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| parse_err(path, "expected a nonnegative integer"))
}

fn as_bool(v: &Value, path: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| parse_err(path, "expected true or false"))
}

fn as_matrix(v: &Value, path: &str) -> Result<Vec<Vec<f64>>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let p = format!("{path}[{i}]");
            as_array(row, &p)?
                .iter()
                .enumerate()
                .map(|(j, x)| as_f64(x, &format!("{p}[{j}]")))
                .collect()
        })
        .collect()
}

fn as_reals(v: &Value, path: &str) -> Result<Vec<f64>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{path}[{i}]")))
        .collect()
}

fn as_bools(v: &Value, path: &str) -> Result<Vec<bool>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_bool(x, &format!("{path}[{i}]")))
        .collect()
}

/// A number, or a `[hi, lo]` double-double pair.
fn as_dd(v: &Value, path: &str) -> Result<Dd> {
    match v {
        Value::Array(parts) if parts.len() == 2 => Ok(dd_from_parts(
            as_f64(&parts[0], &format!("{path}[0]"))?,
            as_f64(&parts[1], &format!("{path}[1]"))?,
        )),
        Value::Array(_) => Err(parse_err(path, "expected a number or a [hi, lo] pair")),
        _ => Ok(dd(as_f64(v, path)?)),
    }
}

fn as_cdd(v: &Value, path: &str) -> Result<Cdd> {
    let parts = as_array(v, path)?;
    if parts.len() != 2 {
        return Err(parse_err(path, "expected a [re, im] pair"));
    }
    Ok(Cdd::new(as_dd(&parts[0], &format!("{path}[0]"))?, as_dd(&parts[1], &format!("{path}[1]"))?))
}

fn as_cvec(v: &Value, path: &str) -> Result<Vec<Cdd>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_cdd(x, &format!("{path}[{i}]")))
        .collect()
}

fn with_path<T>(r: Result<T>, path: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { .. } => e,
        other => parse_err(path, other.to_string()),
    })
}

/// Decodes a model object found at `path` inside a larger document.
pub fn model_from_value(v: &Value, path: &str) -> Result<ModelFile> {
    let obj = as_object(v, path)?;
    let kind_path = format!("{path}.kind");
    let kind = field(obj, "kind", path)?
        .as_str()
        .ok_or_else(|| parse_err(&kind_path, "expected a string"))?;
    match kind {
        "state_space" => {
            let m = |k: &str| as_matrix(field(obj, k, path)?, &format!("{path}.{k}"));
            let ss = StateSpaceModel::new(m("E")?, m("A")?, m("B")?, m("C")?);
            Ok(ModelFile::StateSpace(with_path(ss, path)?))
        }
        "pole_residue" => Ok(ModelFile::PoleResidue(pole_residue_from_value(obj, path)?)),
        "delayed" => {
            let core_path = format!("{path}.core");
            let core = pole_residue_from_value(as_object(field(obj, "core", path)?, &core_path)?, &core_path)?;
            let block = |d: &str, m: &str| -> Result<DelayBlock> {
                let delays = as_reals(field(obj, d, path)?, &format!("{path}.{d}"))?;
                let mask = as_bools(field(obj, m, path)?, &format!("{path}.{m}"))?;
                with_path(DelayBlock::new(delays, mask), &format!("{path}.{d}"))
            };
            let model = DelayedModel::new(core, block("input_delays", "input_mask")?, block("output_delays", "output_mask")?);
            Ok(ModelFile::Delayed(with_path(model, path)?))
        }
        other => Err(parse_err(
            &kind_path,
            format!("unknown kind \"{other}\" (expected state_space, pole_residue or delayed)"),
        )),
    }
}

fn pole_residue_from_value(obj: &Map<String, Value>, path: &str) -> Result<PoleResidueModel> {
    let ny = as_usize(field(obj, "ny", path)?, &format!("{path}.ny"))?;
    let nu = as_usize(field(obj, "nu", path)?, &format!("{path}.nu"))?;
    let terms_path = format!("{path}.terms");
    let terms = as_array(field(obj, "terms", path)?, &terms_path)?
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let p = format!("{terms_path}[{k}]");
            let o = as_object(t, &p)?;
            let pole = as_cdd(field(o, "pole", &p)?, &format!("{p}.pole"))?;
            let left = as_cvec(field(o, "left", &p)?, &format!("{p}.left"))?;
            let right = as_cvec(field(o, "right", &p)?, &format!("{p}.right"))?;
            Ok(Term::new(pole, left, right))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = with_path(PoleResidueModel::new(terms, ny, nu), path)?;
    if m.conjugate_partners().is_none() {
        return Err(parse_err(path, "terms are not conjugate-closed"));
    }
    Ok(m.canonicalized())
}

fn dd_value(x: Dd) -> Value {
    // conjugation turns 0 into -0; both spell the same model
    if x.hi() == 0.0 {
        json!(0.0)
    } else if x.lo() == 0.0 {
        json!(x.hi())
    } else {
        json!([x.hi(), x.lo()])
    }
}

fn cdd_value(z: &Cdd) -> Value {
    json!([dd_value(z.re), dd_value(z.im)])
}

pub fn pole_residue_to_value(m: &PoleResidueModel) -> Value {
    let terms: Vec<Value> = m
        .terms()
        .iter()
        .map(|t| {
            json!({
                "pole": cdd_value(&t.pole),
                "left": t.left.iter().map(cdd_value).collect::<Vec<_>>(),
                "right": t.right.iter().map(cdd_value).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({"kind": "pole_residue", "terms": terms, "ny": m.ny(), "nu": m.nu()})
}

pub fn delayed_to_value(d: &DelayedModel) -> Value {
    json!({
        "kind": "delayed",
        "core": pole_residue_to_value(&d.core),
        "input_delays": d.input_delays.delays(),
        "input_mask": d.input_delays.mask(),
        "output_delays": d.output_delays.delays(),
        "output_mask": d.output_delays.mask(),
    })
}

pub fn model_to_value(m: &ModelFile) -> Value {
    match m {
        ModelFile::StateSpace(ss) => json!({"kind": "state_space", "E": ss.e, "A": ss.a, "B": ss.b, "C": ss.c}),
        ModelFile::PoleResidue(p) => pole_residue_to_value(p),
        ModelFile::Delayed(d) => delayed_to_value(d),
    }
}

/// `null` for the non-finite movements of the first iteration.
fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn trace_value(e: &TraceEntry) -> Value {
    json!({
        "iteration": e.iteration,
        "core": pole_residue_to_value(&e.core),
        "input_delays": e.input_delays,
        "output_delays": e.output_delays,
        "gap": e.gap,
        "irka_iterations": e.irka_iterations,
        "irka_converged": e.irka_converged,
        "pole_movement": finite_or_null(e.pole_movement),
        "delay_movement": finite_or_null(e.delay_movement),
    })
}

pub fn report_to_value(r: &ReductionReport) -> Value {
    json!({
        "model": delayed_to_value(&r.model),
        "gap": r.gap,
        "residuals": r.residuals,
        "loop_residuals": r.loop_residuals,
        "outer_iterations": r.outer_iterations,
        "trace": r.trace.iter().map(trace_value).collect::<Vec<_>>(),
        "converged": r.converged,
        "stopping_mode": r.stopping_mode,
    })
}

pub fn report_to_json(r: &ReductionReport) -> String {
    to_pretty(&report_to_value(r))
}

/// C `printf("%.12e")` formatting.
pub fn format_e12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// CSV with a `t` column followed by named columns, one row per time.
pub fn columns_csv(times: &[f64], columns: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("t");
    for (name, values) in columns {
        assert_eq!(values.len(), times.len(), "column {name} length");
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&format_e12(*t));
        for (_, values) in columns {
            out.push(',');
            out.push_str(&format_e12(values[k]));
        }
        out.push('\n');
    }
    out
}

/// Header `t,y[m][l]...`, channels in row-major `(m, l)` order.
pub fn impulse_csv(resp: &ImpulseResponse) -> String {
    let mut cols = Vec::new();
    for m in 0..resp.ny {
        for l in 0..resp.nu {
            cols.push((format!("y[{m}][{l}]"), resp.channel(m, l).to_vec()));
        }
    }
    columns_csv(&resp.times, &cols)
}

/// Header `tau_1..tau_nu,gamma_1..gamma_ny,objective`.
pub fn landscape_csv(rows: &[LandscapeRow], nu: usize, ny: usize) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=nu)
        .map(|i| format!("tau_{i}"))
        .chain((1..=ny).map(|i| format!("gamma_{i}")))
        .chain(std::iter::once("objective".to_string()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r
            .input_delays
            .iter()
            .chain(&r.output_delays)
            .chain(std::iter::once(&r.objective))
            .map(|x| format_e12(*x))
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
