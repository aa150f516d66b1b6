//! Python bindings for the resolvent calculus: operator expressions are
//! passed as the same JSON documents the command line tool consumes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rescomp::analysis::{gamma_sweep, inclusion_oracle, sweep_to_csv, OracleGrid, SweepConfig};
use rescomp::calculus::{resolvent, OperatorExpr, ReparamOptions};
use rescomp::cli::describe_report;
use rescomp::linalg::Vector;
use rescomp::operators::ResolventQuery;

fn parse_expr(expr_json: &str) -> PyResult<OperatorExpr> {
    serde_json::from_str(expr_json)
        .map_err(|e| PyValueError::new_err(format!("expression does not parse: {e}")))
}

fn parse_point(point: Vec<f64>) -> PyResult<Vector> {
    Vector::new(point).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Evaluates the resolvent of `gamma` times the operator described by
/// `expr_json` at `point`.
#[pyfunction]
fn resolvent_json(expr_json: &str, gamma: f64, point: Vec<f64>) -> PyResult<Vec<f64>> {
    let expr = parse_expr(expr_json)?;
    let x = parse_point(point)?;
    let q = ResolventQuery::new(gamma, x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let j = resolvent(&expr, &q, &ReparamOptions::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(j.as_slice().to_vec())
}

/// Solves the same resolvent inclusion by direct graph-membership search,
/// without using the composition formulas.
#[pyfunction]
fn oracle_json(expr_json: &str, gamma: f64, point: Vec<f64>) -> PyResult<Vec<f64>> {
    let expr = parse_expr(expr_json)?;
    let x = parse_point(point)?;
    let j = inclusion_oracle(&expr, gamma, &x, &OracleGrid::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(j.as_slice().to_vec())
}

/// Annotated tree description of an operator expression.
#[pyfunction]
fn describe_json(expr_json: &str) -> PyResult<String> {
    Ok(describe_report(&parse_expr(expr_json)?))
}

/// Runs a parameter sweep described by a JSON config (the `sweep`
/// experiment body without the `experiment`/`output` fields) and returns
/// the result table as CSV.
#[pyfunction]
#[pyo3(signature = (config_json, threads = 1))]
fn sweep_csv(config_json: &str, threads: usize) -> PyResult<String> {
    let config: SweepConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("sweep config does not parse: {e}")))?;
    let report = gamma_sweep(&config, threads)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(sweep_to_csv(&report))
}

/// Crate version of the underlying library.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn rescomp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resolvent_json, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_json, m)?)?;
    m.add_function(wrap_pyfunction!(describe_json, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
