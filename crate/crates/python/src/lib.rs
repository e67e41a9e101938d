use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dualpath::cli::{apply_overrides, config_from_value, format_report, linkability_csv, ReportFormat};
use dualpath::simnet::ScenarioConfig;

fn config_of(config_json: &str, overrides: Vec<String>) -> PyResult<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let value = apply_overrides(value, &overrides).map_err(|e| PyValueError::new_err(e.to_string()))?;
    config_from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Full config with defaults filled in, as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, overrides = Vec::new()))]
fn parse_config(config_json: &str, overrides: Vec<String>) -> PyResult<String> {
    let config = config_of(config_json, overrides)?;
    serde_json::to_string(&config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs one scenario. Returns `(metrics_json, trace_csv, linkability_csv)`.
#[pyfunction]
#[pyo3(signature = (config_json, overrides = Vec::new()))]
fn run_scenario(py: Python<'_>, config_json: &str, overrides: Vec<String>) -> PyResult<(String, String, String)> {
    let config = config_of(config_json, overrides)?;
    let (metrics, trace) = py
        .detach(|| dualpath::simnet::run_scenario(&config))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((
        format_report(&metrics, ReportFormat::Json),
        trace.to_csv(),
        linkability_csv(&trace),
    ))
}

#[pymodule]
fn dualpath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
