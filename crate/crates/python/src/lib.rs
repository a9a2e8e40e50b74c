//! Python module `gtdd_py`: run configurations, optimized Robin parameters
//! and time-grid projection.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gtdd::bench::config::RunConfig;
use gtdd::bench::driver;
use gtdd::optim::{optimize_parameters, InterfaceModel, SideModel};
use gtdd::timegrid::{TimeGrid, TimeSeries};
use gtdd::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidRobinParameter(_) | Error::InvalidGrid(_) | Error::GridMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Solve a TOML configuration; returns the run summary as a dict. With
/// `out`, artifacts are written to that directory.
#[pyfunction]
#[pyo3(signature = (config, out=None, seed=None))]
pub fn run<'py>(py: Python<'py>, config: &str, out: Option<&str>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::from_toml_str(config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let r = py
        .detach(|| driver::run(&cfg, out.map(std::path::Path::new)))
        .map_err(to_py)?;
    let s = &r.summary;
    let d = PyDict::new(py);
    d.set_item("name", &s.name)?;
    d.set_item("converged", s.converged)?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("subdomain_solves", s.subdomain_solves)?;
    d.set_item("final_residual", s.final_residual)?;
    d.set_item("max_mass_defect", s.max_mass_defect)?;
    d.set_item("max_flux_jump", s.max_flux_jump)?;
    d.set_item("initial_mass", s.initial_mass)?;
    d.set_item("final_mass", s.final_mass)?;
    if let Some(e) = &s.errors {
        d.set_item("c_error", e.c)?;
        d.set_item("phi_error", e.phi)?;
    }
    d.set_item("final_c", r.final_c.clone())?;
    Ok(d)
}

/// `(alpha12, alpha21, max_factor)` for a two-sided interface model given as
/// `(d, omega, u . n)` per side.
#[pyfunction]
pub fn optimized_robin(side1: (f64, f64, f64), side2: (f64, f64, f64), horizon: f64, dt_min: f64) -> PyResult<(f64, f64, f64)> {
    let side = |(d, omega, a): (f64, f64, f64)| SideModel {
        d,
        omega,
        a_normal: a,
        a_tangential: 0.0,
    };
    let model = InterfaceModel::new([side(side1), side(side2)], horizon, dt_min).map_err(to_py)?;
    let p = optimize_parameters(&model);
    Ok((p.alpha12, p.alpha21, p.factor))
}

/// L2 projection of a piecewise constant series from one time grid to
/// another with the same horizon.
#[pyfunction]
pub fn project(src_points: Vec<f64>, values: Vec<f64>, dst_points: Vec<f64>) -> PyResult<Vec<f64>> {
    let src = TimeGrid::new(src_points).map_err(to_py)?;
    let dst = TimeGrid::new(dst_points).map_err(to_py)?;
    let s = TimeSeries::scalar(src, values).map_err(to_py)?;
    Ok(s.project(&dst).map_err(to_py)?.values)
}

#[pymodule]
pub fn gtdd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(optimized_robin, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
