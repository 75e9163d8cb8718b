use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use sta_core::design_io::{DesignDocument, Method};
use sta_core::tls_design::ControlSchedule;
use sta_core::verify::{self, InitialState, Rows, RunOptions, SweepRow};
use sta_core::Error;

create_exception!(sta, NumericalError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::DegreeMismatch { .. } | Error::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => NumericalError::new_err(e.to_string()),
    }
}

fn options(
    method: Option<&str>,
    rel_tol: f64,
    samples: Option<usize>,
    fock_dim: usize,
    state: Option<&str>,
) -> PyResult<RunOptions> {
    Ok(RunOptions {
        method: method.map(str::parse::<Method>).transpose().map_err(to_py)?,
        rel_tol,
        abs_tol: rel_tol * 1e-2,
        samples,
        fock_dim,
        state: state.map(str::parse::<InitialState>).transpose().map_err(to_py)?,
    })
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A serializable protocol: an oscillator frequency change or a two-level transfer.
#[pyclass(module = "sta", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Design {
    doc: DesignDocument,
}

#[pymethods]
impl Design {
    /// Oscillator protocol from `omega0` to `omega_f` in time `t_f`.
    #[staticmethod]
    #[pyo3(signature = (omega0, omega_f, t_f, degree = 5))]
    fn oscillator(omega0: f64, omega_f: f64, t_f: f64, degree: usize) -> PyResult<Self> {
        Ok(Self { doc: DesignDocument::oscillator(omega0, omega_f, t_f, degree).map_err(to_py)? })
    }

    /// Two-level preset: `"fig1"`, `"fig2"` or `"tracking"`.
    #[staticmethod]
    fn two_level(preset: &str, t_f: f64) -> PyResult<Self> {
        Ok(Self { doc: DesignDocument::two_level_preset(preset, t_f).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { doc: DesignDocument::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.doc.to_json()
    }

    #[getter]
    fn t_f(&self) -> f64 {
        self.doc.t_f()
    }

    #[getter]
    fn system(&self) -> &'static str {
        match self.doc {
            DesignDocument::Oscillator(_) => "oscillator",
            DesignDocument::TwoLevel(_) => "two_level",
        }
    }

    #[getter]
    fn default_method(&self) -> String {
        self.doc.default_method().to_string()
    }

    /// `(delta, omega_r, phi)` of a two-level design at time `t`.
    fn controls(&self, t: f64) -> PyResult<(f64, f64, f64)> {
        let c = if let Some(a) = self.doc.angles().map_err(to_py)? {
            a.controls_at(t)
        } else if let Some(r) = self.doc.reference() {
            r.controls_at(t)
        } else {
            return Err(PyValueError::new_err("not a two-level design"));
        }
        .map_err(to_py)?;
        Ok((c.delta, c.omega_r, c.phi))
    }

    /// Scaling factor b(t) of an oscillator design.
    fn b(&self, t: f64) -> PyResult<f64> {
        match self.doc.ermakov().map_err(to_py)? {
            Some(d) => Ok(d.b().value(t)),
            None => Err(PyValueError::new_err("design has no scaling factor")),
        }
    }

    /// Trap frequency squared ω²(t) of an oscillator design.
    fn omega_squared(&self, t: f64) -> PyResult<f64> {
        if let Some(d) = self.doc.ermakov().map_err(to_py)? {
            return d.omega_squared(t).map_err(to_py);
        }
        match self.doc.ramp().map_err(to_py)? {
            Some(r) => Ok(r.omega().value(t).powi(2)),
            None => Err(PyValueError::new_err("not an oscillator design")),
        }
    }

    fn __repr__(&self) -> String {
        format!("Design(system={:?}, t_f={})", self.system(), self.doc.t_f())
    }
}

/// Result of a propagation.
#[pyclass(module = "sta", frozen)]
struct Trajectory {
    inner: verify::Trajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn final_infidelity(&self) -> f64 {
        self.inner.final_infidelity
    }

    #[getter]
    fn min_mode_overlap(&self) -> f64 {
        self.inner.min_mode_overlap
    }

    #[getter]
    fn norm_drift(&self) -> f64 {
        self.inner.record.norm_drift
    }

    #[getter]
    fn peak_rabi(&self) -> Option<f64> {
        self.inner.peak_rabi
    }

    #[getter]
    fn min_omega_squared(&self) -> Option<f64> {
        self.inner.min_omega_squared
    }

    #[getter]
    fn adiabaticity_metric(&self) -> Option<f64> {
        self.inner.adiabaticity_metric
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.record.grid.nodes().to_vec()
    }

    /// Amplitudes of the state at the last output time.
    fn final_state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        PyList::new(py, self.inner.record.final_state().amplitudes().to_vec())
    }

    /// Output columns keyed by name, as in the `sta propagate` CSV.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        match &self.inner.rows {
            Rows::TwoLevel(rows) => {
                let col = |f: fn(&verify::TlsRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
                out.set_item("t", col(|r| r.t))?;
                out.set_item("P1", col(|r| r.p1))?;
                out.set_item("P2", col(|r| r.p2))?;
                out.set_item("P1_ad", col(|r| r.p1_ad))?;
                out.set_item("P2_ad", col(|r| r.p2_ad))?;
                out.set_item("overlap_mode_plus", col(|r| r.overlap_mode_plus))?;
                out.set_item("phase_mode_plus", col(|r| r.phase_mode_plus))?;
                out.set_item("alpha_plus", col(|r| r.alpha_plus))?;
            }
            Rows::Oscillator { mode, levels, rows } => {
                out.set_item("t", rows.iter().map(|r| r.t).collect::<Vec<_>>())?;
                out.set_item(format!("fidelity_to_mode_{mode}"), rows.iter().map(|r| r.fidelity).collect::<Vec<_>>())?;
                for (k, level) in levels.iter().enumerate() {
                    out.set_item(format!("P{level}"), rows.iter().map(|r| r.populations[k]).collect::<Vec<_>>())?;
                }
                out.set_item("norm", rows.iter().map(|r| r.norm).collect::<Vec<_>>())?;
            }
        }
        Ok(out)
    }
}

/// Propagate a design and return its trajectory.
#[pyfunction]
#[pyo3(signature = (design, method = None, rel_tol = 1e-10, samples = None, fock_dim = 128, state = None))]
fn propagate(
    py: Python<'_>,
    design: &Design,
    method: Option<&str>,
    rel_tol: f64,
    samples: Option<usize>,
    fock_dim: usize,
    state: Option<&str>,
) -> PyResult<Trajectory> {
    let opts = options(method, rel_tol, samples, fock_dim, state)?;
    let doc = design.doc.clone();
    let inner = py.detach(move || verify::run(&doc, &opts)).map_err(to_py)?;
    Ok(Trajectory { inner })
}

/// Run the verification battery; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (design, method = None, rel_tol = 1e-10, samples = None, fock_dim = 128, state = None))]
fn check<'py>(
    py: Python<'py>,
    design: &Design,
    method: Option<&str>,
    rel_tol: f64,
    samples: Option<usize>,
    fock_dim: usize,
    state: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = options(method, rel_tol, samples, fock_dim, state)?;
    let doc = design.doc.clone();
    let report = py.detach(move || verify::check(&doc, &opts)).map_err(to_py)?;
    json_to_py(py, &serde_json_text(&report))
}

fn serde_json_text<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// Sweep a preset family over durations; returns one dict per duration.
#[pyfunction]
#[pyo3(signature = (system, t_f, preset = "fig1", omega0 = 1.0, omega_f = 0.1, degree = 5, method = None, rel_tol = 1e-10, fock_dim = 128))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    system: &str,
    t_f: Vec<f64>,
    preset: &str,
    omega0: f64,
    omega_f: f64,
    degree: usize,
    method: Option<&str>,
    rel_tol: f64,
    fock_dim: usize,
) -> PyResult<Bound<'py, PyList>> {
    let oscillator = match system {
        "ho" | "oscillator" => true,
        "tls" | "two_level" => false,
        other => return Err(PyValueError::new_err(format!("unknown system {other:?}"))),
    };
    let opts = options(method, rel_tol, None, fock_dim, None)?;
    let preset = preset.to_string();
    let mut durations = t_f;
    durations.sort_by(f64::total_cmp);
    let rows: Vec<SweepRow> = py.detach(move || {
        let build = |t: f64| {
            if oscillator {
                DesignDocument::oscillator(omega0, omega_f, t, degree)
            } else {
                DesignDocument::two_level_preset(&preset, t)
            }
        };
        durations.iter().map(|&t| verify::sweep_row(&build, t, &opts)).collect()
    });
    let out = PyList::empty(py);
    for row in &rows {
        out.append(json_to_py(py, &serde_json_text(row))?)?;
    }
    Ok(out)
}

#[pymodule]
fn sta(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Design>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
