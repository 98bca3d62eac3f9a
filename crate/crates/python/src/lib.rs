//! Python bindings for `spinbath`.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use spinbath::bath::{self, BathSpec, DensityOfStates};
use spinbath::driven_evolution::{self as driven, Averaging, RabiEnvelope};
use spinbath::experiment_fit::{self as fitting, Bounds, DataPoint, FitParams, RabiDataset};
use spinbath::free_evolution::{self as free, EchoSchedule, QubitParams};
use spinbath::stationary_phase as sp;

fn err(e: spinbath::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn spec(alpha: Vec<f64>, polarization: Vec<f64>, lambda: f64) -> PyResult<BathSpec> {
    BathSpec::new(alpha, polarization, lambda).map_err(err)
}

fn method(name: &str, samples: usize, seed: u64) -> PyResult<Averaging> {
    match name {
        "exact" => Ok(Averaging::Exact),
        "mc" => Ok(Averaging::MonteCarlo { samples, seed }),
        "continuum" => Ok(Averaging::Continuum),
        other => Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    }
}

fn envelope<'py>(py: Python<'py>, env: &RabiEnvelope) -> PyResult<Bound<'py, PyAny>> {
    let means = |v: &[spinbath::stats::Estimate]| v.iter().map(|e| e.mean).collect::<Vec<_>>();
    let errs = |v: &[spinbath::stats::Estimate]| v.iter().map(|e| e.std_error).collect::<Vec<_>>();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("t", env.t.clone())?;
    d.set_item("f", env.f.mean)?;
    d.set_item("sz2", means(&env.sz2))?;
    d.set_item("sz2_err", errs(&env.sz2))?;
    d.set_item("sy2", means(&env.sy2))?;
    d.set_item("sx2", means(&env.sx2))?;
    d.set_item("zeta", env.zeta.clone())?;
    Ok(d.into_any())
}

/// Normalized couplings `1/√N + σ g`, deterministic in `seed`.
#[pyfunction]
fn make_couplings(n: usize, sigma_alpha: f64, seed: u64) -> PyResult<Vec<f64>> {
    bath::make_couplings(n, sigma_alpha, seed).map_err(err)
}

/// Bath-averaged FID coherence on a time grid.
#[pyfunction]
fn fid_coherence(alpha: Vec<f64>, polarization: Vec<f64>, lam: f64, delta: f64, t: Vec<f64>) -> PyResult<Vec<Complex64>> {
    let s = spec(alpha, polarization, lam)?;
    Ok(t.iter().map(|&t| free::fid_coherence(&s, delta, t)).collect())
}

#[pyfunction]
fn spin_echo_fidelity(alpha: Vec<f64>, polarization: Vec<f64>, lam: f64, t1: f64, t2: f64) -> PyResult<f64> {
    let s = spec(alpha, polarization, lam)?;
    let sched = EchoSchedule::new(t1, t2).map_err(err)?;
    Ok(free::spin_echo_fidelity(&s, &sched).exact)
}

/// Rabi signal averaged over a bath of spins; `method` is exact, mc or continuum.
#[pyfunction]
#[pyo3(signature = (alpha, polarization, lam, delta, omega, t, method="exact", samples=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn rabi_average<'py>(
    py: Python<'py>,
    alpha: Vec<f64>,
    polarization: Vec<f64>,
    lam: f64,
    delta: f64,
    omega: f64,
    t: Vec<f64>,
    method: &str,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec(alpha, polarization, lam)?;
    let m = self::method(method, samples, seed)?;
    let env = driven::rabi_average((&s).into(), &QubitParams::new(delta, omega), &t, &m).map_err(err)?;
    envelope(py, &env)
}

/// Rabi signal for a Gaussian density of bath shifts.
#[pyfunction]
fn rabi_average_gaussian<'py>(
    py: Python<'py>,
    mean: f64,
    sigma: f64,
    delta: f64,
    omega: f64,
    t: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let dos = DensityOfStates::gaussian(mean, sigma).map_err(err)?;
    let env = driven::rabi_average((&dos).into(), &QubitParams::new(delta, omega), &t, &Averaging::Continuum)
        .map_err(err)?;
    envelope(py, &env)
}

/// Steady-state population at one detuning: brute force and stationary phase.
#[pyfunction]
fn lineshape<'py>(py: Python<'py>, mean: f64, sigma: f64, delta: f64, omega: f64) -> PyResult<Bound<'py, PyAny>> {
    let dos = DensityOfStates::gaussian(mean, sigma).map_err(err)?;
    let brute = sp::lineshape_bruteforce(&dos, delta, omega).map_err(err)?;
    let s = sp::lineshape_stationary(&dos, delta, omega);
    let d = pyo3::types::PyDict::new(py);
    d.set_item("brute", brute)?;
    d.set_item("stationary", s.valid.then_some(s.value.re))?;
    d.set_item("u", s.u)?;
    d.set_item("valid", s.valid)?;
    Ok(d.into_any())
}

/// Long-time stationary-phase `ζ(t)`; `None` where the approximation is invalid.
#[pyfunction]
fn zeta_stationary(mean: f64, sigma: f64, delta: f64, omega: f64, t: f64) -> PyResult<Option<Complex64>> {
    let dos = DensityOfStates::gaussian(mean, sigma).map_err(err)?;
    let s = sp::zeta_stationary(&dos, delta, omega, t);
    Ok(s.valid.then_some(s.value))
}

#[pyfunction]
fn dark_state_transverse_variance(n: usize) -> PyResult<f64> {
    bath::dark_state_transverse_variance(n).map_err(err)
}

/// Readout probability `P₁` after a pulse of length `t` at Rabi frequency `omega`.
#[pyfunction]
fn model_signal(params: (f64, f64, f64, f64), omega: f64, t: f64) -> PyResult<f64> {
    let p = FitParams::new(params.0, params.1, params.2, params.3).map_err(err)?;
    fitting::model_signal(&p, omega, t).map_err(err)
}

/// Synthetic `(omega, p1, sigma)` columns from the readout model.
#[pyfunction]
fn synthetic_dataset(
    params: (f64, f64, f64, f64),
    omegas: Vec<f64>,
    fixed_time: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = FitParams::new(params.0, params.1, params.2, params.3).map_err(err)?;
    let d = fitting::synthetic_dataset(&p, &omegas, fixed_time, noise, seed).map_err(err)?;
    Ok((
        d.points.iter().map(|p| p.omega_rabi).collect(),
        d.points.iter().map(|p| p.p1).collect(),
        d.points.iter().map(|p| p.sigma).collect(),
    ))
}

/// Fit `(m_uu, m_dd, gamma_heat, lambda)`; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (omega, p1, sigma, fixed_time, initial=(0.8, 0.9, 0.2, 0.3)))]
fn fit_rabi<'py>(
    py: Python<'py>,
    omega: Vec<f64>,
    p1: Vec<f64>,
    sigma: Vec<f64>,
    fixed_time: f64,
    initial: (f64, f64, f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    if omega.len() != p1.len() || omega.len() != sigma.len() {
        return Err(PyValueError::new_err("omega, p1 and sigma must have equal length"));
    }
    let data = RabiDataset {
        fixed_time,
        points: omega
            .iter()
            .zip(&p1)
            .zip(&sigma)
            .map(|((&w, &p), &s)| DataPoint {
                omega_rabi: w,
                p1: p,
                sigma: s,
            })
            .collect(),
    };
    let start = FitParams::new(initial.0, initial.1, initial.2, initial.3).map_err(err)?;
    let report = fitting::fit(&data, &start, &Bounds::default()).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (name, n=None, exchange=None))]
fn preset<'py>(py: Python<'py>, name: &str, n: Option<usize>, exchange: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &fitting::preset(name, n, exchange).map_err(err)?)
}

/// Run the command-line front end with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    spinbath::cli::run_from(std::iter::once("spinbath".to_string()).chain(args))
}

#[pymodule]
fn pyspinbath(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(make_couplings, m)?)?;
    m.add_function(wrap_pyfunction!(fid_coherence, m)?)?;
    m.add_function(wrap_pyfunction!(spin_echo_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(rabi_average, m)?)?;
    m.add_function(wrap_pyfunction!(rabi_average_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(lineshape, m)?)?;
    m.add_function(wrap_pyfunction!(zeta_stationary, m)?)?;
    m.add_function(wrap_pyfunction!(dark_state_transverse_variance, m)?)?;
    m.add_function(wrap_pyfunction!(model_signal, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rabi, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
