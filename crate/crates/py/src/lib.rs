//! Python module `livecap`: rate and arrival distributions, the queue
//! solvers, playout-rate search, allocation formulas and the simulator.

use livecap_core::allocation::{self, ExpectationMethod, TwoClassConfig};
use livecap_core::channel;
use livecap_core::playout::{self, FrameParams, QoeConstraints};
use livecap_core::presets;
use livecap_core::queueing;
use livecap_core::sim::{self, AbrParams, ArrivalSource, SimConfig};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

create_exception!(livecap, LivecapError, PyException, "Raised by every livecap routine on failure.");

fn to_py_err(e: livecap_core::Error) -> PyErr {
    LivecapError::new_err((e.kind(), e.to_string()))
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for livecap_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Converts a serialized report into plain dicts, lists and numbers.
fn to_python<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_u64() {
            Some(u) => u.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_python(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_python(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn report<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| LivecapError::new_err(("output", e.to_string())))?;
    to_python(py, &json)
}

fn frame(frame_ms: f64, packet_bits: f64) -> PyResult<FrameParams> {
    FrameParams::new(frame_ms / 1e3, packet_bits).or_raise()
}

/// Per-block rate distribution of one user.
#[pyclass(module = "livecap", frozen, from_py_object)]
#[derive(Clone)]
struct RatePmf {
    inner: channel::RatePmf,
}

#[pymethods]
impl RatePmf {
    #[new]
    fn new(support: Vec<f64>, probs: Vec<f64>) -> PyResult<Self> {
        Ok(RatePmf {
            inner: channel::RatePmf::new(support, probs).or_raise()?,
        })
    }

    /// One of the eight reference users (1-based).
    #[staticmethod]
    fn reference(user: usize) -> PyResult<Self> {
        if !(1..=8).contains(&user) {
            return Err(LivecapError::new_err(("invalid_input", "reference users are 1..=8")));
        }
        Ok(RatePmf {
            inner: presets::user_pmf(user),
        })
    }

    #[getter]
    fn support(&self) -> Vec<f64> {
        self.inner.support().to_vec()
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn coefficient_of_variation(&self) -> f64 {
        self.inner.coefficient_of_variation()
    }

    /// Packets per frame when holding `blocks` resource blocks.
    #[pyo3(signature = (blocks, frame_ms = 10.0, packet_bits = 5000.0))]
    fn arrivals(&self, blocks: f64, frame_ms: f64, packet_bits: f64) -> PyResult<ArrivalPmf> {
        Ok(ArrivalPmf {
            inner: frame(frame_ms, packet_bits)?.arrivals(&self.inner, blocks).or_raise()?,
        })
    }

    fn __repr__(&self) -> String {
        format!("RatePmf(levels={}, mean={:.1})", self.inner.support().len(), self.inner.mean())
    }
}

/// Distribution of packets arriving per frame.
#[pyclass(module = "livecap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ArrivalPmf {
    inner: queueing::ArrivalPmf,
}

#[pymethods]
impl ArrivalPmf {
    #[new]
    fn new(probs: Vec<f64>) -> PyResult<Self> {
        Ok(ArrivalPmf {
            inner: queueing::ArrivalPmf::new(probs).or_raise()?,
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn __len__(&self) -> usize {
        self.inner.probs().len()
    }

    fn __repr__(&self) -> String {
        format!("ArrivalPmf(max={}, mean={:.3})", self.inner.max_count(), self.inner.mean())
    }
}

/// Roots of `z^S = A(z)` strictly inside the unit disk.
#[pyfunction]
fn find_roots(arrivals: &ArrivalPmf, service: usize) -> PyResult<Vec<Complex64>> {
    queueing::find_roots(&arrivals.inner, service).or_raise()
}

/// Infinite-buffer boundary probabilities `q_0 .. q_{S-1}`.
#[pyfunction]
fn solve_infinite(arrivals: &ArrivalPmf, service: usize) -> PyResult<Vec<f64>> {
    Ok(queueing::solve_infinite(&arrivals.inner, service).or_raise()?.boundary_probs)
}

/// Steady-state occupancy `q_0 .. q_B` of the finite buffer.
#[pyfunction]
fn solve_finite(py: Python<'_>, arrivals: &ArrivalPmf, service: usize, buffer: usize) -> PyResult<Vec<f64>> {
    let a = arrivals.inner.clone();
    Ok(py.detach(move || queueing::solve_finite(&a, service, buffer)).or_raise()?.probs)
}

/// `(outage, drop)` of the finite buffer at service batch `service`.
#[pyfunction]
fn evaluate(py: Python<'_>, arrivals: &ArrivalPmf, service: usize, buffer: usize) -> PyResult<(f64, f64)> {
    let a = arrivals.inner.clone();
    py.detach(move || playout::evaluate(&a, service, buffer)).or_raise()
}

/// Full solver report: `q`, `beta`, `outage`, `drop_rate`, `roots`.
#[pyfunction]
fn solver_report<'py>(
    py: Python<'py>,
    arrivals: &ArrivalPmf,
    service: usize,
    buffer: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let a = arrivals.inner.clone();
    let r = py.detach(move || queueing::SolverReport::solve(&a, service, buffer)).or_raise()?;
    report(py, &r)
}

/// Largest constant playout meeting both targets, as `{"S", "U_bps", "outage", "drop"}`.
#[pyfunction]
#[pyo3(signature = (arrivals, buffer, epsilon, delta0, frame_ms = 10.0, packet_bits = 5000.0))]
fn max_playout_rate<'py>(
    py: Python<'py>,
    arrivals: &ArrivalPmf,
    buffer: usize,
    epsilon: f64,
    delta0: f64,
    frame_ms: f64,
    packet_bits: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let f = frame(frame_ms, packet_bits)?;
    let c = QoeConstraints::new(epsilon, delta0).or_raise()?;
    let a = arrivals.inner.clone();
    let sol = py.detach(move || playout::max_playout_rate(&a, buffer, &f, &c)).or_raise()?;
    report(py, &sol)
}

/// Smallest buffer (packets) sustaining `rate_bps` within the targets.
#[pyfunction]
#[pyo3(signature = (rate_bps, arrivals, epsilon, delta0, frame_ms = 10.0, packet_bits = 5000.0))]
fn min_buffer(
    py: Python<'_>,
    rate_bps: f64,
    arrivals: &ArrivalPmf,
    epsilon: f64,
    delta0: f64,
    frame_ms: f64,
    packet_bits: f64,
) -> PyResult<usize> {
    let f = frame(frame_ms, packet_bits)?;
    let c = QoeConstraints::new(epsilon, delta0).or_raise()?;
    let a = arrivals.inner.clone();
    py.detach(move || playout::min_buffer(rate_bps, &a, &f, &c)).or_raise()
}

/// Static frame ratio giving `u_min` after losing a fraction `delta0`.
#[pyfunction]
fn min_rate_share(u_min: f64, delta0: f64, blocks: u32, pmf: &RatePmf) -> PyResult<f64> {
    allocation::min_rate_share(u_min, delta0, blocks, &pmf.inner).or_raise()
}

/// `E[1 / sum_j 1/R_j]`, exact when the number of rate combinations allows.
#[pyfunction]
fn harmonic_expectation(pmfs: Vec<RatePmf>) -> PyResult<f64> {
    let pmfs: Vec<_> = pmfs.into_iter().map(|p| p.inner).collect();
    allocation::harmonic_expectation(&pmfs, ExpectationMethod::default()).or_raise()
}

/// Block split between premium and regular users.
#[pyfunction]
#[pyo3(signature = (premium, regular, rate_ratio, blocks, delta_premium, delta_regular, epsilon_premium = 0.1, epsilon_regular = 0.1))]
#[allow(clippy::too_many_arguments)]
fn two_class_split<'py>(
    py: Python<'py>,
    premium: Vec<RatePmf>,
    regular: Vec<RatePmf>,
    rate_ratio: f64,
    blocks: u32,
    delta_premium: f64,
    delta_regular: f64,
    epsilon_premium: f64,
    epsilon_regular: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = TwoClassConfig {
        premium: premium.into_iter().map(|p| p.inner).collect(),
        regular: regular.into_iter().map(|p| p.inner).collect(),
        rate_ratio,
        delta_premium,
        delta_regular,
        epsilon_premium,
        epsilon_regular,
    };
    let split = allocation::two_class_split(&cfg, blocks, ExpectationMethod::default()).or_raise()?;
    report(py, &split)
}

/// Constant playout of `service` packets per frame under i.i.d. arrivals.
#[pyfunction]
#[pyo3(signature = (arrivals, service, buffer, frames, runs = 1, seed = 0, frame_ms = 10.0, packet_bits = 5000.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_constant<'py>(
    py: Python<'py>,
    arrivals: &ArrivalPmf,
    service: usize,
    buffer: usize,
    frames: usize,
    runs: usize,
    seed: u64,
    frame_ms: f64,
    packet_bits: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SimConfig::new(frames, seed, runs, buffer, frame(frame_ms, packet_bits)?);
    let src = ArrivalSource::Iid(arrivals.inner.clone());
    let r = py.detach(move || sim::simulate_constant(&src, service, &cfg)).or_raise()?;
    report(py, &r)
}

/// Two-threshold ABR with thresholds given as fractions of the buffer.
#[pyfunction]
#[pyo3(signature = (arrivals, buffer, low, high, theta, u_init_bps, frames, runs = 1, seed = 0, frame_ms = 10.0, packet_bits = 5000.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_abr<'py>(
    py: Python<'py>,
    arrivals: &ArrivalPmf,
    buffer: usize,
    low: f64,
    high: f64,
    theta: f64,
    u_init_bps: f64,
    frames: usize,
    runs: usize,
    seed: u64,
    frame_ms: f64,
    packet_bits: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let f = frame(frame_ms, packet_bits)?;
    let params = AbrParams::with_fractions(buffer, low, high, theta, u_init_bps, &f);
    let cfg = SimConfig::new(frames, seed, runs, buffer, f);
    let src = ArrivalSource::Iid(arrivals.inner.clone());
    let r = py.detach(move || sim::simulate_abr(&src, &params, &cfg)).or_raise()?;
    report(py, &r)
}

#[pymodule]
fn livecap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LivecapError", m.py().get_type::<LivecapError>())?;
    m.add_class::<RatePmf>()?;
    m.add_class::<ArrivalPmf>()?;
    m.add_function(wrap_pyfunction!(find_roots, m)?)?;
    m.add_function(wrap_pyfunction!(solve_infinite, m)?)?;
    m.add_function(wrap_pyfunction!(solve_finite, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(solver_report, m)?)?;
    m.add_function(wrap_pyfunction!(max_playout_rate, m)?)?;
    m.add_function(wrap_pyfunction!(min_buffer, m)?)?;
    m.add_function(wrap_pyfunction!(min_rate_share, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(two_class_split, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_constant, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_abr, m)?)?;
    Ok(())
}
