//! Python bindings. Reports cross the boundary as JSON and are decoded into dicts.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use switchscope::observer::{run_observer, ObserverConfig};
use switchscope::report::{analyze as analyze_system, AnalysisConfig};
use switchscope::simulate::{self as sim, Execution as CoreExecution, InputSignal, SimulationConfig, SwitchingPolicy};
use switchscope::stability::{detectability as detect, observability, StabilityConfig};
use switchscope::subspace::{Vector, DEFAULT_TOL};
use switchscope::system::SwitchingSystem;

create_exception!(switchscope_py, SwitchscopeError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SwitchscopeError::new_err(e.to_string())
}

fn to_dict<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn parse<T: serde::de::DeserializeOwned>(json: Option<&str>, what: &str) -> PyResult<Option<T>> {
    json.map(|s| serde_json::from_str(s).map_err(|e| err(format!("{what}: {e}")))).transpose()
}

/// A linear switching system loaded from a JSON document.
#[pyclass(frozen)]
struct System {
    inner: SwitchingSystem,
}

#[pymethods]
impl System {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        SwitchingSystem::from_json(text).map(|inner| System { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.inner.name().map(str::to_string)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn state_dim(&self, mode: &str) -> PyResult<usize> {
        Ok(self.inner.mode(self.inner.index_of(mode).map_err(err)?).state_dim())
    }

    /// Edges as `(from, to)` label pairs.
    fn edges(&self) -> Vec<(String, String)> {
        self.inner.edges().iter().map(|e| self.inner.edge_labels(e)).collect()
    }

    /// `C A^k B` of one mode, row-major.
    fn markov_parameter(&self, mode: &str, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.mode(self.inner.index_of(mode).map_err(err)?).markov_parameter(k);
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    #[pyo3(signature = (tol=None))]
    fn is_observable(&self, tol: Option<f64>) -> bool {
        observability(&self.inner, tol.unwrap_or(DEFAULT_TOL))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "System(name={:?}, modes={}, edges={})",
            self.inner.name().unwrap_or(""),
            self.inner.len(),
            self.inner.edges().len()
        )
    }
}

/// A simulated execution.
#[pyclass(frozen)]
struct Execution {
    inner: CoreExecution,
}

#[pymethods]
impl Execution {
    #[getter]
    fn modes(&self) -> Vec<String> {
        self.inner.mode_sequence().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn switch_times(&self) -> Vec<f64> {
        self.inner.switch_times.clone()
    }

    /// Sample times, one list per interval.
    fn times(&self) -> Vec<Vec<f64>> {
        self.inner.intervals.iter().map(|i| i.samples.iter().map(|s| s.t).collect()).collect()
    }

    fn states(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.intervals.iter().map(|i| i.samples.iter().map(|s| s.x.clone()).collect()).collect()
    }

    fn outputs(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.intervals.iter().map(|i| i.samples.iter().map(|s| s.y.clone()).collect()).collect()
    }

    fn final_state(&self) -> Vec<f64> {
        self.inner.final_sample().x.clone()
    }

    /// Writes `<prefix>.csv` and the `<prefix>.json` header.
    fn save(&self, prefix: &str) -> PyResult<()> {
        let file = std::fs::File::create(format!("{prefix}.csv")).map_err(err)?;
        self.inner.write_csv(std::io::BufWriter::new(file)).map_err(err)?;
        let header = serde_json::to_string_pretty(&self.inner.header()).map_err(err)?;
        std::fs::write(format!("{prefix}.json"), header).map_err(err)
    }

    #[staticmethod]
    fn load(prefix: &str) -> PyResult<Self> {
        let header = std::fs::read_to_string(format!("{prefix}.json")).map_err(err)?;
        let header = serde_json::from_str(&header).map_err(err)?;
        let csv_in = std::fs::File::open(format!("{prefix}.csv")).map_err(err)?;
        CoreExecution::from_trace(header, csv_in).map(|inner| Execution { inner }).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.sample_count()
    }
}

/// Full analysis report as a dict.
#[pyfunction]
#[pyo3(signature = (system, tol=None, find_input=false, config=None))]
fn analyze<'py>(
    py: Python<'py>,
    system: &System,
    tol: Option<f64>,
    find_input: bool,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut stability: StabilityConfig = parse(config, "config")?.unwrap_or_default();
    if let Some(t) = tol {
        stability.tol = t;
    }
    let cfg = AnalysisConfig { stability, find_input, ..AnalysisConfig::default() };
    let report = py.detach(|| analyze_system(&system.inner, &cfg)).map_err(err)?;
    to_dict(py, &serde_json::to_string(&report).map_err(err)?)
}

/// `"Detectable"`, `"NotDetectable"` or `"Unknown"`.
#[pyfunction]
#[pyo3(signature = (system, tol=None))]
fn detectability(py: Python<'_>, system: &System, tol: Option<f64>) -> PyResult<String> {
    let cfg = StabilityConfig::with_tol(tol.unwrap_or(DEFAULT_TOL));
    let v = py.detach(|| detect(&system.inner, &cfg)).map_err(err)?;
    Ok(format!("{:?}", v.status))
}

/// Simulates from `(mode, x0)`. `input` and `policy` are JSON documents;
/// omitted they mean zero input and no switching.
#[pyfunction]
#[pyo3(signature = (system, mode, x0, horizon=1.0, dt=1e-3, input=None, policy=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    system: &System,
    mode: &str,
    x0: Vec<f64>,
    horizon: f64,
    dt: f64,
    input: Option<&str>,
    policy: Option<&str>,
) -> PyResult<Execution> {
    let input: InputSignal = parse(input, "input")?.unwrap_or(InputSignal::Zero);
    let policy: SwitchingPolicy = parse(policy, "policy")?.unwrap_or_else(SwitchingPolicy::none);
    let cfg = SimulationConfig { horizon, dt, ..SimulationConfig::default() };
    let x0 = Vector::from_vec(x0);
    let exec = py.detach(|| {
        let exec = sim::simulate(&system.inner, mode, &x0, &input, &policy, &cfg).map_err(err)?;
        sim::validate_execution(&system.inner, &exec, cfg.guard_tol).map_err(err)?;
        Ok::<_, PyErr>(exec)
    })?;
    Ok(Execution { inner: exec })
}

/// Runs the observer on an execution; returns the convergence report as a dict.
#[pyfunction]
#[pyo3(signature = (system, execution, epsilon=1e-3, config=None))]
fn observe<'py>(
    py: Python<'py>,
    system: &System,
    execution: &Execution,
    epsilon: f64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ObserverConfig = parse(config, "config")?.unwrap_or_default();
    let run = py.detach(|| run_observer(&system.inner, &execution.inner, &cfg, epsilon)).map_err(err)?;
    to_dict(py, &serde_json::to_string(&run.report).map_err(err)?)
}

#[pymodule]
pub fn switchscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SwitchscopeError", m.py().get_type::<SwitchscopeError>())?;
    m.add_class::<System>()?;
    m.add_class::<Execution>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(detectability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    Ok(())
}
