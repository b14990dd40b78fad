//! Python bindings: `import nnpnn`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nnpnn::autodiff::Graph;
use nnpnn::checkpoint::Checkpoint;
use nnpnn::config::RunConfig;
use nnpnn::gradcheck::{run_gradcheck, GradcheckOptions};
use nnpnn::host::{HostInput, NnpnnConfig, NnpnnParams};
use nnpnn::metrics::{self, EvalStats};
use nnpnn::networks::{self, Activation, DenseNetwork, NetSpec, NetTemplate};
use nnpnn::rng::Rng;
use nnpnn::training::Trainer;
use nnpnn::Error;

create_exception!(nnpnn, NnpnnError, PyException, "Base class for errors raised by nnpnn.");
create_exception!(nnpnn, ConfigError, NnpnnError, "Invalid run or model configuration.");
create_exception!(
    nnpnn,
    CheckpointError,
    NnpnnError,
    "Unreadable or incompatible checkpoint."
);
create_exception!(
    nnpnn,
    ResampleRequired,
    NnpnnError,
    "The target had zero Manhattan norm."
);
create_exception!(
    nnpnn,
    DivergedError,
    NnpnnError,
    "Training produced a non-finite value."
);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) => ConfigError::new_err(msg),
        Error::Checkpoint(_) => CheckpointError::new_err(msg),
        Error::ResampleRequired => ResampleRequired::new_err(msg),
        Error::Diverged { .. } => DivergedError::new_err(msg),
        _ => NnpnnError::new_err(msg),
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &EvalStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("median", s.median)?;
    d.set_item("frac_within_10", s.frac_within_10)?;
    d.set_item("frac_within_25", s.frac_within_25)?;
    d.set_item("trials", s.trials)?;
    Ok(d)
}

/// Seeded, splittable random stream.
#[pyclass(name = "Rng", module = "nnpnn")]
struct PyRng {
    inner: Rng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        Self { inner: Rng::new(seed) }
    }

    /// Independent child stream; does not advance this one.
    fn derive(&self, key: u64) -> Self {
        Self {
            inner: self.inner.derive(key),
        }
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn standard_normal(&mut self) -> f64 {
        self.inner.standard_normal()
    }
}

/// A frozen dense target network `G`.
#[pyclass(name = "TargetNetwork", module = "nnpnn")]
struct PyTargetNetwork {
    inner: DenseNetwork,
}

#[pymethods]
impl PyTargetNetwork {
    /// Draws a random network: hidden depth uniform in the given range,
    /// weights and biases uniform on [-1, 1].
    #[staticmethod]
    #[pyo3(signature = (rng, input_dim=2, output_dim=2, hidden_width=5, min_hidden_layers=1, max_hidden_layers=5))]
    fn generate(
        mut rng: PyRefMut<'_, PyRng>,
        input_dim: usize,
        output_dim: usize,
        hidden_width: usize,
        min_hidden_layers: usize,
        max_hidden_layers: usize,
    ) -> PyResult<Self> {
        let template = NetTemplate {
            input_dim,
            output_dim,
            hidden_width,
            min_hidden_layers,
            max_hidden_layers,
        };
        template.validate().map_err(to_py)?;
        let inner = networks::generate_nn(&mut rng.inner, &template).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Builds a tanh network from a flat parameter list (per layer: row-major
    /// weights, then bias).
    #[staticmethod]
    fn from_params(
        input_dim: usize,
        output_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        params: Vec<f64>,
    ) -> PyResult<Self> {
        let spec = NetSpec::new(input_dim, output_dim, hidden_layers, hidden_width).map_err(to_py)?;
        let inner = DenseNetwork::from_params(spec, Activation::Tanh, params).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.eval(&x).map_err(to_py)
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.eval(&x).map_err(to_py)
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn hidden_layers(&self) -> usize {
        self.inner.spec().hidden_layers
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.spec().input_dim
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.spec().output_dim
    }

    fn __repr__(&self) -> String {
        let s = self.inner.spec();
        format!(
            "TargetNetwork({}->{}, hidden_layers={}, width={}, params={})",
            s.input_dim,
            s.output_dim,
            s.hidden_layers,
            s.hidden_width,
            self.inner.param_count()
        )
    }
}

type HostTrace = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// A host network that queries a target network in `phases` rounds of
/// `queries` evaluations each.
#[pyclass(name = "Host", module = "nnpnn")]
struct PyHost {
    inner: NnpnnParams,
}

#[pymethods]
impl PyHost {
    /// Exactly one of `input_dim` (numeric argument) and `seed_dim`
    /// (trainable seed vector) must be given.
    #[new]
    #[pyo3(signature = (rng, *, input_dim=None, seed_dim=None, phases=2, queries=4, width1=32, width2=32,
                        query_dim=2, read_dim=2, output_dim=2, append_phase_input=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mut rng: PyRefMut<'_, PyRng>,
        input_dim: Option<usize>,
        seed_dim: Option<usize>,
        phases: usize,
        queries: usize,
        width1: usize,
        width2: usize,
        query_dim: usize,
        read_dim: usize,
        output_dim: usize,
        append_phase_input: bool,
    ) -> PyResult<Self> {
        let input = match (input_dim, seed_dim) {
            (Some(dim), None) => HostInput::Numeric { dim },
            (None, Some(dim)) => HostInput::Seed { dim },
            _ => return Err(ConfigError::new_err("give exactly one of input_dim and seed_dim")),
        };
        let config = NnpnnConfig {
            input,
            phases,
            queries,
            width1,
            width2,
            query_dim,
            read_dim,
            output_dim,
            append_phase_input,
        };
        config.validate().map_err(to_py)?;
        let inner = NnpnnParams::init(config, &mut rng.inner).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Returns `(output, queries, reads)`.
    #[pyo3(signature = (target, x=None))]
    fn forward(&self, target: &PyTargetNetwork, x: Option<Vec<f64>>) -> PyResult<HostTrace> {
        let mut g = Graph::new();
        let x = x.map(|x| g.input(x)).transpose().map_err(to_py)?;
        let (out, trace) = self.inner.forward(&mut g, None, x, &target.inner).map_err(to_py)?;
        Ok((g.value(out).to_vec(), trace.queries, trace.reads))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }
}

/// A resumable training run. `config` is a JSON object of overrides.
#[pyclass(name = "Trainer", module = "nnpnn")]
struct PyTrainer {
    inner: Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (experiment="inverse", config=None))]
    fn new(experiment: &str, config: Option<&str>) -> PyResult<Self> {
        let mut value: serde_json::Value = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?,
            None => serde_json::json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| ConfigError::new_err("config must be a JSON object"))?;
        match obj.get("experiment") {
            Some(serde_json::Value::String(e)) if e != experiment => {
                return Err(ConfigError::new_err(format!("config names the {e} experiment")))
            }
            _ => {
                obj.insert("experiment".into(), experiment.into());
            }
        }
        let cfg = RunConfig::from_json(&value.to_string()).map_err(to_py)?;
        Ok(Self {
            inner: Trainer::new(cfg).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let ck = Checkpoint::from_json(text).map_err(to_py)?;
        Ok(Self {
            inner: Trainer::from_checkpoint(&ck).map_err(to_py)?,
        })
    }

    /// One optimizer step; returns the training loss.
    fn step(&mut self) -> PyResult<f64> {
        self.inner.step().map_err(to_py)
    }

    /// Trains until `until` iterations have completed.
    fn run(&mut self, py: Python<'_>, until: u64) -> PyResult<()> {
        let inner = &mut self.inner;
        py.detach(|| inner.run_until(until, |_| Ok(()))).map_err(to_py)
    }

    fn evaluate<'py>(&self, py: Python<'py>, trials: usize) -> PyResult<Bound<'py, PyDict>> {
        let stats = py.detach(|| self.inner.evaluate(trials)).map_err(to_py)?;
        stats_dict(py, &stats)
    }

    /// Logged rows as dicts, including a closing row for a partial window.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let history = self.inner.final_history().map_err(to_py)?;
        history
            .rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iteration", r.iteration)?;
                d.set_item("loss", r.loss)?;
                d.set_item("ratio_mean", r.ratio_mean)?;
                d.set_item("ratio_median", r.ratio_median)?;
                d.set_item("frac10", r.frac10)?;
                d.set_item("frac25", r.frac25)?;
                Ok(d)
            })
            .collect()
    }

    fn checkpoint(&self) -> String {
        self.inner.checkpoint().to_json()
    }

    fn config(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("config serializes")
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }
}

/// Draws `dim` values from N(0, 100).
#[pyfunction]
fn random_input(mut rng: PyRefMut<'_, PyRng>, dim: usize) -> Vec<f64> {
    networks::random_input(&mut rng.inner, dim)
}

/// `sum |pred - target| / sum |target|`.
#[pyfunction]
fn manhattan_ratio(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    metrics::manhattan_ratio(&pred, &target).map_err(to_py)
}

#[pyfunction]
fn summarize<'py>(py: Python<'py>, samples: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let stats = metrics::summarize(&samples).map_err(to_py)?;
    stats_dict(py, &stats)
}

/// Runs the finite-difference suites; returns one dict per suite.
#[pyfunction]
#[pyo3(signature = (seed=0, scale=1))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, scale: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = GradcheckOptions {
        seed,
        scale,
        flip_sign: false,
    };
    let reports = py.detach(|| run_gradcheck(&opts)).map_err(to_py)?;
    reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("configs", r.configs)?;
            d.set_item("max_rel_error", r.max_rel_error)?;
            d.set_item("passed", r.passed())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "nnpnn")]
pub fn nnpnn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyRng>()?;
    m.add_class::<PyTargetNetwork>()?;
    m.add_class::<PyHost>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(random_input, m)?)?;
    m.add_function(wrap_pyfunction!(manhattan_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("NnpnnError", py.get_type::<NnpnnError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("CheckpointError", py.get_type::<CheckpointError>())?;
    m.add("ResampleRequired", py.get_type::<ResampleRequired>())?;
    m.add("DivergedError", py.get_type::<DivergedError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
