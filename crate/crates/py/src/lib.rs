//! Python bindings: expressions, frames, evaluation, search runs and router
//! policies.

use std::collections::HashMap;
use std::path::PathBuf;

use featforge_core::data::{load_csv, Frame, TargetSpec, Task};
use featforge_core::eval::{EvalConfig, Evaluator, ModelKind};
use featforge_core::expr::{parse_expr, ExprLimits, FeatureExpr};
use featforge_core::memory::{load_jsonl, pool_from_records};
use featforge_core::pipeline::FeatureSet;
use featforge_core::rl::{collect, ppo_update, PolicyNet, PpoConfig, RouterState, STATE_DIM};
use featforge_core::search::{
    self, AgentKind, Backends, RouterMode, SearchConfig, SearchResult, Variant,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_task(task: &str) -> PyResult<Task> {
    match task {
        "class" | "classification" => Ok(Task::Classification),
        "regr" | "regression" => Ok(Task::Regression),
        other => Err(value_error(format!(
            "unknown task `{other}` (expected class or regr)"
        ))),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A postfix feature expression.
#[pyclass(name = "Expr", module = "featforge", frozen)]
struct PyExpr {
    inner: FeatureExpr,
}

#[pymethods]
impl PyExpr {
    #[new]
    #[pyo3(signature = (text, columns, max_depth = 4, max_tokens = 25))]
    fn new(
        text: &str,
        columns: Vec<String>,
        max_depth: usize,
        max_tokens: usize,
    ) -> PyResult<Self> {
        let limits = ExprLimits {
            max_depth,
            max_tokens,
        };
        parse_expr(text, &columns, limits)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn postfix(&self) -> String {
        self.inner.render_postfix()
    }

    #[getter]
    fn infix(&self) -> String {
        self.inner.render_infix()
    }

    #[getter]
    fn canonical_key(&self) -> String {
        self.inner.canonical_key()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn columns(&self) -> Vec<String> {
        self.inner
            .columns()
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    /// Evaluates over a mapping of column name to values.
    fn evaluate(&self, columns: HashMap<String, Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.evaluate(&columns).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!("Expr({:?})", self.inner.render_postfix())
    }
}

/// A numeric dataset with a target column.
#[pyclass(name = "Frame", module = "featforge", frozen)]
struct PyFrame {
    inner: Frame,
}

#[pymethods]
impl PyFrame {
    /// `columns` is a list of `(name, values)` pairs in feature order.
    #[new]
    #[pyo3(signature = (columns, target, task = "regr"))]
    fn new(columns: Vec<(String, Vec<f64>)>, target: Vec<f64>, task: &str) -> PyResult<Self> {
        Frame::from_columns(columns, target, parse_task(task)?)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    /// Loads a CSV; `target` is a header name or a 0-based index.
    #[staticmethod]
    #[pyo3(signature = (path, target, task = "regr"))]
    fn from_csv(path: PathBuf, target: &str, task: &str) -> PyResult<Self> {
        load_csv(&path, &TargetSpec::parse(target), parse_task(task)?)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn target(&self) -> Vec<f64> {
        self.inner.target().to_vec()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame({} rows x {} features)",
            self.inner.n_rows(),
            self.inner.n_features()
        )
    }
}

/// Cross-validated score of the raw features, plus `extra` expressions.
#[pyfunction]
#[pyo3(signature = (frame, extra = Vec::new(), model = "rf", folds = 5, seed = 42, trees = 100))]
fn evaluate<'py>(
    py: Python<'py>,
    frame: &PyFrame,
    extra: Vec<PyRef<'py, PyExpr>>,
    model: &str,
    folds: usize,
    seed: u64,
    trees: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let config = EvalConfig {
        model: model.parse::<ModelKind>().map_err(value_error)?,
        folds,
        seed,
        n_trees: trees,
    };
    let frame = &frame.inner;
    let mut set = FeatureSet::initial(frame, Default::default());
    if !extra.is_empty() {
        let exprs = extra.iter().map(|e| e.inner.clone()).collect();
        set = set
            .apply_generation(&featforge_core::pipeline::GenerationAction { exprs }, frame)
            .map_err(value_error)?
            .0;
    }
    let report = py
        .detach(|| Evaluator::new(frame, config).and_then(|ev| ev.evaluate(frame, &set)))
        .map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("primary", report.primary)?;
    out.set_item("secondary", report.secondary)?;
    out.set_item("features", set.live_names())?;
    Ok(out)
}

/// The outcome of a search run.
#[pyclass(name = "SearchResult", module = "featforge", frozen)]
struct PySearchResult {
    inner: SearchResult,
    frame: Frame,
}

#[pymethods]
impl PySearchResult {
    #[getter]
    fn best_score(&self) -> f64 {
        self.inner.best_report.primary
    }

    #[getter]
    fn baseline_score(&self) -> f64 {
        self.inner.baseline_report.primary
    }

    #[getter]
    fn improvement(&self) -> f64 {
        self.inner.improvement()
    }

    #[getter]
    fn best_features(&self) -> Vec<String> {
        self.inner.best_set.live_names()
    }

    #[getter]
    fn records(&self) -> usize {
        self.inner.pool.len()
    }

    fn provenance(&self) -> String {
        self.inner.provenance().render()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.summary(&self.frame)).map_err(value_error)?;
        json_to_py(py, &text)
    }

    fn write_trace(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .write_trace(path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Writes the best feature matrix and provenance files into `dir`.
    fn export(&self, dir: PathBuf) -> PyResult<String> {
        search::export(&self.inner, &self.frame, dir)
            .map(|p| p.csv.display().to_string())
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

/// Runs the search. LLM modes read the key from `FEATFORGE_API_KEY`.
#[pyfunction]
#[pyo3(signature = (
    frame, iterations = 30, steps = 6, router = "ppo", agents = "heuristic", seed = 42,
    policy = None, variant = "full", model = "rf", folds = 5, trees = 100,
    long_memory = true, short_memory = true, dataset = "dataset"
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    frame: &PyFrame,
    iterations: usize,
    steps: usize,
    router: &str,
    agents: &str,
    seed: u64,
    policy: Option<&PyPolicy>,
    variant: &str,
    model: &str,
    folds: usize,
    trees: usize,
    long_memory: bool,
    short_memory: bool,
    dataset: &str,
) -> PyResult<PySearchResult> {
    let mut config = SearchConfig {
        iterations,
        steps,
        router: router.parse::<RouterMode>().map_err(value_error)?,
        agents: agents.parse::<AgentKind>().map_err(value_error)?,
        seed,
        use_long_memory: long_memory,
        use_short_memory: short_memory,
        dataset: dataset.to_string(),
        ..SearchConfig::default()
    };
    config.eval.model = model.parse::<ModelKind>().map_err(value_error)?;
    config.eval.folds = folds;
    config.eval.n_trees = trees;
    let variant = variant.parse::<Variant>().map_err(value_error)?;
    let backends = Backends {
        policy: policy.map(|p| p.inner.clone()),
        transport: None,
        ..Backends::default()
    };
    let frame = frame.inner.clone();
    let inner = py
        .detach(|| search::run_ablation(&frame, &config, &backends, variant))
        .map_err(value_error)?;
    Ok(PySearchResult { inner, frame })
}

/// Router policy network.
#[pyclass(name = "Policy", module = "featforge", frozen)]
struct PyPolicy {
    inner: PolicyNet,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            inner: PolicyNet::new(seed),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PolicyNet::load(path)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .save(path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// [P(generate), P(select)] for a state vector.
    fn probs(&self, state: Vec<f64>) -> PyResult<[f64; 2]> {
        let state: [f64; STATE_DIM] = state
            .try_into()
            .map_err(|_| value_error(format!("state must have {STATE_DIM} components")))?;
        Ok(self.inner.probs(&RouterState(state)))
    }
}

/// Trains a router policy from trace files; returns the policy and the
/// training report.
#[pyfunction]
#[pyo3(signature = (traces, epochs = 5, seed = 0))]
fn train_router<'py>(
    py: Python<'py>,
    traces: Vec<PathBuf>,
    epochs: usize,
    seed: u64,
) -> PyResult<(PyPolicy, Bound<'py, PyAny>)> {
    let mut samples = Vec::new();
    for path in &traces {
        let records = load_jsonl(path).map_err(value_error)?;
        samples.extend(collect(
            &pool_from_records(records, Default::default()).map_err(value_error)?,
        ));
    }
    let config = PpoConfig {
        epochs,
        ..PpoConfig::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (inner, report) = py
        .detach(|| ppo_update(&PolicyNet::new(seed), &samples, &config, &mut rng))
        .map_err(value_error)?;
    let report = json_to_py(py, &serde_json::to_string(&report).map_err(value_error)?)?;
    Ok((PyPolicy { inner }, report))
}

#[pymodule]
#[pyo3(name = "featforge")]
fn featforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PySearchResult>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(train_router, m)?)?;
    m.add("API_KEY_ENV", featforge_core::llm::API_KEY_ENV)?;
    Ok(())
}
