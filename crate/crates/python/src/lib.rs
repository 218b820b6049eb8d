//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use userdp::harness::{self, ExperimentConfig};
use userdp::losses::LinearLoss;
use userdp::{
    Answer, Ball, Error, Loss, MeanSession, NoiseHook, NormLoss, PrivacyBudget, QuadraticLoss,
    QueryResult, RngStream, Shape, UserDataset, UserSource,
};

fn to_pyerr(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "PrivacyBudget", frozen, module = "userdp_py")]
struct PyBudget {
    inner: PrivacyBudget,
}

#[pymethods]
impl PyBudget {
    #[new]
    fn new(epsilon: f64, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: PrivacyBudget::new(epsilon, delta).map_err(to_pyerr)?,
        })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    fn __repr__(&self) -> String {
        format!(
            "PrivacyBudget(epsilon={}, delta={})",
            self.inner.epsilon(),
            self.inner.delta()
        )
    }
}

/// Streaming sparse-vector gate; `step` returns True for TOP, False for BOTTOM.
#[pyclass(name = "AboveThreshold", module = "userdp_py")]
struct PyAboveThreshold {
    inner: userdp::AboveThreshold,
    rng: RngStream,
}

#[pymethods]
impl PyAboveThreshold {
    #[new]
    #[pyo3(signature = (threshold, epsilon, sensitivity = 1.0, seed = 0))]
    fn new(threshold: f64, epsilon: f64, sensitivity: f64, seed: u64) -> PyResult<Self> {
        let mut rng = RngStream::new(seed, 0);
        let inner = userdp::AboveThreshold::new(threshold, epsilon, sensitivity, &mut rng)
            .map_err(to_pyerr)?;
        Ok(Self { inner, rng })
    }

    fn step(&mut self, value: f64) -> PyResult<bool> {
        Ok(self.inner.step(value, &mut self.rng).map_err(to_pyerr)? == Answer::Top)
    }

    #[getter]
    fn halted(&self) -> bool {
        self.inner.is_halted()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }
}

/// Runs an adaptive mean-estimation session over `n` users.
///
/// `query(t, previous)` must return one vector per user; `previous` is the last
/// estimate or None. Returns one entry per query: a dict with `value`,
/// `selected_count` and `score`, or None once the gate has halted.
#[pyfunction]
#[pyo3(signature = (n, tau, budget, queries, query, seed = 0))]
fn mean_session<'py>(
    py: Python<'py>,
    n: usize,
    tau: f64,
    budget: &PyBudget,
    queries: usize,
    query: Bound<'py, PyAny>,
    seed: u64,
) -> PyResult<Vec<Option<Bound<'py, PyAny>>>> {
    let ids = UserDataset::new(Shape { n, m: 1, d: 1 }, (0..n).map(|i| i as f64).collect())
        .map_err(to_pyerr)?;
    let mut session = MeanSession::open(&ids, budget.inner, tau, queries, RngStream::new(seed, 0))
        .map_err(to_pyerr)?;
    let mut out = Vec::with_capacity(queries);
    let mut previous: Option<Vec<f64>> = None;
    for t in 0..queries {
        if session.is_halted() {
            out.push(None);
            continue;
        }
        let points: Vec<Vec<f64>> = query.call1((t, previous.clone()))?.extract()?;
        if points.len() != n {
            return Err(PyValueError::new_err(format!(
                "query returned {} vectors for {n} users",
                points.len()
            )));
        }
        match session
            .query(|u| Ok(points[u[0] as usize].clone()))
            .map_err(to_pyerr)?
        {
            QueryResult::Estimate {
                value,
                selected_count,
                score,
            } => {
                let row = serde_json::json!({"value": value, "selected_count": selected_count, "score": score});
                out.push(Some(to_py(py, &row)?));
                previous = Some(value);
            }
            QueryResult::Halted => out.push(None),
        }
    }
    Ok(out)
}

/// Parameter schedule for a convex, `lipschitz`-Lipschitz problem.
#[pyfunction]
#[pyo3(signature = (n, m, d, budget, lipschitz, initial_distance, t_cap = userdp::optimizer::DEFAULT_T_CAP))]
#[allow(clippy::too_many_arguments)]
fn default_config<'py>(
    py: Python<'py>,
    n: usize,
    m: usize,
    d: usize,
    budget: &PyBudget,
    lipschitz: f64,
    initial_distance: f64,
    t_cap: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let c = userdp::default_config(
        Shape { n, m, d },
        budget.inner,
        lipschitz,
        initial_distance,
        vec![0.0; d],
        t_cap,
    )
    .map_err(to_pyerr)?;
    to_py(py, &c)
}

fn build_loss(
    name: &str,
    d: usize,
    radius: f64,
    mu: f64,
    z_bound: Option<f64>,
) -> PyResult<Box<dyn Loss>> {
    let domain = Ball::centered(d, radius).map_err(to_pyerr)?;
    let z_bound =
        || z_bound.ok_or_else(|| PyValueError::new_err(format!("{name} loss needs z_bound")));
    Ok(match name {
        "norm" => Box::new(NormLoss::new(domain)),
        "quadratic" => {
            Box::new(QuadraticLoss::new(mu, z_bound()?, domain, radius).map_err(to_pyerr)?)
        }
        "linear" => Box::new(LinearLoss::new(z_bound()?, domain).map_err(to_pyerr)?),
        other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    })
}

/// User-level DP-SGD (or its localized variant) on `data[user][item][coord]`.
#[pyfunction]
#[pyo3(signature = (data, loss, budget, domain_radius = 1.0, mu = 1.0, z_bound = None, t_cap = 20_000, localized = false, seed = 0, zero_noise = false))]
#[allow(clippy::too_many_arguments)]
fn dpsgd<'py>(
    py: Python<'py>,
    data: Vec<Vec<Vec<f64>>>,
    loss: &str,
    budget: &PyBudget,
    domain_radius: f64,
    mu: f64,
    z_bound: Option<f64>,
    t_cap: usize,
    localized: bool,
    seed: u64,
    zero_noise: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let data = UserDataset::from_nested(&data).map_err(to_pyerr)?;
    let loss = build_loss(loss, data.shape().d, domain_radius, mu, z_bound)?;
    let mut rng = RngStream::new(seed, 0);
    if zero_noise {
        rng = rng.with_hook(NoiseHook::Zeroed);
    }
    let budget = budget.inner;
    if localized {
        let out = py
            .detach(|| {
                userdp::localized_dpsgd(
                    &data,
                    loss.as_ref(),
                    budget,
                    userdp::optimizer::DEFAULT_LOCALIZATION_C,
                    t_cap,
                    &mut rng,
                )
            })
            .map_err(to_pyerr)?;
        to_py(py, &out)
    } else {
        let domain = loss.domain();
        let config = userdp::default_config(
            data.shape(),
            budget,
            loss.lipschitz(),
            domain.diameter(),
            domain.center.clone(),
            t_cap,
        )
        .map_err(to_pyerr)?;
        let out = py
            .detach(|| userdp::dpsgd(&data, loss.as_ref(), &config, &mut rng))
            .map_err(to_pyerr)?;
        to_py(py, &out)
    }
}

fn parse_config(config: &Bound<'_, PyAny>) -> PyResult<ExperimentConfig> {
    let text: String = match config.extract::<String>() {
        Ok(s) => s,
        Err(_) => config
            .py()
            .import("json")?
            .call_method1("dumps", (config,))?
            .extract()?,
    };
    ExperimentConfig::from_json(&text).map_err(to_pyerr)
}

/// Runs an experiment described by a config dict or JSON string; returns the full report.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut config = parse_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let report = py.detach(|| harness::run(&config)).map_err(to_pyerr)?;
    to_py(py, &report)
}

/// Runs a property-check suite (or "all"); returns a list of check reports.
#[pyfunction]
#[pyo3(signature = (suite, trials = None, seed = 0))]
fn verify<'py>(
    py: Python<'py>,
    suite: &str,
    trials: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let reports = py
        .detach(|| harness::run_suite(suite, trials, seed))
        .map_err(to_pyerr)?;
    to_py(py, &reports)
}

#[pymodule]
fn userdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBudget>()?;
    m.add_class::<PyAboveThreshold>()?;
    m.add_function(wrap_pyfunction!(mean_session, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(dpsgd, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("SUITES", harness::SUITES.to_vec())?;
    Ok(())
}
