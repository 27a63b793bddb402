//! Python bindings: a thin layer over the statknnad library. Matrices cross
//! the boundary as lists of rows; reports come back as plain dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use statknnad::harness::{self, SyntheticSpec};
use statknnad::inference::{self, InferenceError, InferenceOptions};
use statknnad::knnad::{self, KSpec, Metric, ScreeningConfig};
use statknnad::model::StatisticKind;
use statknnad::truncation::IntervalUnion;
use statknnad::Dataset;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("empty matrix"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

#[derive(FromPyObject)]
enum KArg {
    #[pyo3(transparent)]
    Fixed(usize),
    #[pyo3(transparent)]
    Candidates(Vec<usize>),
}

impl From<KArg> for KSpec {
    fn from(k: KArg) -> Self {
        match k {
            KArg::Fixed(k) => KSpec::Fixed(k),
            KArg::Candidates(c) => KSpec::Candidates(c),
        }
    }
}

fn parse_statistic(name: &str) -> PyResult<StatisticKind> {
    match name {
        "l1" => Ok(StatisticKind::L1Norm),
        "image-mean" => Ok(StatisticKind::ImageMean),
        other => Err(PyValueError::new_err(format!("unknown statistic {other}"))),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into_any()
            } else {
                n.as_f64()
                    .unwrap_or(f64::NAN)
                    .into_pyobject(py)?
                    .unbind()
                    .into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, value) in map {
                dict.set_item(key, json_to_py(py, value)?)?;
            }
            dict.unbind().into_any()
        }
    })
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    json_to_py(py, &serde_json::to_value(value).map_err(err)?)
}

/// Piecewise-linear network handle.
#[pyclass(name = "PLNetwork")]
struct PyPLNetwork {
    inner: statknnad::PLNetwork,
}

#[pymethods]
impl PyPLNetwork {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: statknnad::PLNetwork::from_json(text).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, dims, with_pool=false))]
    fn random(seed: u64, dims: Vec<usize>, with_pool: bool) -> PyResult<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: statknnad::PLNetwork::random_mlp(&mut rng, &dims, with_pool).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let (out, _) = self
            .inner
            .forward(&DVector::from_vec(x))
            .map_err(err)?;
        Ok(out.iter().copied().collect())
    }
}

/// Leave-one-out quantile calibration of the screening threshold.
#[pyfunction]
fn choose_theta(train: Vec<Vec<f64>>, k: KArg, quantile: f64) -> PyResult<f64> {
    let train = to_matrix(&train)?;
    let config = ScreeningConfig {
        k: k.into(),
        theta: 0.0,
        metric: Metric::SquaredL2,
    };
    knnad::choose_theta(&train, &config, quantile).map_err(err)
}

/// kNN anomaly screening; returns the score, verdict, and neighbor set.
#[pyfunction]
fn screen(
    py: Python<'_>,
    test: Vec<f64>,
    train: Vec<Vec<f64>>,
    k: KArg,
    theta: f64,
) -> PyResult<Py<PyAny>> {
    let train = to_matrix(&train)?;
    let config = ScreeningConfig {
        k: k.into(),
        theta,
        metric: Metric::SquaredL2,
    };
    let res = knnad::screen(&DVector::from_vec(test), &train, &config).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("selected", res.selected)?;
    dict.set_item("score", res.score)?;
    dict.set_item("k_star", res.outcome.k_star)?;
    dict.set_item("neighbors", res.outcome.neighbors.clone())?;
    dict.set_item("kth_index", res.outcome.kth_index)?;
    Ok(dict.unbind().into_any())
}

/// Full selective-inference pipeline for one test instance. Returns a dict
/// with `screened` plus, for screened instances, every p-value variant and
/// the truncation region.
#[pyfunction]
#[pyo3(signature = (test, train, k, theta, statistic="l1", net_json=None,
                    omit_knnad_events=false, omit_dnn_events=false))]
#[allow(clippy::too_many_arguments)]
fn selective_p(
    py: Python<'_>,
    test: Vec<f64>,
    train: Vec<Vec<f64>>,
    k: KArg,
    theta: f64,
    statistic: &str,
    net_json: Option<&str>,
    omit_knnad_events: bool,
    omit_dnn_events: bool,
) -> PyResult<Py<PyAny>> {
    let train = to_matrix(&train)?;
    let data = Dataset::with_identity_sigma(train).map_err(err)?;
    let config = ScreeningConfig {
        k: k.into(),
        theta,
        metric: Metric::SquaredL2,
    };
    let kind = parse_statistic(statistic)?;
    let net = net_json
        .map(statknnad::PLNetwork::from_json)
        .transpose()
        .map_err(err)?;
    let opts = InferenceOptions {
        omit_knnad_events,
        omit_dnn_events,
    };
    match inference::selective_p(
        &DVector::from_vec(test),
        &data,
        &config,
        kind,
        net.as_ref(),
        &opts,
    ) {
        Ok(report) => {
            let obj = serialize_to_py(py, &report)?;
            let dict = obj.cast_bound::<PyDict>(py)?;
            dict.set_item("screened", true)?;
            Ok(dict.clone().unbind().into_any())
        }
        Err(InferenceError::NotACandidate) => {
            let dict = PyDict::new(py);
            dict.set_item("screened", false)?;
            Ok(dict.unbind().into_any())
        }
        Err(e) => Err(err(e)),
    }
}

/// Survival function of a zero-mean truncated normal over a union of
/// intervals; `None` endpoints are unbounded.
#[pyfunction]
fn tn_survival(
    z_obs: f64,
    sigma2: f64,
    intervals: Vec<(Option<f64>, Option<f64>)>,
) -> PyResult<f64> {
    let region = IntervalUnion::from_intervals(
        intervals
            .into_iter()
            .map(|(lo, hi)| {
                (
                    lo.unwrap_or(f64::NEG_INFINITY),
                    hi.unwrap_or(f64::INFINITY),
                )
            })
            .collect(),
        1e-12,
    );
    inference::tn_survival(z_obs, sigma2, &region).map_err(err)
}

/// Synthetic null / power experiment; rates are conditional on screening.
#[pyfunction]
#[pyo3(signature = (n, d, k, delta, trials, seed, alpha=0.05, theta_quantile=0.95,
                    statistic="l1", net_json=None))]
#[allow(clippy::too_many_arguments)]
fn experiment(
    py: Python<'_>,
    n: usize,
    d: usize,
    k: KArg,
    delta: f64,
    trials: u64,
    seed: u64,
    alpha: f64,
    theta_quantile: f64,
    statistic: &str,
    net_json: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let net = net_json
        .map(statknnad::PLNetwork::from_json)
        .transpose()
        .map_err(err)?;
    let spec = SyntheticSpec {
        n,
        d,
        k: k.into(),
        delta,
        trials,
        seed,
        theta_quantile,
        kind: parse_statistic(statistic)?,
        net,
        options: InferenceOptions::default(),
    };
    let result = if delta > 0.0 {
        harness::run_power(&spec, alpha)
    } else {
        harness::run_null(&spec, alpha)
    }
    .map_err(err)?;
    let obj = serialize_to_py(py, &result)?;
    let dict = obj.cast_bound::<PyDict>(py)?;
    let records = PyList::empty(py);
    for r in &result.records {
        records.append(serialize_to_py(py, r)?)?;
    }
    dict.set_item("records", records)?;
    Ok(dict.clone().unbind().into_any())
}

#[pymodule]
fn statknnad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPLNetwork>()?;
    m.add_function(wrap_pyfunction!(choose_theta, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(selective_p, m)?)?;
    m.add_function(wrap_pyfunction!(tn_survival, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}
