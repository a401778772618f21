//! Python bindings: `import divturan`.

use divturan::oracle;
use divturan::series::{evaluate, BlockCache, SeriesEstimate, TruncationParams};
use divturan::{AdmissibleFamily, Error, RootedComponent, Solver};
use num_bigint::BigUint;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::ResourceLimit { .. } | Error::TooLarge(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyfunction]
fn largest_prime_factor(d: u64) -> PyResult<u64> {
    if d == 0 {
        return Err(PyValueError::new_err("d must be positive"));
    }
    Ok(divturan::numtheory::largest_prime_factor(d))
}

/// Sorted `bound`-smooth numbers up to `limit`.
#[pyfunction]
fn smooth_numbers(bound: u64, limit: u64) -> Vec<u64> {
    divturan::numtheory::smooth_numbers(bound, limit).collect()
}

/// Elements of the component of `d` in the divisor graph on `{d, ..., t}`.
#[pyfunction]
fn rooted_component(d: u64, t: u64) -> PyResult<Vec<u64>> {
    if d == 0 || d > t {
        return Err(PyValueError::new_err("need 1 <= d <= t"));
    }
    Ok(divturan::rooted_component(d, t).elements().to_vec())
}

/// `(elements, root)` divided through by the gcd of the elements.
#[pyfunction]
fn canonical_key(mut elements: Vec<u64>, root: u64) -> PyResult<(Vec<u64>, u64)> {
    elements.sort_unstable();
    elements.dedup();
    let c = RootedComponent::new(elements, root)
        .ok_or_else(|| PyValueError::new_err("root must be one of the (positive) elements"))?;
    let key = divturan::canonical_key(&c);
    Ok((key.elements, key.root))
}

/// An admissible family: a builtin name (`two-fork`, `r-fork:R`, `in-fork:R`,
/// `chain:K`, `forest`), `file:PATH`, or JSON text via `Family.from_json`.
#[pyclass(frozen)]
struct Family {
    inner: AdmissibleFamily,
    solver: Solver,
}

impl Family {
    fn wrap(inner: AdmissibleFamily) -> Self {
        Self {
            solver: Solver::new(inner.clone()),
            inner,
        }
    }
}

#[pymethods]
impl Family {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        AdmissibleFamily::parse(spec).map(Self::wrap).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (text, name = "custom"))]
    fn from_json(text: &str, name: &str) -> PyResult<Self> {
        AdmissibleFamily::from_json(name, text).map(Self::wrap).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn family_hash(&self) -> &str {
        self.inner.family_hash()
    }

    #[getter]
    fn forest(&self) -> bool {
        self.inner.forest()
    }

    fn is_admissible(&self, set: Vec<u64>) -> bool {
        divturan::patterns::is_admissible(&set, &self.inner)
    }

    /// Largest admissible subset size.
    fn phi(&self, py: Python<'_>, set: Vec<u64>) -> PyResult<u32> {
        py.detach(|| self.solver.phi(&set)).map_err(to_py)
    }

    /// Number of admissible subsets, the empty set included.
    fn count_admissible(&self, py: Python<'_>, set: Vec<u64>) -> PyResult<BigUint> {
        py.detach(|| self.solver.count_admissible(&set)).map_err(to_py)
    }

    fn partition_function(&self, py: Python<'_>, set: Vec<u64>, z: f64) -> PyResult<f64> {
        py.detach(|| self.solver.partition_function(&set, z)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Family({:?})", self.inner.name())
    }
}

#[pyclass(frozen, get_all)]
struct Estimate {
    family: String,
    mode: String,
    alpha: f64,
    budget: f64,
    s: f64,
    w: f64,
    m: f64,
    lower: f64,
    upper: f64,
    blocks: usize,
    id_pairs: usize,
    terms: u64,
    segments: usize,
    slack: f64,
    bound_violations: usize,
}

impl From<SeriesEstimate> for Estimate {
    fn from(e: SeriesEstimate) -> Self {
        Self {
            family: e.family,
            mode: e.mode,
            alpha: e.alpha,
            budget: e.budget,
            s: e.s,
            w: e.w,
            m: e.m,
            lower: e.lower,
            upper: e.upper,
            blocks: e.blocks,
            id_pairs: e.id_pairs,
            terms: e.terms,
            segments: e.segments,
            slack: e.slack,
            bound_violations: e.bound_violations,
        }
    }
}

#[pymethods]
impl Estimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(family={:?}, mode={:?}, lower={}, upper={}, blocks={})",
            self.family, self.mode, self.lower, self.upper, self.blocks
        )
    }
}

/// Two-sided bound from the truncation `d * i^alpha <= budget`; `mode` is
/// `density`, `beta` or `pressure:Z`.
#[pyfunction]
#[pyo3(signature = (family, mode = "density", alpha = 10.0, budget = 1e8, cache = None))]
fn bound(
    py: Python<'_>,
    family: &Family,
    mode: &str,
    alpha: f64,
    budget: f64,
    cache: Option<std::path::PathBuf>,
) -> PyResult<Estimate> {
    let m = divturan::cli::parse_mode(mode).map_err(to_py)?;
    let params = TruncationParams::new(alpha, budget).map_err(to_py)?;
    let cache = match cache {
        Some(path) => BlockCache::open(&path),
        None => BlockCache::in_memory(),
    };
    let mut est = py
        .detach(|| evaluate(&family.inner, &m, params, &cache))
        .map_err(to_py)?;
    est.mode = mode.to_string();
    Ok(est.into())
}

#[pyfunction]
fn brute_f(py: Python<'_>, n: u64, family: &Family) -> PyResult<u32> {
    py.detach(|| oracle::brute_f(n, &family.inner)).map_err(to_py)
}

#[pyfunction]
fn brute_q(py: Python<'_>, n: u64, family: &Family) -> PyResult<BigUint> {
    py.detach(|| oracle::brute_q(n, &family.inner)).map_err(to_py)
}

/// The telescoping report as a dict.
#[pyfunction]
fn telescope_check<'py>(py: Python<'py>, n: u64, family: &Family) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| oracle::telescope_check(n, &family.inner))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("family", r.family)?;
    d.set_item("f", r.f)?;
    d.set_item("q_decimal", r.q_decimal)?;
    d.set_item("g_sequence", r.g_sequence)?;
    d.set_item("h_sequence", r.h_sequence)?;
    d.set_item("pass", r.pass)?;
    d.set_item("first_failure", r.first_failure)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "divturan")]
pub fn divturan_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(largest_prime_factor, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_numbers, m)?)?;
    m.add_function(wrap_pyfunction!(rooted_component, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_key, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(brute_f, m)?)?;
    m.add_function(wrap_pyfunction!(brute_q, m)?)?;
    m.add_function(wrap_pyfunction!(telescope_check, m)?)?;
    m.add_class::<Family>()?;
    m.add_class::<Estimate>()?;
    Ok(())
}
