use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use emulsion::entropy;
use emulsion::finite_model::FiniteInstance;
use emulsion::frequencies::{self, FieldConfig};
use emulsion::interface::{self, EstimatorConfig, InterfaceEstimator};
use emulsion::phases::{self, PhaseConfig, PhaseContext};
use emulsion::solver;
use emulsion::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A point `(α, β)` of the cone `α ≥ |β|`.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct InteractionPoint {
    inner: interface::InteractionPoint,
}

#[pymethods]
impl InteractionPoint {
    #[new]
    fn new(alpha: f64, beta: f64) -> PyResult<Self> {
        Ok(InteractionPoint { inner: interface::InteractionPoint::new(alpha, beta).map_err(to_py)? })
    }

    #[staticmethod]
    fn on_diagonal(r: f64, beta: f64) -> PyResult<Self> {
        Ok(InteractionPoint { inner: interface::InteractionPoint::on_diagonal(r, beta).map_err(to_py)? })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r()
    }

    fn __repr__(&self) -> String {
        format!("InteractionPoint(alpha={}, beta={})", self.inner.alpha, self.inner.beta)
    }
}

/// Percolation frequencies `(ρ*, ρ*_BA, ρ*_BB)`.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct Frequencies {
    inner: frequencies::FrequencyTriple,
}

#[pymethods]
impl Frequencies {
    #[new]
    fn new(rho_star: f64, rho_ba: f64) -> PyResult<Self> {
        Ok(Frequencies { inner: frequencies::FrequencyTriple::new(rho_star, rho_ba).map_err(to_py)? })
    }

    #[getter]
    fn rho_star(&self) -> f64 {
        self.inner.rho_star
    }

    #[getter]
    fn rho_ba(&self) -> f64 {
        self.inner.rho_ba
    }

    #[getter]
    fn rho_bb(&self) -> f64 {
        self.inner.rho_bb
    }

    #[getter]
    fn stderr(&self) -> (f64, f64, f64) {
        let s = self.inner.stderr;
        (s[0], s[1], s[2])
    }

    fn __repr__(&self) -> String {
        format!("Frequencies(rho_star={}, rho_ba={}, rho_bb={})", self.inner.rho_star, self.inner.rho_ba, self.inner.rho_bb)
    }
}

/// Result of one of the variational solvers.
#[pyclass(frozen, get_all)]
pub struct Solution {
    label: String,
    value: f64,
    stderr: f64,
    x: f64,
    y: f64,
    iterations: usize,
}

impl From<solver::PhaseSolution> for Solution {
    fn from(s: solver::PhaseSolution) -> Self {
        Solution { label: format!("{:?}", s.label), value: s.value, stderr: s.stderr, x: s.x, y: s.y, iterations: s.trace.len() }
    }
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!("Solution(label={}, value={}, stderr={})", self.label, self.value, self.stderr)
    }
}

fn estimator(l_ladder: Option<Vec<usize>>, samples: Option<usize>, seed: Option<u64>) -> PyResult<InterfaceEstimator> {
    let mut cfg = EstimatorConfig::default();
    if let Some(l) = l_ladder {
        cfg.l_ladder = l;
        // Slopes beyond half the shortest path are unreachable.
        if let Some(&n_min) = cfg.lengths().iter().min() {
            cfg.mu_max = cfg.mu_max.min(0.5 * n_min as f64);
        }
    }
    if let Some(s) = samples {
        cfg.samples = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    InterfaceEstimator::new(cfg).map_err(to_py)
}

fn field_config(m: Option<usize>, t: Option<usize>, fields: Option<usize>, seed: Option<u64>) -> FieldConfig {
    let d = FieldConfig::default();
    FieldConfig { m: m.unwrap_or(d.m), t: t.unwrap_or(d.t), fields: fields.unwrap_or(d.fields), seed: seed.unwrap_or(d.seed) }
}

/// `κ(a, b)`.
#[pyfunction]
fn kappa(a: f64, b: f64) -> PyResult<f64> {
    entropy::kappa_block(a, b).map_err(to_py)
}

/// `κ(a, 1)`.
#[pyfunction]
fn kappa_diag(a: f64) -> PyResult<f64> {
    entropy::kappa_diag(a).map_err(to_py)
}

/// `κ̂(μ)`.
#[pyfunction]
fn hat_kappa(mu: f64) -> PyResult<f64> {
    entropy::hat_kappa(mu).map_err(to_py)
}

/// `G(μ, a)`.
#[pyfunction]
fn entropy_g(mu: f64, a: f64) -> PyResult<f64> {
    entropy::entropy_g(mu, a).map_err(to_py)
}

#[pyfunction]
fn lower_bound_curve(r: f64) -> PyResult<f64> {
    phases::lower_bound_curve(r).map_err(to_py)
}

/// Quenched interface free energy `(value, stderr)` at slope `mu`.
#[pyfunction]
#[pyo3(signature = (point, mu, l_ladder=None, samples=None, seed=None))]
fn phi_i(
    py: Python<'_>,
    point: InteractionPoint,
    mu: f64,
    l_ladder: Option<Vec<usize>>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> PyResult<(f64, f64)> {
    let est = estimator(l_ladder, samples, seed)?;
    let e = py.detach(|| est.phi_i(point.inner, mu)).map_err(to_py)?;
    Ok((e.value, e.stderr))
}

/// Percolation frequencies estimated from sampled block fields.
#[pyfunction]
#[pyo3(signature = (p, m=None, t=None, fields=None, seed=None))]
fn estimate_frequencies(
    py: Python<'_>,
    p: f64,
    m: Option<usize>,
    t: Option<usize>,
    fields: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Frequencies> {
    let cfg = field_config(m, t, fields, seed);
    let inner = py.detach(|| frequencies::rho_star_estimate(p, &cfg)).map_err(to_py)?;
    Ok(Frequencies { inner })
}

#[pyfunction]
fn solve_f_d1(r: f64, rho: Frequencies) -> PyResult<Solution> {
    Ok(solver::solve_f_d1(r, &rho.inner).map_err(to_py)?.into())
}

#[pyfunction]
fn solve_f_d2(r: f64, rho: Frequencies) -> PyResult<Solution> {
    Ok(solver::solve_f_d2(r, &rho.inner).map_err(to_py)?.into())
}

/// Full free energy at `point` for disorder density `p`.
#[pyfunction]
#[pyo3(signature = (point, p, m=None, t=None, fields=None, l_ladder=None, samples=None, seed=None))]
#[allow(clippy::too_many_arguments)]
fn solve_f_full(
    py: Python<'_>,
    point: InteractionPoint,
    p: f64,
    m: Option<usize>,
    t: Option<usize>,
    fields: Option<usize>,
    l_ladder: Option<Vec<usize>>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Solution> {
    let est = estimator(l_ladder, samples, seed)?;
    let cfg = field_config(m, t, fields, seed);
    py.detach(|| {
        let set = solver::FieldSet::sample(p, &cfg)?;
        solver::solve_f_full(point.inner, &set, &*est.accessor(point.inner)?)
    })
    .map(Solution::from)
    .map_err(to_py)
}

/// `(α*, residual)` for the given frequencies.
#[pyfunction]
fn alpha_star(p: f64, rho: Frequencies) -> PyResult<(f64, f64)> {
    let a = phases::alpha_star(p, &rho.inner).map_err(to_py)?;
    Ok((a.alpha, a.residual))
}

/// Phase label at `point` (`"D1"`, `"D2"`, `"L1"`, `"L2"` or `"UNCERTAIN"`)
/// and the list of candidate phases.
#[pyfunction]
#[pyo3(signature = (point, p, rho, l_ladder=None, samples=None, seed=None))]
fn classify(
    py: Python<'_>,
    point: InteractionPoint,
    p: f64,
    rho: Frequencies,
    l_ladder: Option<Vec<usize>>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> PyResult<(String, Vec<String>)> {
    let est = estimator(l_ladder, samples, seed)?;
    let ctx = PhaseContext { p, rho: rho.inner, estimator: &est, cfg: PhaseConfig::default() };
    let label = py.detach(|| phases::classify(point.inner, &ctx)).map_err(to_py)?;
    Ok((label.label.name().to_string(), label.candidates.iter().map(|c| c.name().to_string()).collect()))
}

/// `(1/n) log Z` of one sampled finite system.
#[pyfunction]
fn finite_log_partition(py: Python<'_>, n: usize, l: usize, p: f64, point: InteractionPoint, seed: u64) -> PyResult<f64> {
    py.detach(|| finite_model_value(n, l, p, point.inner, seed)).map_err(to_py)
}

fn finite_model_value(n: usize, l: usize, p: f64, point: interface::InteractionPoint, seed: u64) -> emulsion::Result<f64> {
    emulsion::finite_model::finite_log_partition(&FiniteInstance::sample(n, l, p, point, seed)?)
}

#[pymodule]
pub fn copolymer_emulsion(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<InteractionPoint>()?;
    m.add_class::<Frequencies>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_diag, m)?)?;
    m.add_function(wrap_pyfunction!(hat_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_g, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_curve, m)?)?;
    m.add_function(wrap_pyfunction!(phi_i, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(solve_f_d1, m)?)?;
    m.add_function(wrap_pyfunction!(solve_f_d2, m)?)?;
    m.add_function(wrap_pyfunction!(solve_f_full, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_star, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(finite_log_partition, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
