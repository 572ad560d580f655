//! Python bindings: worst-case instances, the masked oracle, sparsifiers,
//! the timed simulator and the Monte-Carlo threshold checks.

use lbopt_core::algorithms::{AlgKind, Multipliers};
use lbopt_core::compressors::{self, SparseMessage};
use lbopt_core::kernels::{self, KernelParam};
use lbopt_core::lowerbound::{self, Bound as Threshold, TheoryInputs, TheoryModel};
use lbopt_core::rng::substream;
use lbopt_core::simulator::{self, Protocol, SimConfig, TimingModel};
use lbopt_core::worstcase::{self, InstanceParams, ObjectiveInstance, Variant};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: lbopt_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Serializes through JSON and returns the matching Python object.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn variant(name: &str) -> PyResult<Variant> {
    from_json(&format!("\"{name}\""))
}

#[pyfunction]
fn psi(a: f64, x: f64) -> PyResult<f64> {
    Ok(kernels::psi(KernelParam::new(a).map_err(err)?, x))
}

#[pyfunction]
fn phi(x: f64) -> f64 {
    kernels::phi(x)
}

#[pyfunction]
fn gamma(x: f64) -> f64 {
    kernels::gamma_fn(x)
}

/// Length of the longest prefix-anchored run with gaps shorter than `k`.
#[pyfunction]
#[pyo3(signature = (x, k = 1))]
fn prog(x: Vec<f64>, k: usize) -> usize {
    worstcase::prog(&x, k)
}

/// A scaled worst-case instance.
#[pyclass(name = "Instance", frozen)]
struct PyInstance {
    inner: ObjectiveInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (l, delta, eps, n, sigma2, d, variant = "new"))]
    fn new(l: f64, delta: f64, eps: f64, n: usize, sigma2: f64, d: usize, variant: &str) -> PyResult<Self> {
        let params = InstanceParams::new(l, delta, eps, n, sigma2, d, self::variant(variant)?);
        Ok(Self {
            inner: worstcase::build_instance(params).map_err(err)?,
        })
    }

    /// Unit `L` and `eps`, chain length `t`, gate probability `p_sigma`.
    #[staticmethod]
    #[pyo3(signature = (n, t, p_sigma, d, variant = "new"))]
    fn for_chain(n: usize, t: usize, p_sigma: f64, d: usize, variant: &str) -> PyResult<Self> {
        let params = InstanceParams::for_chain(n, t, p_sigma, d, self::variant(variant)?).map_err(err)?;
        Ok(Self {
            inner: worstcase::build_instance(params).map_err(err)?,
        })
    }

    #[getter]
    #[allow(non_snake_case)]
    fn T(&self) -> usize {
        self.inner.t
    }

    #[getter]
    #[allow(non_snake_case)]
    fn K(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn p_sigma(&self) -> f64 {
        self.inner.p_sigma
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval_scaled(&x).map_err(err)
    }

    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_scaled(&x).map_err(err)
    }

    /// One stochastic gradient; returns `(gradient, coin)`.
    #[pyo3(signature = (x, seed, index = 0))]
    fn oracle(&self, x: Vec<f64>, seed: u64, index: u64) -> PyResult<(Vec<f64>, bool)> {
        let d = lbopt_core::oracle::draw(&self.inner, &x, &mut substream(seed, &[index])).map_err(err)?;
        Ok((d.result, d.bernoulli))
    }

    fn oracle_variance(&self, x: Vec<f64>) -> PyResult<f64> {
        lbopt_core::oracle::exact_variance(&self.inner, &x).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Runs one algorithm and returns the run record as a dict.
    #[pyo3(signature = (alg, seed = 1, h = 1.0, tau_s = 0.0, tau_w = 0.0, protocol = "p2", budget = None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        alg: &str,
        seed: u64,
        h: f64,
        tau_s: f64,
        tau_w: f64,
        protocol: &str,
        budget: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let kind: AlgKind = from_json(&format!("\"{alg}\""))?;
        let protocol: Protocol = from_json(&format!("\"{protocol}\""))?;
        let timing = TimingModel::new(h, tau_s, tau_w).map_err(err)?;
        let p = &self.inner.params;
        let predicted = theory(p, &timing, kind);
        let budget = budget.unwrap_or(50.0 * predicted);
        let mut a = kind.build(&self.inner, &timing, &Multipliers::default()).map_err(err)?;
        let cfg = SimConfig::new(protocol, timing, budget, seed);
        let out = simulator::run(&cfg, &self.inner, a.as_mut()).map_err(err)?;
        let rec = to_py(py, &out.record)?;
        rec.set_item("theory_time", predicted)?;
        Ok(rec)
    }
}

fn theory(p: &InstanceParams, t: &TimingModel, kind: AlgKind) -> f64 {
    let model = match kind {
        AlgKind::BatchSyncSgd => TheoryModel::Eq3,
        AlgKind::BatchQsgd => TheoryModel::Eq5,
        AlgKind::LocalSgd => TheoryModel::Local,
        AlgKind::GreedyChaser => TheoryModel::Eq8Min,
    };
    lowerbound::theory_time(
        model,
        &TheoryInputs {
            l: p.l,
            delta: p.delta,
            eps: p.eps,
            sigma2: p.sigma2,
            n: p.n,
            d: p.d,
            h: t.h,
            tau_s: t.tau_s,
            tau_w: t.tau_w,
        },
    )
}

fn message<'py>(py: Python<'py>, m: &SparseMessage, d: usize) -> PyResult<Bound<'py, PyAny>> {
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("indices", m.entries.iter().map(|e| e.0).collect::<Vec<_>>())?;
    dict.set_item("values", m.entries.iter().map(|e| e.1).collect::<Vec<_>>())?;
    dict.set_item("scale", m.scale)?;
    dict.set_item("decoded", m.decode(d))?;
    Ok(dict.into_any())
}

/// RandK sparsifier; indices are 1-based.
#[pyfunction]
#[pyo3(signature = (x, k, seed, index = 0))]
fn rand_k<'py>(py: Python<'py>, x: Vec<f64>, k: usize, seed: u64, index: u64) -> PyResult<Bound<'py, PyAny>> {
    let m = compressors::rand_k(&x, k, &mut substream(seed, &[index])).map_err(err)?;
    message(py, &m, x.len())
}

/// Block `part` of a PermK partition shared by all workers with the same seed.
#[pyfunction]
#[pyo3(signature = (x, part, n, seed, index = 0))]
fn perm_k<'py>(py: Python<'py>, x: Vec<f64>, part: usize, n: usize, seed: u64, index: u64) -> PyResult<Bound<'py, PyAny>> {
    let m = compressors::perm_k(&x, part, n, &mut substream(seed, &[index])).map_err(err)?;
    message(py, &m, x.len())
}

/// Monte-Carlo check of a threshold; `bound` is the JSON form of a bound.
#[pyfunction]
fn mc_verify<'py>(py: Python<'py>, bound: &str, trials: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let bound: Threshold = from_json(bound)?;
    let report = py.detach(|| lowerbound::mc_verify(&bound, trials, seed)).map_err(err)?;
    to_py(py, &report)
}

/// Threshold of the block-sum bound for a chain instance.
#[pyfunction]
#[pyo3(signature = (inst, h, tau_s, delta))]
fn block_sum_bound(inst: &PyInstance, h: f64, tau_s: f64, delta: f64) -> PyResult<String> {
    let b = Threshold::Lemma6(lowerbound::BlockSumParams::from_instance(&inst.inner, h, tau_s, delta));
    serde_json::to_string(&b).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Threshold of the recursion bound for a chain instance.
#[pyfunction]
#[pyo3(signature = (inst, h, tau_w, delta))]
fn recursion_bound(inst: &PyInstance, h: f64, tau_w: f64, delta: f64) -> PyResult<String> {
    let b = Threshold::Lemma8(lowerbound::RecursionParams::from_instance(&inst.inner, h, tau_w, delta));
    serde_json::to_string(&b).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn lbopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(prog, m)?)?;
    m.add_function(wrap_pyfunction!(rand_k, m)?)?;
    m.add_function(wrap_pyfunction!(perm_k, m)?)?;
    m.add_function(wrap_pyfunction!(mc_verify, m)?)?;
    m.add_function(wrap_pyfunction!(block_sum_bound, m)?)?;
    m.add_function(wrap_pyfunction!(recursion_bound, m)?)?;
    m.add("PHI_SUP", kernels::PHI_SUP)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_time_matches_the_single_worker_count() {
        let p = InstanceParams::new(1.0, 7296.0, 1.0, 1, 0.0, 256, Variant::Classic);
        let t = TimingModel::new(2.0, 0.0, 0.0).unwrap();
        assert_eq!(theory(&p, &t, AlgKind::BatchSyncSgd), 2.0 * 7296.0);
        assert_eq!(theory(&p, &t, AlgKind::LocalSgd), 2.0 * 7296.0);
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(variant("classic").unwrap(), Variant::Classic);
        assert_eq!(variant("new").unwrap(), Variant::New);
    }
}
