use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bhplab_core::domains::Domain as CoreDomain;
use bhplab_core::exitstats::{self, TargetSet};
use bhplab_core::experiment::{self, ExperimentConfig};
use bhplab_core::kernel::{self, JumpKernelSpec};
use bhplab_core::rng::StreamKey;
use bhplab_core::sampler::{ModelSpec, ProcessModel as CoreModel};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(value_err)
}

/// An open set described by its JSON descriptor.
#[pyclass(frozen)]
struct Domain {
    inner: CoreDomain,
}

#[pymethods]
impl Domain {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let inner: CoreDomain = parse(spec)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ball(center: Vec<f64>, radius: f64) -> PyResult<Self> {
        let inner = CoreDomain::ball(center, radius);
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn slit_plane() -> Self {
        Self {
            inner: CoreDomain::SlitPlane,
        }
    }

    #[staticmethod]
    fn half_space(dim: usize) -> PyResult<Self> {
        if dim == 0 {
            return Err(PyValueError::new_err("dimension must be positive"));
        }
        Ok(Self {
            inner: CoreDomain::upper_half_space(dim),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contains(&self, x: Vec<f64>) -> bool {
        self.inner.contains(&x)
    }

    fn signed_distance(&self, x: Vec<f64>) -> f64 {
        self.inner.signed_distance(&x)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("domains serialize")
    }

    fn __repr__(&self) -> String {
        format!("Domain({})", self.to_json())
    }
}

/// A simulatable jump process.
#[pyclass(frozen)]
struct ProcessModel {
    inner: CoreModel,
}

#[pymethods]
impl ProcessModel {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let spec: ModelSpec = parse(spec)?;
        Ok(Self {
            inner: CoreModel::new(spec).map_err(value_err)?,
        })
    }

    /// Rotationally invariant α-stable process sampled by walk on balls.
    #[staticmethod]
    fn isotropic(alpha: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::isotropic(alpha, dim).map_err(value_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self.inner.spec()).expect("model specs serialize")
    }

    /// `n` exit positions from `domain` started at `x`.
    #[pyo3(signature = (domain, x, n, seed=0))]
    fn exit_samples(
        &self,
        py: Python<'_>,
        domain: &Domain,
        x: Vec<f64>,
        n: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let model = &self.inner;
        let d = &domain.inner;
        py.detach(|| {
            let mut rng = StreamKey::new(seed, 0).rng();
            (0..n)
                .map(|_| model.exit_sample(d, &x, &mut rng).map(|s| s.y))
                .collect::<Result<Vec<_>, _>>()
                .map_err(runtime_err)
        })
    }

    /// `(estimate, stderr)` of `E_x[τ_D]`.
    #[pyo3(signature = (domain, x, n, seed=0))]
    fn mean_exit_time(&self, py: Python<'_>, domain: &Domain, x: Vec<f64>, n: u64, seed: u64) -> PyResult<(f64, f64)> {
        let e = py
            .detach(|| exitstats::mean_exit_time(&self.inner, &domain.inner, &x, n, StreamKey::new(seed, 0)))
            .map_err(runtime_err)?;
        Ok((e.value, e.stderr))
    }

    /// `(estimate, stderr)` of `P_x(X_{τ_D} ∈ A)` for a JSON target set.
    #[pyo3(signature = (domain, x, target, n, seed=0))]
    fn harmonic_measure(
        &self,
        py: Python<'_>,
        domain: &Domain,
        x: Vec<f64>,
        target: &str,
        n: u64,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        let target: TargetSet = parse(target)?;
        let e = py
            .detach(|| exitstats::harmonic_measure(&self.inner, &domain.inner, &x, &target, n, StreamKey::new(seed, 0)))
            .map_err(runtime_err)?;
        Ok((e.value, e.stderr))
    }

    fn __repr__(&self) -> String {
        format!("ProcessModel({})", self.to_json())
    }
}

/// `∫_{|z| > r} j(x, z) dz` for a JSON kernel spec.
#[pyfunction]
fn tail_mass(kernel: &str, x: Vec<f64>, r: f64) -> PyResult<f64> {
    let j: JumpKernelSpec = parse(kernel)?;
    Ok(kernel::tail_mass(&j, &x, r).map_err(value_err)?.value)
}

/// `κ/|z|^{d+α}` as a JSON kernel spec.
#[pyfunction]
#[pyo3(signature = (dim, alpha, kappa=1.0))]
fn stable_kernel(dim: usize, alpha: f64, kappa: f64) -> String {
    serde_json::to_string(&JumpKernelSpec::stable(dim, alpha, kappa)).expect("kernels serialize")
}

/// Runs an experiment config and returns the JSON report.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config).map_err(value_err)?;
    let out = py.detach(|| experiment::run_experiment(&cfg)).map_err(runtime_err)?;
    Ok(serde_json::to_string(&out.report).expect("reports serialize"))
}

/// `(table, failed)` over report files.
#[pyfunction]
fn summarize(paths: Vec<std::path::PathBuf>) -> PyResult<(String, usize)> {
    let s = experiment::summarize(&paths).map_err(value_err)?;
    Ok((s.table(), s.failed))
}

#[pymodule]
fn bhplab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA", experiment::SCHEMA)?;
    m.add_class::<Domain>()?;
    m.add_class::<ProcessModel>()?;
    m.add_function(wrap_pyfunction!(tail_mass, m)?)?;
    m.add_function(wrap_pyfunction!(stable_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
