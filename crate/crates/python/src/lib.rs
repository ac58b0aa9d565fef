//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use npt_frechet::bw_geometry::{self, CorrelationMatrix, GdConfig, SpdMatrix};
use npt_frechet::nonparanormal::{self, RawSample};
use npt_frechet::ot_oracle::{self, PointCloud};
use npt_frechet::quantile_space::{self, QuantileGrid};
use npt_frechet::regression::{self, DistributionalDataset, Method, PredictorTable, R2Report};
use npt_frechet::NptError;

type Matrix = Vec<Vec<f64>>;

fn py_err(e: NptError) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn spd(rows: &Matrix) -> PyResult<SpdMatrix> {
    SpdMatrix::from_rows(rows).map_err(py_err)
}

/// Bures–Wasserstein distance between two PSD matrices.
#[pyfunction]
fn bw_distance(a: Matrix, b: Matrix) -> PyResult<f64> {
    bw_geometry::bw_distance(&spd(&a)?, &spd(&b)?).map_err(py_err)
}

/// Nearest correlation matrix in BW distance (symmetric normalization).
#[pyfunction]
#[pyo3(signature = (m, eigen_floor = bw_geometry::DEFAULT_EIGEN_FLOOR))]
fn project_correlation(m: Matrix, eigen_floor: f64) -> PyResult<Matrix> {
    Ok(bw_geometry::project_correlation(&spd(&m)?, eigen_floor).map_err(py_err)?.to_rows())
}

/// Weighted BW barycenter of correlation matrices: `(estimate, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (mats, weights, max_iter = 100, tol = 1e-10))]
fn fit_correlation_frechet(mats: Vec<Matrix>, weights: Vec<f64>, max_iter: usize, tol: f64) -> PyResult<(Matrix, usize, bool)> {
    let mats = mats
        .iter()
        .map(|m| CorrelationMatrix::from_rows(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let cfg = GdConfig {
        max_iter,
        tol,
        ..GdConfig::default()
    };
    let sol = bw_geometry::fit_correlation_frechet(&mats, &weights, &cfg).map_err(py_err)?;
    Ok((sol.estimate.to_rows(), sol.iterations, sol.converged))
}

/// Closed-form bivariate weighted barycenter correlation.
#[pyfunction]
fn bivariate_closed_form(rhos: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    bw_geometry::bivariate_closed_form(&rhos, &weights).map_err(py_err)
}

/// Euclidean projection onto nondecreasing sequences.
#[pyfunction]
fn isotonic_project(ys: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(quantile_space::isotonic_project(&ys, None).map_err(py_err)?.values().to_vec())
}

/// Sine-transformed Kendall τ matrix of an `N × d` sample.
#[pyfunction]
fn kendall_tau_matrix(rows: Matrix) -> PyResult<Matrix> {
    let s = RawSample::from_rows(&rows).map_err(py_err)?;
    Ok(nonparanormal::kendall_tau_matrix(&s).map_err(py_err)?.matrix.to_rows())
}

#[pyfunction]
fn phi(x: f64) -> f64 {
    nonparanormal::phi(x)
}

#[pyfunction]
fn phi_inv(p: f64) -> PyResult<f64> {
    nonparanormal::phi_inv(p).map_err(py_err)
}

/// Exact W2 between equal-size uniform point clouds.
#[pyfunction]
fn assignment_w2(a: Matrix, b: Matrix) -> PyResult<f64> {
    let a = PointCloud::from_rows(&a).map_err(py_err)?;
    let b = PointCloud::from_rows(&b).map_err(py_err)?;
    ot_oracle::assignment_w2(&a, &b).map_err(py_err)
}

/// Exact univariate W2 between equal-size samples.
#[pyfunction]
fn sorted_w2(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    ot_oracle::sorted_w2(&xs, &ys).map_err(py_err)
}

/// Marginal quantiles on a grid plus a latent correlation matrix.
#[pyclass(name = "Nonparanormal", module = "nptfr", skip_from_py_object)]
#[derive(Clone)]
struct PyNonparanormal {
    inner: nonparanormal::Nonparanormal,
}

#[pymethods]
impl PyNonparanormal {
    /// Estimates from an `N × d` sample.
    #[staticmethod]
    #[pyo3(signature = (rows, grid = quantile_space::DEFAULT_GRID_SIZE))]
    fn estimate(rows: Matrix, grid: usize) -> PyResult<Self> {
        let s = RawSample::from_rows(&rows).map_err(py_err)?;
        let grid = QuantileGrid::new(grid).map_err(py_err)?;
        let inner = nonparanormal::estimate(&s, grid).map_err(py_err)?;
        Ok(PyNonparanormal { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn quantiles(&self) -> Matrix {
        self.inner.marginals().iter().map(|q| q.values().to_vec()).collect()
    }

    #[getter]
    fn latent(&self) -> Matrix {
        self.inner.latent().to_rows()
    }

    fn distance(&self, other: &PyNonparanormal) -> PyResult<f64> {
        nonparanormal::npt_distance(&self.inner, &other.inner).map_err(py_err)
    }
}

/// A fitted regression of distributional responses on predictors.
#[pyclass(name = "Fit", module = "nptfr")]
struct PyFit {
    inner: regression::NptFit,
}

fn r2_dict<'py>(py: Python<'py>, r: &R2Report) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("marginal", r.marginal.clone())?;
    d.set_item("latent", r.latent)?;
    d.set_item("global", r.global)?;
    if let Some(inf) = &r.inference {
        d.set_item("raw_p", inf.raw_p.clone())?;
        d.set_item("adjusted_p", inf.adjusted_p.clone())?;
        d.set_item("replicates", inf.replicates)?;
        d.set_item("failed_replicates", inf.failed_replicates)?;
    }
    Ok(d)
}

#[pymethods]
impl PyFit {
    /// `samples[i]` is the `N_i × d` sample of subject `i`.
    #[new]
    #[pyo3(signature = (predictors, samples, method = "npt", grid = quantile_space::DEFAULT_GRID_SIZE, ridge = 0.0))]
    fn new(predictors: Matrix, samples: Vec<Matrix>, method: &str, grid: usize, ridge: f64) -> PyResult<Self> {
        let method: Method = method.parse().map_err(py_err)?;
        let table = PredictorTable::new(predictors, ridge).map_err(py_err)?;
        let samples = samples
            .iter()
            .map(|s| RawSample::from_rows(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let grid = QuantileGrid::new(grid).map_err(py_err)?;
        let ds = DistributionalDataset::from_samples(table, &samples, grid).map_err(py_err)?;
        let inner = regression::fit(&ds, &GdConfig::default(), method).map_err(py_err)?;
        Ok(PyFit { inner })
    }

    /// Predicted law at `z` as a dict with quantiles, latent and warnings.
    fn predict<'py>(&self, py: Python<'py>, z: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let p = self.inner.predict(&z).map_err(py_err)?;
        let d = PyDict::new(py);
        let quantiles: Matrix = p.distribution.marginals().iter().map(|q| q.values().to_vec()).collect();
        d.set_item("quantiles", quantiles)?;
        d.set_item("latent", p.distribution.latent().to_rows())?;
        d.set_item("iterations", p.latent_solve.iterations)?;
        d.set_item("converged", p.latent_solve.converged)?;
        d.set_item("warnings", p.warnings)?;
        Ok(d)
    }

    fn r2<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.r2_components().map_err(py_err)?;
        r2_dict(py, &r)
    }

    #[pyo3(signature = (replicates, seed))]
    fn permutation_test<'py>(&self, py: Python<'py>, replicates: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.permutation_test(replicates, seed).map_err(py_err)?;
        r2_dict(py, &r)
    }
}

#[pymodule]
fn nptfr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(project_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(fit_correlation_frechet, m)?)?;
    m.add_function(wrap_pyfunction!(bivariate_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(isotonic_project, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(phi_inv, m)?)?;
    m.add_function(wrap_pyfunction!(assignment_w2, m)?)?;
    m.add_function(wrap_pyfunction!(sorted_w2, m)?)?;
    m.add_class::<PyNonparanormal>()?;
    m.add_class::<PyFit>()?;
    Ok(())
}
