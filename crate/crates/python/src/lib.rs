//! Python bindings for the `dlgfa` crate.
//!
//! Arrays cross the boundary as nested Python lists; datasets are
//! `N × T × d` and loading matrices `p × K`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dlgfa::data::{self, BarMode, LongitudinalDataset, SplitSpec};
use dlgfa::eval::{self, NoiseMode};
use dlgfa::model::{self, DlgfaModel, GaussianParams, GroupSpec, ModelConfig};
use dlgfa::optim::{self, OptimConfig};
use dlgfa::{objective, DlgfaError, Tensor};

fn to_py(err: DlgfaError) -> PyErr {
    match err {
        DlgfaError::Io { .. } => PyIOError::new_err(err.to_string()),
        DlgfaError::IndexOutOfRange(_) => PyIndexError::new_err(err.to_string()),
        DlgfaError::NonFinite(_) | DlgfaError::Training(_) | DlgfaError::Oracle(_) => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(to_py)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.cols();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn parse_mode(mode: &str, timesteps: Option<usize>) -> PyResult<BarMode> {
    match mode {
        "row_as_time" => Ok(BarMode::RowAsTime),
        "replicate" => Ok(BarMode::Replicate {
            timesteps: timesteps.unwrap_or(8),
        }),
        other => Err(PyValueError::new_err(format!(
            "unknown mode {other:?}; expected \"row_as_time\" or \"replicate\""
        ))),
    }
}

/// Multi-view longitudinal dataset of `N` subjects, `T` timesteps and `d`
/// features split into groups.
#[pyclass(name = "Dataset", module = "dlgfa_py", frozen)]
pub struct PyDataset {
    inner: LongitudinalDataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from a nested `N × T × d` list.
    #[new]
    #[pyo3(signature = (values, group_dims, group_names=None))]
    fn new(values: Vec<Vec<Vec<f64>>>, group_dims: Vec<usize>, group_names: Option<Vec<String>>) -> PyResult<Self> {
        let names = group_names.unwrap_or_else(|| (1..=group_dims.len()).map(|g| format!("g{g}")).collect());
        let groups = GroupSpec::new(group_dims, names).map_err(to_py)?;
        let timesteps = values.first().map_or(0, Vec::len);
        let d = groups.total_dim();
        let mut flat = Vec::with_capacity(values.len() * timesteps * d);
        for (i, seq) in values.iter().enumerate() {
            if seq.len() != timesteps || seq.iter().any(|row| row.len() != d) {
                return Err(PyValueError::new_err(format!("subject {i} is not {timesteps} × {d}")));
            }
            for row in seq {
                flat.extend_from_slice(row);
            }
        }
        let features = (0..d).map(|j| format!("f{}", j + 1)).collect();
        let subjects = (0..values.len()).map(|i| format!("s{}", i + 1)).collect();
        let times = (1..=timesteps).map(|t| t.to_string()).collect();
        LongitudinalDataset::new(flat, timesteps, groups, features, subjects, times)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, timesteps={}, dim={}, groups={})",
            self.inner.len(),
            self.inner.timesteps(),
            self.inner.dim(),
            self.inner.groups().count()
        )
    }

    #[getter]
    fn timesteps(&self) -> usize {
        self.inner.timesteps()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn group_names(&self) -> Vec<String> {
        self.inner.groups().names().to_vec()
    }

    #[getter]
    fn group_dims(&self) -> Vec<usize> {
        self.inner.groups().dims().to_vec()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.inner.subject_ids().to_vec()
    }

    /// Values as a nested `N × T × d` list.
    fn values(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.inner.dim();
        (0..self.inner.len())
            .map(|i| self.inner.sequence(i).chunks(d).map(<[f64]>::to_vec).collect())
            .collect()
    }

    /// Random `(train, val, test)` partition by subject.
    #[pyo3(signature = (train=0.8, val=0.1, test=0.1, seed=0))]
    fn split(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
        let spec = SplitSpec { train, val, test, seed };
        let (a, b, c) = data::split_dataset(&self.inner, &spec).map_err(to_py)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }, PyDataset { inner: c }))
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::write_wide_csv(&self.inner, path).map_err(to_py)
    }
}

/// One-bar images: each `size × size` image has a single lit row.
#[pyfunction]
#[pyo3(signature = (n, size=8, noise_sd=0.05, seed=0, mode="row_as_time", timesteps=None))]
fn generate_one_bar(n: usize, size: usize, noise_sd: f64, seed: u64, mode: &str, timesteps: Option<usize>) -> PyResult<PyDataset> {
    let mode = parse_mode(mode, timesteps)?;
    data::generate_one_bar(n, size, noise_sd, seed, mode)
        .map(|inner| PyDataset { inner })
        .map_err(to_py)
}

/// Reads a wide CSV (`subject,t,<group>.<feature>,...`).
#[pyfunction]
#[pyo3(signature = (path, group_map=None))]
fn load_wide_csv(path: PathBuf, group_map: Option<std::collections::BTreeMap<String, String>>) -> PyResult<PyDataset> {
    data::load_wide_csv(path, group_map.as_ref())
        .map(|inner| PyDataset { inner })
        .map_err(to_py)
}

/// Per-column loading norms of a trained model.
#[pyclass(name = "SparsityReport", module = "dlgfa_py", frozen)]
pub struct PySparsityReport {
    inner: eval::SparsityReport,
}

#[pymethods]
impl PySparsityReport {
    #[getter]
    fn zero_count(&self) -> usize {
        self.inner.zero_count()
    }

    #[getter]
    fn column_count(&self) -> usize {
        self.inner.column_count()
    }

    #[getter]
    fn zero_fraction(&self) -> f64 {
        self.inner.zero_fraction()
    }

    #[getter]
    fn group_names(&self) -> Vec<String> {
        self.inner.group_names().to_vec()
    }

    /// `G × K` column norms at 1-based timestep `t`.
    fn heatmap(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner.heatmap(t).map_err(to_py)
    }

    fn heatmap_csv(&self, t: usize) -> PyResult<String> {
        eval::heatmap_csv(&self.inner, t).map_err(to_py)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_text(&self, t: usize) -> PyResult<String> {
        self.inner.to_text(t).map_err(to_py)
    }

    /// For each latent dimension, the `top_k` groups by loading norm at `t`.
    #[pyo3(signature = (t, top_k=3))]
    fn top_groups(&self, t: usize, top_k: usize) -> PyResult<Vec<Vec<(String, f64)>>> {
        eval::top_features_per_factor(&self.inner, t, top_k)
            .map(|r| r.per_factor)
            .map_err(to_py)
    }

    /// Latent dimensions whose top group at `t` is strict and unshared.
    fn distinct_top_groups(&self, t: usize) -> PyResult<usize> {
        let groups = self.inner.groups();
        eval::top_features_per_factor(&self.inner, t, groups)
            .map(|r| r.distinct_top_groups())
            .map_err(to_py)
    }
}

/// A recurrent group factor model with per-timestep loadings.
#[pyclass(name = "Model", module = "dlgfa_py")]
pub struct PyModel {
    inner: DlgfaModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (group_dims, max_timesteps, latent_dim=8, hidden_dim=32, loading_rows=1, feature_dim=32, group_names=None, seed=0, static_mode=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        group_dims: Vec<usize>,
        max_timesteps: usize,
        latent_dim: usize,
        hidden_dim: usize,
        loading_rows: usize,
        feature_dim: usize,
        group_names: Option<Vec<String>>,
        seed: u64,
        static_mode: bool,
    ) -> PyResult<Self> {
        let names = group_names.unwrap_or_else(|| (1..=group_dims.len()).map(|g| format!("g{g}")).collect());
        let groups = GroupSpec::new(group_dims, names).map_err(to_py)?;
        let mut cfg = ModelConfig::new(latent_dim, hidden_dim, loading_rows, max_timesteps, groups);
        cfg.feature_dim = feature_dim;
        cfg.static_mode = static_mode;
        DlgfaModel::new(cfg, seed).map(|inner| PyModel { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        model::load_checkpoint(path).map(|inner| PyModel { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(K={}, H={}, p={}, T={}, groups={})",
            c.latent_dim,
            c.hidden_dim,
            c.loading_rows,
            c.max_timesteps,
            c.groups.count()
        )
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.config.latent_dim
    }

    #[getter]
    fn max_timesteps(&self) -> usize {
        self.inner.config.max_timesteps
    }

    #[getter]
    fn zero_columns(&self) -> usize {
        self.inner.loadings.zero_column_count()
    }

    /// Loading matrix `W[t][g]` (0-based indices) as `p × K` rows.
    fn loading(&self, t: usize, g: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner.loadings.get(t, g).map(to_rows).map_err(to_py)
    }

    /// Test-set mean squared reconstruction error; `seed=None` uses the
    /// posterior mean, otherwise one sampled `z` per step.
    #[pyo3(signature = (dataset, seed=None))]
    fn mse(&self, py: Python<'_>, dataset: &PyDataset, seed: Option<u64>) -> PyResult<f64> {
        let noise = seed.map_or(NoiseMode::Zero, |seed| NoiseMode::Sampled { seed });
        py.detach(|| eval::mse_test(&self.inner, &dataset.inner, noise)).map_err(to_py)
    }

    /// Monte-Carlo estimate of the bound, averaged over `num_samples` draws.
    #[pyo3(signature = (dataset, num_samples=1, seed=0))]
    fn log_likelihood(&self, py: Python<'_>, dataset: &PyDataset, num_samples: usize, seed: u64) -> PyResult<f64> {
        py.detach(|| eval::test_log_likelihood(&self.inner, &dataset.inner, num_samples, seed))
            .map_err(to_py)
    }

    /// Collapsed bound terms for one batch with fixed noise, as a dict.
    fn elbo<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        noise: Vec<Vec<Vec<f64>>>,
        lambda_: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let ds = &dataset.inner;
        let indices: Vec<usize> = (0..ds.len()).collect();
        let batch = ds.batch_tensor(&indices).map_err(to_py)?;
        // noise arrives subject-major like the data; the model wants time-major
        let k = self.inner.config.latent_dim;
        let (n, t) = (ds.len(), ds.timesteps());
        if noise.len() != n || noise.iter().any(|s| s.len() != t || s.iter().any(|r| r.len() != k)) {
            return Err(PyValueError::new_err(format!("noise must be {n} × {t} × {k}")));
        }
        let mut flat = Vec::with_capacity(n * t * k);
        for step in 0..t {
            for seq in &noise {
                flat.extend_from_slice(&seq[step]);
            }
        }
        let noise = Tensor::new(vec![t, n, k], flat).map_err(to_py)?;
        let terms = objective::collapsed_elbo(&self.inner, &batch, &noise, lambda_).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("recon_loglik", terms.recon_loglik)?;
        out.set_item("kl", terms.kl)?;
        out.set_item("penalty", terms.penalty)?;
        out.set_item("objective", terms.objective)?;
        Ok(out)
    }

    fn sparsity_report(&self) -> PySparsityReport {
        PySparsityReport {
            inner: eval::sparsity_report(&self.inner),
        }
    }
}

/// Trains a model on `dataset`; returns `(model, history)` where history is a
/// list of per-epoch dicts.
#[pyfunction]
#[pyo3(signature = (
    dataset, latent_dim=8, hidden_dim=32, loading_rows=1, feature_dim=32,
    lambda_=1.0, lr_adam=1e-3, lr_prox=1e-4, batch_size=64, max_epochs=400, tol=1e-5, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    latent_dim: usize,
    hidden_dim: usize,
    loading_rows: usize,
    feature_dim: usize,
    lambda_: f64,
    lr_adam: f64,
    lr_prox: f64,
    batch_size: usize,
    max_epochs: usize,
    tol: f64,
    seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let ds = &dataset.inner;
    let mut cfg = ModelConfig::new(latent_dim, hidden_dim, loading_rows, ds.timesteps(), ds.groups().clone());
    cfg.feature_dim = feature_dim;
    let oc = OptimConfig {
        lr_adam,
        lr_prox,
        lambda: lambda_,
        batch_size,
        max_epochs,
        tol,
        weight_decay: 0.0,
        seed,
    };
    let (model, history) = py.detach(|| optim::fit(ds, cfg, &oc)).map_err(to_py)?;
    let rows = history
        .epochs
        .iter()
        .zip(&history.zero_columns)
        .enumerate()
        .map(|(i, (terms, zeros))| {
            let d = PyDict::new(py);
            d.set_item("epoch", i + 1)?;
            d.set_item("recon_loglik", terms.recon_loglik)?;
            d.set_item("kl", terms.kl)?;
            d.set_item("penalty", terms.penalty)?;
            d.set_item("objective", terms.objective)?;
            d.set_item("zero_columns", *zeros)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel { inner: model }, rows))
}

/// Column-wise group soft-thresholding of a `p × K` matrix.
#[pyfunction]
fn prox_group_columns(w: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<f64>>> {
    let mut t = matrix(&w)?;
    optim::prox_group_columns(&mut t, threshold).map_err(to_py)?;
    Ok(to_rows(&t))
}

fn gaussian(mean: Vec<f64>, scale: Vec<f64>) -> PyResult<GaussianParams> {
    GaussianParams::new(Tensor::vector(mean), Tensor::vector(scale)).map_err(to_py)
}

/// KL(q ‖ p) between diagonal Gaussians.
#[pyfunction]
fn kl_diag_gaussian(q_mean: Vec<f64>, q_scale: Vec<f64>, p_mean: Vec<f64>, p_scale: Vec<f64>) -> PyResult<f64> {
    objective::kl_diag_gaussian(&gaussian(q_mean, q_scale)?, &gaussian(p_mean, p_scale)?).map_err(to_py)
}

/// Log-density of `x` under a diagonal Gaussian.
#[pyfunction]
fn logpdf_diag_gaussian(x: Vec<f64>, mean: Vec<f64>, scale: Vec<f64>) -> PyResult<f64> {
    objective::logpdf_diag_gaussian(&Tensor::vector(x), &gaussian(mean, scale)?).map_err(to_py)
}

#[pymodule]
fn dlgfa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySparsityReport>()?;
    m.add_function(wrap_pyfunction!(generate_one_bar, m)?)?;
    m.add_function(wrap_pyfunction!(load_wide_csv, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(prox_group_columns, m)?)?;
    m.add_function(wrap_pyfunction!(kl_diag_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(logpdf_diag_gaussian, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
