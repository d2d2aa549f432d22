//! Python bindings: train, load, predict and evaluate models, and run the
//! posterior engines on explicit prior matrices.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use miml_core::io::{load_dataset, load_model, save_dataset, save_model};
use miml_core::synth::{generate_synthetic, Geometry, SynthSpec};
use miml_core::{
    bag_confidence, evaluate_model, fit, predict_bag, predict_inductive, predict_transductive, Bag,
    CoverageMode, Engine, FeatureMap, Instance, KernelOptions, LabelSet, MimlError, PriorMatrix,
    SubsetLattice, TrainConfig,
};

fn to_py(e: MimlError) -> PyErr {
    match e {
        MimlError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn label_set(classes: &[usize]) -> PyResult<LabelSet> {
    LabelSet::from_classes(classes.iter().copied()).map_err(to_py)
}

fn bag(instances: Vec<Vec<f64>>, label: Option<&[usize]>) -> PyResult<Bag> {
    let label = match label {
        Some(l) => label_set(l)?,
        None => LabelSet::EMPTY,
    };
    Ok(Bag::new(
        "py",
        instances.into_iter().map(Instance::new).collect(),
        label,
    ))
}

/// A trained model, linear or kernelized.
#[pyclass(name = "Model", module = "miml")]
struct PyModel {
    inner: miml_core::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_model(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn is_kernel(&self) -> bool {
        matches!(self.inner.features, FeatureMap::Kernel(_))
    }

    /// Weight rows; the last row is the bias.
    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights.to_rows()
    }

    /// Instance labels of one bag. Passing `label` restricts each instance to
    /// the bag label (transductive mode).
    #[pyo3(signature = (instances, label=None))]
    fn predict(&self, instances: Vec<Vec<f64>>, label: Option<Vec<usize>>) -> PyResult<Vec<usize>> {
        let b = bag(instances, label.as_deref())?;
        match label {
            Some(_) => predict_transductive(&self.inner, &b, b.label),
            None => predict_inductive(&self.inner, &b),
        }
        .map_err(to_py)
    }

    /// Predicted bag label as sorted class indices.
    fn predict_bag(&self, instances: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let b = bag(instances, None)?;
        Ok(predict_bag(&self.inner, &b)
            .map_err(to_py)?
            .iter()
            .collect())
    }

    /// Per-class bag confidence, the max instance prior.
    fn bag_scores(&self, instances: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let b = bag(instances, None)?;
        Ok(bag_confidence(&self.inner, &b).map_err(to_py)?.scores)
    }

    /// Metric report on a dataset file, keyed like the `evaluate` command.
    #[pyo3(signature = (data, raw_coverage=false))]
    fn evaluate(
        &self,
        py: Python<'_>,
        data: &str,
        raw_coverage: bool,
    ) -> PyResult<BTreeMap<String, f64>> {
        let (ds, _) = load_dataset(data, false).map_err(to_py)?;
        let coverage = if raw_coverage {
            CoverageMode::Raw
        } else {
            CoverageMode::Normalized
        };
        let ev = py
            .detach(|| evaluate_model(&self.inner, &ds, coverage))
            .map_err(to_py)?;
        let mut out = ev.model.to_map("model.");
        if let Some(t) = ev.transductive_accuracy {
            out.insert("model.transductive_accuracy".into(), t);
        }
        if let Some(d) = ev.dummy {
            out.extend(d.to_map("dummy."));
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(num_classes={}, input_dim={}, kernel={})",
            self.inner.num_classes,
            self.inner.input_dim,
            matches!(self.inner.features, FeatureMap::Kernel(_))
        )
    }
}

/// Trains a model on a dataset file by EM.
#[pyfunction]
#[pyo3(signature = (
    data, iters=50, l2=0.0, sample_frac=1.0, prune_frac=0.0, kernel=false,
    kernel_s=1.0, dict_frac=1.0, seed=0, engine="fast"
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &str,
    iters: usize,
    l2: f64,
    sample_frac: f64,
    prune_frac: f64,
    kernel: bool,
    kernel_s: f64,
    dict_frac: f64,
    seed: u64,
    engine: &str,
) -> PyResult<PyModel> {
    let (ds, _) = load_dataset(data, false).map_err(to_py)?;
    let cfg = TrainConfig {
        em_iterations: iters,
        l2_lambda: l2,
        sample_fraction: sample_frac,
        prune_fraction: prune_frac,
        rng_seed: seed,
        engine: engine.parse().map_err(to_py)?,
        ..TrainConfig::default()
    };
    let kopts = kernel.then_some(KernelOptions {
        scale_s: kernel_s,
        dict_fraction: dict_frac,
    });
    let (model, _) = py
        .detach(|| fit(&ds, &cfg, kopts.as_ref()))
        .map_err(to_py)?;
    Ok(PyModel { inner: model })
}

/// Exact posteriors `p(y_i = c | Y, X)` and `log p(Y | X)` for an explicit
/// prior matrix (one row per instance).
#[pyfunction]
#[pyo3(signature = (priors, label, engine="fast"))]
fn posteriors(
    priors: Vec<Vec<f64>>,
    label: Vec<usize>,
    engine: &str,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let engine: Engine = engine.parse().map_err(to_py)?;
    let p = PriorMatrix::from_rows(&priors).map_err(to_py)?;
    let lattice = SubsetLattice::new(label_set(&label)?).map_err(to_py)?;
    let r = engine.run(&p, &lattice).map_err(to_py)?;
    Ok((r.posterior.to_rows(), r.log_likelihood))
}

/// Writes a synthetic dataset with known instance labels.
#[pyfunction]
#[pyo3(signature = (path, classes=4, dim=5, bags=100, separation=4.0, noise=1.0, ring=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    path: &str,
    classes: usize,
    dim: usize,
    bags: usize,
    separation: f64,
    noise: f64,
    ring: bool,
    seed: u64,
) -> PyResult<()> {
    let spec = SynthSpec {
        num_classes: classes,
        feature_dim: dim,
        num_bags: bags,
        classes_per_bag: (1, classes.min(3)),
        separation,
        noise,
        geometry: if ring {
            Geometry::Ring
        } else {
            Geometry::GaussianClusters
        },
        seed,
        ..SynthSpec::default()
    };
    let ds = generate_synthetic(&spec).map_err(to_py)?;
    save_dataset(&ds, path).map_err(to_py)
}

#[pymodule]
fn miml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(posteriors, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
