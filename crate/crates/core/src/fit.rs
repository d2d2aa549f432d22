//! End-to-end training (pruning, optional kernel features, EM) and k-fold
//! cross-validation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MimlError, Result};
use crate::kernel::{build_dictionary, kernelize, select_delta, KernelDictionary};
use crate::metrics::{
    evaluate, instance_accuracy, kfold_split, BagTruth, CoverageMode, DummyBaseline, MetricReport,
};
use crate::model::{FeatureMap, Model};
use crate::predict::{predict_dataset, predict_transductive, PredictMode};
use crate::train::{
    em_train, em_train_stochastic, prune_bags, train_sisl_dataset, TrainConfig, TrainTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Multiplier on the mean pairwise squared distance giving the RBF width.
    pub scale_s: f64,
    /// Fraction of training instances kept as anchors.
    pub dict_fraction: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            scale_s: 1.0,
            dict_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub bags_used: usize,
    pub bags_pruned: usize,
    pub cost_total: f64,
    pub cost_kept: f64,
    pub kernel_delta: Option<f64>,
    pub trace: TrainTrace,
}

fn features_for(
    train: &Dataset,
    cfg: &TrainConfig,
    kernel: Option<&KernelOptions>,
) -> Result<(Dataset, Option<KernelDictionary>)> {
    match kernel {
        None => Ok((train.clone(), None)),
        Some(k) => {
            let delta = select_delta(train, k.scale_s)?;
            let dict = build_dictionary(train, k.dict_fraction, cfg.rng_seed, delta, k.scale_s)?;
            Ok((kernelize(train, &dict)?, Some(dict)))
        }
    }
}

fn wrap(mut model: Model, dict: Option<KernelDictionary>, input_dim: usize) -> Model {
    if let Some(d) = dict {
        model.features = FeatureMap::Kernel(d);
    }
    model.input_dim = input_dim;
    model
}

/// Prunes by `cfg.prune_fraction`, builds kernel features if asked, then runs
/// EM (stochastic when `cfg.sample_fraction < 1`). The dummy baseline is fit on
/// the bags actually used.
pub fn fit(
    ds: &Dataset,
    cfg: &TrainConfig,
    kernel: Option<&KernelOptions>,
) -> Result<(Model, FitReport)> {
    cfg.validate()?;
    let pruned = prune_bags(ds, cfg.prune_fraction)?;
    let train = &pruned.dataset;
    let (features, dict) = features_for(train, cfg, kernel)?;
    let delta = dict.as_ref().map(|d| d.delta);
    let (model, trace) = if cfg.sample_fraction < 1.0 {
        em_train_stochastic(&features, cfg)?
    } else {
        em_train(&features, cfg)?
    };
    let mut model = wrap(model, dict, ds.feature_dim);
    model.baseline = Some(DummyBaseline::fit(train)?);
    Ok((
        model,
        FitReport {
            bags_used: train.bags.len(),
            bags_pruned: pruned.removed.len(),
            cost_total: pruned.cost_total,
            cost_kept: pruned.cost_kept,
            kernel_delta: delta,
            trace,
        },
    ))
}

/// Fully supervised reference on the true instance labels, in the same
/// feature space [`fit`] would use.
pub fn fit_sisl(ds: &Dataset, cfg: &TrainConfig, kernel: Option<&KernelOptions>) -> Result<Model> {
    let (features, dict) = features_for(ds, cfg, kernel)?;
    let (model, _) = train_sisl_dataset(&features, cfg)?;
    Ok(wrap(model, dict, ds.feature_dim))
}

/// Metrics of a model on a dataset, plus the transductive accuracy and the
/// stored baseline's metrics when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: MetricReport,
    pub transductive_accuracy: Option<f64>,
    pub dummy: Option<MetricReport>,
}

pub fn evaluate_model(model: &Model, ds: &Dataset, coverage: CoverageMode) -> Result<Evaluation> {
    let truth = BagTruth::from_dataset(ds);
    let preds = predict_dataset(model, ds, PredictMode::Inductive)?;
    let report = evaluate(&preds, &truth, ds.num_classes, coverage)?;
    let transductive_accuracy = if ds.has_true_labels() {
        let tp = ds
            .bags
            .iter()
            .map(|b| predict_transductive(model, b, b.label))
            .collect::<Result<Vec<_>>>()?;
        instance_accuracy(&tp, ds)
    } else {
        None
    };
    let dummy = match &model.baseline {
        Some(b) => Some(evaluate(&b.predict(ds), &truth, ds.num_classes, coverage)?),
        None => None,
    };
    Ok(Evaluation {
        model: report,
        transductive_accuracy,
        dummy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_bags: usize,
    pub test_bags: usize,
    pub evaluation: Evaluation,
    /// Instance accuracy of the supervised reference, when requested.
    pub sisl_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub coverage: CoverageMode,
    pub with_sisl: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            coverage: CoverageMode::Normalized,
            with_sisl: false,
        }
    }
}

/// k-fold cross-validation with a fixed iteration count (no tuning).
pub fn cross_validate(
    ds: &Dataset,
    cfg: &TrainConfig,
    kernel: Option<&KernelOptions>,
    opts: &CvOptions,
) -> Result<Vec<FoldResult>> {
    if opts.with_sisl && !ds.has_true_labels() {
        return Err(MimlError::InvalidData(
            "the supervised reference needs instance labels".into(),
        ));
    }
    let folds = kfold_split(ds.bags.len(), opts.folds, opts.seed)?;
    let mut out = Vec::with_capacity(folds.len());
    for (i, f) in folds.iter().enumerate() {
        let train = ds.subset(&f.train);
        let test = ds.subset(&f.test);
        let (model, _) = fit(&train, cfg, kernel)?;
        let evaluation = evaluate_model(&model, &test, opts.coverage)?;
        let sisl_accuracy = if opts.with_sisl {
            let m = fit_sisl(&train, cfg, kernel)?;
            let preds = predict_dataset(&m, &test, PredictMode::Inductive)?;
            let labels: Vec<Vec<usize>> = preds.into_iter().map(|p| p.instance_labels).collect();
            instance_accuracy(&labels, &test)
        } else {
            None
        };
        out.push(FoldResult {
            fold: i,
            train_bags: train.bags.len(),
            test_bags: test.bags.len(),
            evaluation,
            sisl_accuracy,
        });
    }
    Ok(out)
}

/// Flattened metric columns of a fold, in a fixed order.
pub fn fold_columns(r: &FoldResult) -> Vec<(String, f64)> {
    let mut cols: Vec<(String, f64)> = r.evaluation.model.to_map("").into_iter().collect();
    if let Some(t) = r.evaluation.transductive_accuracy {
        cols.push(("transductive_accuracy".into(), t));
    }
    if let Some(d) = &r.evaluation.dummy {
        cols.extend(d.to_map("dummy."));
    }
    if let Some(s) = r.sisl_accuracy {
        cols.push(("sisl_accuracy".into(), s));
    }
    cols
}

/// Per-column mean and sample standard deviation over folds.
pub fn summarize(folds: &[FoldResult]) -> Vec<(String, f64, f64)> {
    let Some(first) = folds.first() else {
        return Vec::new();
    };
    let names: Vec<String> = fold_columns(first).into_iter().map(|(k, _)| k).collect();
    let table: Vec<Vec<(String, f64)>> = folds.iter().map(fold_columns).collect();
    names
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = table
                .iter()
                .filter_map(|row| row.iter().find(|(k, _)| *k == name).map(|(_, v)| *v))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (name, mean, var.sqrt())
        })
        .collect()
}
