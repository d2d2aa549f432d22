//! Instance- and bag-level evaluation, dummy baselines and fold splitting.
//!
//! Ranks are 1-based by descending score; equal scores rank the smaller class
//! index first.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::predict::{BagPrediction, BagScores, PredictMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    /// `(max relevant rank - 1) / C`.
    #[default]
    Normalized,
    /// `max relevant rank - 1`.
    Raw,
}

/// Class indices ordered from highest to lowest score.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1-based rank of every class.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut r = vec![0; scores.len()];
    for (pos, c) in ranking(scores).into_iter().enumerate() {
        r[c] = pos + 1;
    }
    r
}

/// `|pred △ truth| / C`.
pub fn hamming(pred: LabelSet, truth: LabelSet, num_classes: usize) -> f64 {
    pred.symmetric_difference(truth).len() as f64 / num_classes as f64
}

/// Fraction of (relevant, irrelevant) pairs with `f(relevant) <= f(irrelevant)`.
/// `None` when either side is empty.
pub fn ranking_loss(scores: &[f64], truth: LabelSet) -> Option<f64> {
    let c = scores.len();
    let pos: Vec<usize> = truth.iter().filter(|&k| k < c).collect();
    let neg: Vec<usize> = (0..c).filter(|&k| !truth.contains(k)).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let bad = pos
        .iter()
        .map(|&p| neg.iter().filter(|&&n| scores[p] <= scores[n]).count())
        .sum::<usize>();
    Some(bad as f64 / (pos.len() * neg.len()) as f64)
}

/// 1 if the top-ranked class is not relevant.
pub fn one_error(scores: &[f64], truth: LabelSet) -> f64 {
    if truth.contains(ranking(scores)[0]) {
        0.0
    } else {
        1.0
    }
}

/// Depth in the ranking needed to cover every relevant class, minus one.
pub fn coverage(scores: &[f64], truth: LabelSet, mode: CoverageMode) -> f64 {
    let r = ranks(scores);
    let depth = truth.iter().map(|k| r[k]).max().unwrap_or(1) - 1;
    match mode {
        CoverageMode::Raw => depth as f64,
        CoverageMode::Normalized => depth as f64 / scores.len() as f64,
    }
}

pub fn average_precision(scores: &[f64], truth: LabelSet) -> f64 {
    let r = ranks(scores);
    let rel: Vec<usize> = truth.iter().map(|k| r[k]).collect();
    let total: f64 = rel
        .iter()
        .map(|&rk| rel.iter().filter(|&&o| o <= rk).count() as f64 / rk as f64)
        .sum();
    total / rel.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when no instance labels were available.
    pub instance_accuracy: Option<f64>,
    pub hamming_loss: f64,
    pub ranking_loss: f64,
    pub average_precision: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub bags: usize,
    pub instances: usize,
    /// Bags left out of ranking loss because their label set is empty or full.
    pub ranking_loss_skipped: usize,
}

impl MetricReport {
    /// Flat `prefix.name -> value` entries.
    pub fn to_map(&self, prefix: &str) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(format!("{prefix}{k}"), v);
        };
        if let Some(a) = self.instance_accuracy {
            put("instance_accuracy", a);
        }
        put("hamming_loss", self.hamming_loss);
        put("ranking_loss", self.ranking_loss);
        put("average_precision", self.average_precision);
        put("one_error", self.one_error);
        put("coverage", self.coverage);
        put("bags", self.bags as f64);
        put("instances", self.instances as f64);
        put("ranking_loss_skipped", self.ranking_loss_skipped as f64);
        m
    }
}

/// Ground truth for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct BagTruth {
    pub label: LabelSet,
    pub instance_labels: Option<Vec<usize>>,
}

impl BagTruth {
    pub fn from_dataset(ds: &Dataset) -> Vec<BagTruth> {
        ds.bags
            .iter()
            .map(|b| BagTruth {
                label: b.label,
                instance_labels: b.true_labels.clone(),
            })
            .collect()
    }
}

/// Aggregates the metric suite over aligned predictions and truths.
pub fn evaluate(
    preds: &[BagPrediction],
    truth: &[BagTruth],
    num_classes: usize,
    mode: CoverageMode,
) -> Result<MetricReport> {
    if preds.len() != truth.len() {
        return Err(MimlError::DimensionMismatch {
            expected: truth.len(),
            got: preds.len(),
            context: "predictions vs bags",
        });
    }
    if preds.is_empty() {
        return Err(MimlError::InvalidData("nothing to evaluate".into()));
    }
    let mut correct = 0usize;
    let mut labeled = 0usize;
    let mut instances = 0usize;
    let mut ham = 0.0;
    let (mut rl, mut rl_n, mut rl_skip) = (0.0, 0usize, 0usize);
    let (mut oe, mut cov, mut ap, mut ranked) = (0.0, 0.0, 0.0, 0usize);

    for (p, t) in preds.iter().zip(truth) {
        if p.scores.scores.len() != num_classes {
            return Err(MimlError::DimensionMismatch {
                expected: num_classes,
                got: p.scores.scores.len(),
                context: "bag scores",
            });
        }
        instances += p.instance_labels.len();
        if let Some(tl) = &t.instance_labels {
            if tl.len() != p.instance_labels.len() {
                return Err(MimlError::DimensionMismatch {
                    expected: tl.len(),
                    got: p.instance_labels.len(),
                    context: "instance predictions",
                });
            }
            labeled += tl.len();
            correct += tl
                .iter()
                .zip(&p.instance_labels)
                .filter(|(a, b)| a == b)
                .count();
        }
        ham += hamming(p.bag_label, t.label, num_classes);
        let s = &p.scores.scores;
        match ranking_loss(s, t.label) {
            Some(v) => {
                rl += v;
                rl_n += 1;
            }
            None => rl_skip += 1,
        }
        if !t.label.is_empty() {
            oe += one_error(s, t.label);
            cov += coverage(s, t.label, mode);
            ap += average_precision(s, t.label);
            ranked += 1;
        }
    }
    let nb = preds.len() as f64;
    let mean = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
    Ok(MetricReport {
        instance_accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        hamming_loss: ham / nb,
        ranking_loss: mean(rl, rl_n),
        average_precision: mean(ap, ranked),
        one_error: mean(oe, ranked),
        coverage: mean(cov, ranked),
        bags: preds.len(),
        instances,
        ranking_loss_skipped: rl_skip,
    })
}

/// Instance accuracy of per-bag predictions against a dataset's true labels.
pub fn instance_accuracy(preds: &[Vec<usize>], ds: &Dataset) -> Option<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, b) in preds.iter().zip(&ds.bags) {
        let t = b.true_labels.as_ref()?;
        total += t.len();
        correct += t.iter().zip(p).filter(|(a, b)| a == b).count();
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Feature-blind predictors fit on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyBaseline {
    /// Predicted for every instance.
    pub instance_class: usize,
    /// Fraction of training bags containing each class; the score of every test bag.
    pub bag_scores: Vec<f64>,
    /// Classes present in more than half of the training bags.
    pub bag_label: LabelSet,
}

impl DummyBaseline {
    /// With instance labels the modal instance class is used; otherwise the
    /// class found in the most bags. Ties go to the smaller index.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let c = train.num_classes;
        if train.bags.is_empty() || c == 0 {
            return Err(MimlError::InvalidData(
                "cannot fit a baseline on an empty dataset".into(),
            ));
        }
        let mut in_bags = vec![0usize; c];
        for b in &train.bags {
            for k in b.label.iter().filter(|&k| k < c) {
                in_bags[k] += 1;
            }
        }
        let instance_counts = train.has_true_labels().then(|| {
            let mut counts = vec![0usize; c];
            for b in &train.bags {
                for &y in b.true_labels.iter().flatten().filter(|&&y| y < c) {
                    counts[y] += 1;
                }
            }
            counts
        });
        let counts = instance_counts.as_ref().unwrap_or(&in_bags);
        let instance_class =
            (0..c).fold(0, |best, k| if counts[k] > counts[best] { k } else { best });
        let nb = train.bags.len() as f64;
        let bag_scores: Vec<f64> = in_bags.iter().map(|&n| n as f64 / nb).collect();
        let bag_label = (0..c).filter(|&k| bag_scores[k] > 0.5).collect();
        Ok(Self {
            instance_class,
            bag_scores,
            bag_label,
        })
    }

    pub fn predict(&self, ds: &Dataset) -> Vec<BagPrediction> {
        ds.bags
            .iter()
            .map(|b| BagPrediction {
                bag_id: b.id.clone(),
                mode: PredictMode::Inductive,
                instance_labels: vec![self.instance_class; b.len()],
                bag_label: self.bag_label,
                scores: BagScores {
                    scores: self.bag_scores.clone(),
                },
            })
            .collect()
    }
}

/// `dummy_baselines(train, test)`: instance predictions and bag scores of the
/// feature-blind baseline.
pub fn dummy_baselines(
    train: &Dataset,
    test: &Dataset,
) -> Result<(Vec<Vec<usize>>, Vec<BagScores>)> {
    let d = DummyBaseline::fit(train)?;
    let preds = d.predict(test);
    Ok((
        preds.iter().map(|p| p.instance_labels.clone()).collect(),
        preds.into_iter().map(|p| p.scores).collect(),
    ))
}

/// One cross-validation partition of bag indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..num_bags` cut into `k` contiguous folds whose sizes
/// differ by at most one. Index lists within a fold are ascending.
pub fn kfold_split(num_bags: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(MimlError::InvalidConfig(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if num_bags < k {
        return Err(MimlError::InvalidData(format!(
            "{num_bags} bags cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..num_bags).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = num_bags / k;
    let extra = num_bags % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test = order[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}
