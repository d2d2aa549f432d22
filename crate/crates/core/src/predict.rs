//! Instance and bag prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset};
use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::model::{argmax, Model};
use crate::posterior::{posteriors_fast_with, SubsetLattice};

/// Per-class bag confidence `f(X, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BagScores {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// From features alone.
    Inductive,
    /// Using the bag's label set as well.
    Transductive,
}

impl std::str::FromStr for PredictMode {
    type Err = MimlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(Self::Inductive),
            "transductive" => Ok(Self::Transductive),
            _ => Err(MimlError::InvalidConfig(format!(
                "unknown prediction mode '{s}'"
            ))),
        }
    }
}

/// Most probable class per instance; ties go to the smaller class index.
pub fn predict_inductive(model: &Model, bag: &Bag) -> Result<Vec<usize>> {
    let priors = model.bag_prior(bag)?;
    Ok(priors.rows().map(argmax).collect())
}

/// `argmax_c p(y_i = c, Y | X, w)` per instance. Predictions always lie in `label`.
pub fn predict_transductive(model: &Model, bag: &Bag, label: LabelSet) -> Result<Vec<usize>> {
    label.check_bag_label(model.num_classes)?;
    let lattice = SubsetLattice::new(label)?;
    let priors = model.bag_prior(bag)?;
    let r = posteriors_fast_with(&priors, &lattice)?;
    Ok((0..bag.len())
        .map(|i| {
            let row = r.joint.row(i);
            let mut best = lattice.classes()[0];
            for c in label.iter() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Union of the inductive instance predictions.
pub fn predict_bag(model: &Model, bag: &Bag) -> Result<LabelSet> {
    Ok(predict_inductive(model, bag)?.into_iter().collect())
}

/// `f(X, c) = max_i p(y_i = c | x_i, w)`.
pub fn bag_confidence(model: &Model, bag: &Bag) -> Result<BagScores> {
    let priors = model.bag_prior(bag)?;
    let mut scores = vec![0.0f64; model.num_classes];
    for row in priors.rows() {
        for (s, &p) in scores.iter_mut().zip(row) {
            *s = s.max(p);
        }
    }
    Ok(BagScores { scores })
}

/// Everything predicted for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag_id: String,
    pub mode: PredictMode,
    pub instance_labels: Vec<usize>,
    pub bag_label: LabelSet,
    pub scores: BagScores,
}

pub fn predict_one(model: &Model, bag: &Bag, mode: PredictMode) -> Result<BagPrediction> {
    let instance_labels = match mode {
        PredictMode::Inductive => predict_inductive(model, bag)?,
        PredictMode::Transductive => predict_transductive(model, bag, bag.label)?,
    };
    Ok(BagPrediction {
        bag_id: bag.id.clone(),
        mode,
        bag_label: predict_bag(model, bag)?,
        instance_labels,
        scores: bag_confidence(model, bag)?,
    })
}

/// Predictions for every bag, in dataset order.
pub fn predict_dataset(
    model: &Model,
    ds: &Dataset,
    mode: PredictMode,
) -> Result<Vec<BagPrediction>> {
    if ds.feature_dim != model.input_dim {
        return Err(MimlError::DimensionMismatch {
            expected: model.input_dim,
            got: ds.feature_dim,
            context: "dataset vs model input",
        });
    }
    ds.bags
        .par_iter()
        .map(|b| predict_one(model, b, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::model::WeightMatrix;
    use crate::train::TrainConfig;
    use proptest::prelude::*;

    fn model(rows: Vec<Vec<f64>>) -> Model {
        Model::linear(
            WeightMatrix::from_rows(rows).unwrap(),
            TrainConfig::default(),
        )
    }

    fn bag(xs: &[f64], label: &[usize]) -> Bag {
        Bag::new(
            "t",
            xs.iter().map(|&v| Instance::new(vec![v])).collect(),
            LabelSet::from_classes(label.iter().copied()).unwrap(),
        )
    }

    #[test]
    fn zero_weights_pick_class_zero() {
        let m = model(vec![vec![0.0; 3], vec![0.0; 3]]);
        assert_eq!(
            predict_inductive(&m, &bag(&[1.0, -4.0], &[1])).unwrap(),
            vec![0, 0]
        );
    }

    #[test]
    fn transductive_two_instance_bag() {
        // x = 0 leaves only the bias: priors (0.6, 0.4); x = 1 adds a shift to (0.3, 0.7)
        let b0 = (0.6f64 / 0.4).ln();
        let b1 = (0.3f64 / 0.7).ln();
        let m = model(vec![vec![b1 - b0, 0.0], vec![b0, 0.0]]);
        let p = m.bag_prior(&bag(&[0.0, 1.0], &[0, 1])).unwrap();
        assert!((p.row(0)[0] - 0.6).abs() < 1e-12 && (p.row(1)[0] - 0.3).abs() < 1e-12);
        let b = bag(&[0.0, 1.0], &[0, 1]);
        assert_eq!(predict_transductive(&m, &b, b.label).unwrap(), vec![0, 1]);
        assert_eq!(predict_inductive(&m, &b).unwrap(), vec![0, 1]);
    }

    #[test]
    fn singleton_label_forces_class() {
        let m = model(vec![vec![3.0, -1.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let b = bag(&[1.0, 2.0, -1.0], &[2]);
        assert_eq!(
            predict_transductive(&m, &b, b.label).unwrap(),
            vec![2, 2, 2]
        );
    }

    #[test]
    fn bag_union_and_confidence() {
        let m = model(vec![vec![1.0, -1.0], vec![0.0, 0.0]]);
        let b = bag(&[2.0, -2.0, 3.0], &[0, 1]);
        assert_eq!(
            predict_bag(&m, &b).unwrap(),
            LabelSet::from_classes([0, 1]).unwrap()
        );
        let single = bag(&[0.7], &[0]);
        let s = bag_confidence(&m, &single).unwrap();
        let p = m.instance_prior(&single.instances[0]).unwrap();
        assert_eq!(s.scores, p);
    }

    proptest! {
        #[test]
        fn transductive_stays_inside_label(
            w in prop::collection::vec(-3.0..3.0f64, 8),
            xs in prop::collection::vec(-2.0..2.0f64, 3..6),
            y in prop::sample::subsequence(vec![0usize, 1, 2, 3], 1..=3),
        ) {
            let m = model(vec![w[..4].to_vec(), w[4..].to_vec()]);
            let b = bag(&xs, &y);
            for c in predict_transductive(&m, &b, b.label).unwrap() {
                prop_assert!(b.label.contains(c));
            }
            let ind = predict_inductive(&m, &b).unwrap();
            let union: LabelSet = ind.iter().copied().collect();
            prop_assert_eq!(predict_bag(&m, &b).unwrap(), union);
            prop_assert!(union.len() <= b.len().min(4));
        }

        #[test]
        fn confidence_ignores_order_and_duplicates(
            w in prop::collection::vec(-3.0..3.0f64, 6),
            xs in prop::collection::vec(-2.0..2.0f64, 1..6),
        ) {
            let m = model(vec![w[..3].to_vec(), w[3..].to_vec()]);
            let a = bag_confidence(&m, &bag(&xs, &[0])).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            rev.push(xs[0]);
            let b = bag_confidence(&m, &bag(&rev, &[0])).unwrap();
            prop_assert_eq!(&a, &b);
            for s in &a.scores {
                prop_assert!(*s > 0.0 && *s < 1.0);
            }
        }
    }
}
