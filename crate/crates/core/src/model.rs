//! The instance-level multinomial logistic model and the trained [`Model`].

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Instance};
use crate::error::{MimlError, Result};
use crate::kernel::KernelDictionary;
use crate::metrics::DummyBaseline;
use crate::train::TrainConfig;

/// Affine weights, `(d + 1) x C`, row-major. The last row holds the per-class bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    /// Zero weights for `feature_dim` unaugmented features and `num_classes` classes.
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            rows: feature_dim + 1,
            cols: num_classes,
            data: vec![0.0; (feature_dim + 1) * num_classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        if r < 1 {
            return Err(MimlError::InvalidData(
                "weight matrix needs at least the bias row".into(),
            ));
        }
        let c = rows[0].len();
        if c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(MimlError::InvalidData("ragged or empty weight rows".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MimlError::InvalidData("non-finite weight".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Number of rows, `d + 1`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_classes(&self) -> usize {
        self.cols
    }

    pub fn feature_dim(&self) -> usize {
        self.rows - 1
    }

    pub fn get(&self, row: usize, class: usize) -> f64 {
        self.data[row * self.cols + class]
    }

    pub fn set(&mut self, row: usize, class: usize, v: f64) {
        self.data[row * self.cols + class] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `self + step * dir`, elementwise.
    pub fn offset(&self, dir: &WeightMatrix, step: f64) -> WeightMatrix {
        debug_assert_eq!(self.data.len(), dir.data.len());
        WeightMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&dir.data)
                .map(|(w, d)| w + step * d)
                .collect(),
        }
    }

    /// Augmented class scores `w_c^T [x; 1]`, written into `out`.
    pub fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len() + 1, self.rows);
        let c = self.cols;
        out.copy_from_slice(&self.data[(self.rows - 1) * c..]);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &self.data[j * c..(j + 1) * c];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xj;
            }
        }
    }

    pub fn scores(&self, x: &Instance) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.cols];
        self.scores_into(&x.features, &mut out);
        Ok(out)
    }

    fn check_dim(&self, x: &Instance) -> Result<()> {
        if x.dim() + 1 != self.rows {
            return Err(MimlError::DimensionMismatch {
                expected: self.rows - 1,
                got: x.dim(),
                context: "instance features vs weight rows",
            });
        }
        Ok(())
    }
}

/// Numerically stable softmax, in place. Returns `log sum exp` of the input.
///
/// Entries are floored at the smallest positive normal so every probability stays
/// strictly positive; the floor is far below the row-sum tolerance.
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x = (*x / sum).max(f64::MIN_POSITIVE);
    }
    m + sum.ln()
}

/// `p(y = c | x, w)` for every class.
pub fn instance_prior(w: &WeightMatrix, x: &Instance) -> Result<Vec<f64>> {
    let mut s = w.scores(x)?;
    softmax_in_place(&mut s);
    Ok(s)
}

/// Row-stochastic `n_b x C` matrix of instance class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrix {
    n: usize,
    c: usize,
    probs: Vec<f64>,
}

impl PriorMatrix {
    /// Wraps rows of probabilities. Rows must be finite, positive and sum to 1
    /// within `1e-9`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(MimlError::InvalidData(
                "prior matrix needs at least one row".into(),
            ));
        }
        let c = rows[0].len();
        let mut probs = Vec::with_capacity(n * c);
        for row in rows {
            if row.len() != c {
                return Err(MimlError::DimensionMismatch {
                    expected: c,
                    got: row.len(),
                    context: "prior row length",
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p <= 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(MimlError::InvalidData(format!(
                    "prior rows must be positive and sum to 1 (got sum {sum})"
                )));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self { n, c, probs })
    }

    pub(crate) fn from_raw(n: usize, c: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n * c);
        Self { n, c, probs }
    }

    pub fn num_instances(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.c)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Same rows in a new order: row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> PriorMatrix {
        let mut probs = Vec::with_capacity(self.probs.len());
        for &i in order {
            probs.extend_from_slice(self.row(i));
        }
        PriorMatrix::from_raw(order.len(), self.c, probs)
    }
}

/// Applies [`instance_prior`] to every instance in the bag.
pub fn bag_prior(w: &WeightMatrix, bag: &Bag) -> Result<PriorMatrix> {
    let c = w.num_classes();
    let mut probs = vec![0.0; bag.len() * c];
    for (x, out) in bag.instances.iter().zip(probs.chunks_mut(c)) {
        w.check_dim(x)?;
        w.scores_into(&x.features, out);
        softmax_in_place(out);
    }
    Ok(PriorMatrix::from_raw(bag.len(), c, probs))
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Feature mode of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Linear,
    Kernel(KernelDictionary),
}

/// Trained weights plus everything needed to predict on raw instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub num_classes: usize,
    /// Dimension of raw input instances.
    pub input_dim: usize,
    pub weights: WeightMatrix,
    pub features: FeatureMap,
    pub config: TrainConfig,
    /// Feature-blind baseline fit on the same training bags.
    pub baseline: Option<DummyBaseline>,
}

impl Model {
    pub fn linear(weights: WeightMatrix, config: TrainConfig) -> Self {
        Self {
            num_classes: weights.num_classes(),
            input_dim: weights.feature_dim(),
            weights,
            features: FeatureMap::Linear,
            config,
            baseline: None,
        }
    }

    pub fn kernel(weights: WeightMatrix, dict: KernelDictionary, config: TrainConfig) -> Self {
        Self {
            num_classes: weights.num_classes(),
            input_dim: dict.input_dim(),
            weights,
            features: FeatureMap::Kernel(dict),
            config,
            baseline: None,
        }
    }

    /// Maps raw instances into the space the weights live in.
    pub fn transform_bag(&self, bag: &Bag) -> Result<Bag> {
        match &self.features {
            FeatureMap::Linear => Ok(bag.clone()),
            FeatureMap::Kernel(dict) => dict.transform_bag(bag),
        }
    }

    pub fn bag_prior(&self, bag: &Bag) -> Result<PriorMatrix> {
        match &self.features {
            FeatureMap::Linear => bag_prior(&self.weights, bag),
            FeatureMap::Kernel(dict) => bag_prior(&self.weights, &dict.transform_bag(bag)?),
        }
    }

    pub fn instance_prior(&self, x: &Instance) -> Result<Vec<f64>> {
        match &self.features {
            FeatureMap::Linear => instance_prior(&self.weights, x),
            FeatureMap::Kernel(dict) => instance_prior(&self.weights, &dict.transform(x)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::LabelSet;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_uniform_prior() {
        let w = WeightMatrix::zeros(3, 4);
        let p = instance_prior(&w, &Instance::new(vec![1.0, -2.0, 5.0])).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_scores_give_half() {
        // bias only: scores (s, s)
        let w = WeightMatrix::from_rows(vec![vec![0.0, 0.0], vec![7.5, 7.5]]).unwrap();
        let p = instance_prior(&w, &Instance::new(vec![3.0])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ln3_scores() {
        // augmented scores (ln 3, 0): e^{ln3} / (e^{ln3} + 1) = 3/4
        let w = WeightMatrix::from_rows(vec![vec![3f64.ln(), 0.0], vec![0.0, 0.0]]).unwrap();
        let p = instance_prior(&w, &Instance::new(vec![1.0])).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = WeightMatrix::zeros(3, 2);
        let err = instance_prior(&w, &Instance::new(vec![1.0])).unwrap_err();
        assert!(matches!(
            err,
            MimlError::DimensionMismatch {
                expected: 3,
                got: 1,
                ..
            }
        ));
    }

    #[test]
    fn bag_prior_shapes() {
        let w = WeightMatrix::zeros(2, 2);
        let bag = Bag::new(
            "b",
            vec![Instance::new(vec![1.0, 2.0]); 3],
            LabelSet::from_classes([0, 1]).unwrap(),
        );
        let p = bag_prior(&w, &bag).unwrap();
        assert_eq!(p.num_instances(), 3);
        assert!(p.rows().all(|r| r == [0.5, 0.5]));

        let w =
            WeightMatrix::from_rows(vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![0.0, 0.1]]).unwrap();
        let single = Bag::new(
            "s",
            vec![Instance::new(vec![0.3, -0.7])],
            LabelSet::singleton(0),
        );
        let p = bag_prior(&w, &single).unwrap();
        assert_eq!(
            p.row(0),
            instance_prior(&w, &single.instances[0]).unwrap().as_slice()
        );
    }

    #[test]
    fn extreme_scores_stay_positive() {
        let w = WeightMatrix::from_rows(vec![vec![1e4, -1e4], vec![0.0, 0.0]]).unwrap();
        let p = instance_prior(&w, &Instance::new(vec![1.0])).unwrap();
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn weights_and_x() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..5, 2usize..6).prop_flat_map(|(d, c)| {
            (
                prop::collection::vec(prop::collection::vec(-5.0..5.0f64, c), d + 1),
                prop::collection::vec(-3.0..3.0f64, d),
            )
        })
    }

    proptest! {
        #[test]
        fn shift_invariance_and_row_sum((rows, x) in weights_and_x(), shift in -50.0..50.0f64) {
            let w = WeightMatrix::from_rows(rows.clone()).unwrap();
            let mut shifted_rows = rows;
            // adding the same constant to every class score = shifting every bias
            for v in shifted_rows.last_mut().unwrap() { *v += shift; }
            let ws = WeightMatrix::from_rows(shifted_rows).unwrap();
            let x = Instance::new(x);
            let p = instance_prior(&w, &x).unwrap();
            let q = instance_prior(&ws, &x).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let s = w.scores(&x).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&s));
        }
    }
}
