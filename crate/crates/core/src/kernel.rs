//! RBF kernel features.
//!
//! Kernelization is a dataset transform: each instance is replaced by its
//! vector of kernel values against a dictionary of anchor instances, after
//! which the linear trainer runs unchanged (the bias row still applies).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Instance};
use crate::error::{MimlError, Result};

/// `exp(-|x - x'|^2 / delta)`.
pub fn rbf(x: &[f64], y: &[f64], delta: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / delta).exp()
}

/// Mean of `|x_p - x_q|^2` over all unordered pairs `p < q`.
///
/// Uses `Σ_{p<q} |x_p - x_q|^2 = N Σ_p |x_p - x̄|^2`, which is linear in `N`.
pub fn mean_pairwise_sq_distance<'a, I>(instances: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let xs: Vec<&[f64]> = instances
        .into_iter()
        .map(|x| x.features.as_slice())
        .collect();
    let n = xs.len();
    if n < 2 {
        return Err(MimlError::InvalidData(format!(
            "need at least two instances, got {n}"
        )));
    }
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in &xs {
        for (m, v) in mean.iter_mut().zip(*x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let scatter: f64 = xs
        .iter()
        .map(|x| {
            x.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(n as f64 * scatter / pairs)
}

/// `delta = s * mean pairwise squared distance` over the dataset's instances.
// negated comparisons reject NaN along with nonpositive values
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn select_delta(ds: &Dataset, s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(MimlError::InvalidConfig(format!(
            "kernel scale s must be positive, got {s}"
        )));
    }
    let delta = s * mean_pairwise_sq_distance(ds.instances())?;
    if !(delta > 0.0) {
        return Err(MimlError::InvalidData(
            "all instances coincide; kernel width is zero".into(),
        ));
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDictionary {
    pub anchors: Vec<Instance>,
    /// Position of each anchor in the flattened training instances.
    pub anchor_indices: Vec<usize>,
    pub delta: f64,
    pub scale_s: f64,
}

impl KernelDictionary {
    pub fn new(
        anchors: Vec<Instance>,
        anchor_indices: Vec<usize>,
        delta: f64,
        scale_s: f64,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(MimlError::InvalidData(
                "kernel dictionary has no anchors".into(),
            ));
        }
        if anchor_indices.len() != anchors.len() {
            return Err(MimlError::DimensionMismatch {
                expected: anchors.len(),
                got: anchor_indices.len(),
                context: "anchor indices",
            });
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MimlError::InvalidConfig(format!(
                "kernel width must be positive, got {delta}"
            )));
        }
        let d = anchors[0].dim();
        for a in &anchors {
            if a.dim() != d {
                return Err(MimlError::DimensionMismatch {
                    expected: d,
                    got: a.dim(),
                    context: "anchor features",
                });
            }
            if a.features.iter().any(|v| !v.is_finite()) {
                return Err(MimlError::InvalidData("non-finite anchor feature".into()));
            }
        }
        Ok(Self {
            anchors,
            anchor_indices,
            delta,
            scale_s,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn transform(&self, x: &Instance) -> Result<Instance> {
        if x.dim() != self.input_dim() {
            return Err(MimlError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.dim(),
                context: "kernel input",
            });
        }
        Ok(Instance::new(
            self.anchors
                .iter()
                .map(|a| rbf(&x.features, &a.features, self.delta))
                .collect(),
        ))
    }

    pub fn transform_bag(&self, bag: &Bag) -> Result<Bag> {
        let instances = bag
            .instances
            .iter()
            .map(|x| self.transform(x))
            .collect::<Result<_>>()?;
        Ok(Bag {
            id: bag.id.clone(),
            instances,
            label: bag.label,
            true_labels: bag.true_labels.clone(),
        })
    }
}

/// Samples `ceil(fraction * N)` training instances without replacement as
/// anchors, kept in dataset order. `fraction = 1` takes every instance.
pub fn build_dictionary(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
    delta: f64,
    scale_s: f64,
) -> Result<KernelDictionary> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MimlError::InvalidConfig(format!(
            "dictionary fraction {fraction} not in (0, 1]"
        )));
    }
    let all: Vec<&Instance> = ds.instances().collect();
    let n = all.len();
    let take = ((fraction * n as f64).ceil() as usize).min(n);
    if take == 0 {
        return Err(MimlError::InvalidData(
            "no instances to build a dictionary from".into(),
        ));
    }
    let indices: Vec<usize> = if take == n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = rand::seq::index::sample(&mut rng, n, take).into_vec();
        s.sort_unstable();
        s
    };
    let anchors = indices.iter().map(|&i| all[i].clone()).collect();
    KernelDictionary::new(anchors, indices, delta, scale_s)
}

/// Replaces every instance by its kernel feature vector; labels and bag
/// structure are untouched.
pub fn kernelize(ds: &Dataset, dict: &KernelDictionary) -> Result<Dataset> {
    if ds.feature_dim != dict.input_dim() {
        return Err(MimlError::DimensionMismatch {
            expected: dict.input_dim(),
            got: ds.feature_dim,
            context: "dataset vs kernel dictionary",
        });
    }
    let bags = ds
        .bags
        .par_iter()
        .map(|b| dict.transform_bag(b))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(
        ds.name.clone(),
        ds.num_classes,
        dict.len(),
        bags,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::LabelSet;
    use proptest::prelude::*;

    fn pairwise_direct(xs: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for p in 0..xs.len() {
            for q in p + 1..xs.len() {
                total += xs[p]
                    .iter()
                    .zip(&xs[q])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                count += 1;
            }
        }
        total / count as f64
    }

    fn ds_of(points: &[Vec<f64>]) -> Dataset {
        let bags = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Bag::new(
                    format!("{i}"),
                    vec![Instance::new(p.clone())],
                    LabelSet::singleton(0),
                )
            })
            .collect();
        Dataset::new("k", 1, points[0].len(), bags)
    }

    #[test]
    fn rbf_values() {
        assert_eq!(rbf(&[1.0, 2.0], &[1.0, 2.0], 0.3), 1.0);
        let v = rbf(&[0.0, 0.0], &[1.0, 1.0], 2.0);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(
            rbf(&[0.3, -1.0], &[2.0, 0.5], 1.7),
            rbf(&[2.0, 0.5], &[0.3, -1.0], 1.7)
        );
    }

    #[test]
    fn delta_for_one_pair() {
        let ds = ds_of(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert!((select_delta(&ds, 0.5).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicates_lower_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![2.0, 2.0]];
        let mut dup = pts.clone();
        dup.extend(pts.iter().cloned());
        let a = select_delta(&ds_of(&pts), 1.0).unwrap();
        let b = select_delta(&ds_of(&dup), 1.0).unwrap();
        assert!((a - pairwise_direct(&pts)).abs() < 1e-12);
        assert!((b - pairwise_direct(&dup)).abs() < 1e-12);
        assert!(b < a);
    }

    #[test]
    fn delta_errors() {
        assert!(select_delta(&ds_of(&[vec![1.0]]), 1.0).is_err());
        assert!(select_delta(&ds_of(&[vec![1.0], vec![1.0]]), 1.0).is_err());
        assert!(select_delta(&ds_of(&[vec![1.0], vec![2.0]]), 0.0).is_err());
    }

    #[test]
    fn dictionary_sizes() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ds = ds_of(&pts);
        let full = build_dictionary(&ds, 1.0, 0, 1.0, 1.0).unwrap();
        assert_eq!(full.anchor_indices, (0..10).collect::<Vec<_>>());
        let half = build_dictionary(&ds, 0.5, 3, 1.0, 1.0).unwrap();
        assert_eq!(half.len(), 5);
        assert_eq!(half, build_dictionary(&ds, 0.5, 3, 1.0, 1.0).unwrap());
        assert!(half.anchor_indices.windows(2).all(|w| w[0] < w[1]));
        for (a, &i) in half.anchors.iter().zip(&half.anchor_indices) {
            assert_eq!(a.features, pts[i]);
        }
        assert_eq!(build_dictionary(&ds, 0.01, 0, 1.0, 1.0).unwrap().len(), 1);
        assert!(build_dictionary(&ds, 0.0, 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn self_anchor_gives_one() {
        let x = Instance::new(vec![0.4, -2.0]);
        let dict = KernelDictionary::new(vec![x.clone()], vec![0], 0.7, 1.0).unwrap();
        assert_eq!(dict.transform(&x).unwrap().features, vec![1.0]);
        assert!(dict.transform(&Instance::new(vec![1.0])).is_err());
    }

    #[test]
    fn kernelize_keeps_structure() {
        let pts = vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![2.0, 2.0]];
        let ds = ds_of(&pts);
        let dict = build_dictionary(&ds, 1.0, 0, select_delta(&ds, 1.0).unwrap(), 1.0).unwrap();
        let k = kernelize(&ds, &dict).unwrap();
        assert_eq!(k.feature_dim, 3);
        for (a, b) in k.bags.iter().zip(&ds.bags) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.len(), b.len());
        }
        for (i, bag) in k.bags.iter().enumerate() {
            assert_eq!(bag.instances[0].features[i], 1.0);
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_pairs(pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..20)) {
            let fast = mean_pairwise_sq_distance(ds_of(&pts).instances()).unwrap();
            let direct = pairwise_direct(&pts);
            prop_assert!((fast - direct).abs() <= 1e-9 * direct.max(1e-12));
        }

        #[test]
        fn delta_is_homogeneous(pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 2..10), t in 0.1..10.0f64) {
            let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v * t).collect()).collect();
            let a = mean_pairwise_sq_distance(ds_of(&pts).instances()).unwrap();
            let b = mean_pairwise_sq_distance(ds_of(&scaled).instances()).unwrap();
            prop_assert!((b - t * t * a).abs() <= 1e-9 * b.max(1e-12));
        }

        #[test]
        fn kernel_range(x in prop::collection::vec(-5.0..5.0f64, 3), y in prop::collection::vec(-5.0..5.0f64, 3), delta in 0.5..50.0f64) {
            let v = rbf(&x, &y, delta);
            prop_assert!(v > 0.0 && v <= 1.0);
            prop_assert_eq!(rbf(&x, &x, delta), 1.0);
            prop_assert_eq!(v, rbf(&y, &x, delta));
        }
    }
}
