//! Seeded synthetic MIML data with known instance labels.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Instance};
use crate::error::{MimlError, Result};
use crate::label::{LabelSet, MAX_BAG_LABELS, MAX_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// One Gaussian blob per class, means on a sphere of radius `separation`.
    GaussianClusters,
    /// Class 0 is a disc at the origin; class `c` is an annulus of radius
    /// `c * separation` in the first two coordinates.
    Ring,
}

/// How many classes a bag gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CardinalityDist {
    Uniform,
    /// `P(k) ∝ ratio^(k - min)`: mostly small label sets with a long tail.
    Geometric {
        ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_bags: usize,
    pub instances_per_bag: (usize, usize),
    pub classes_per_bag: (usize, usize),
    pub separation: f64,
    pub noise: f64,
    pub geometry: Geometry,
    pub cardinality: CardinalityDist,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            feature_dim: 5,
            num_bags: 50,
            instances_per_bag: (3, 8),
            classes_per_bag: (1, 3),
            separation: 4.0,
            noise: 1.0,
            geometry: Geometry::GaussianClusters,
            cardinality: CardinalityDist::Uniform,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MimlError::InvalidConfig(m));
        let (nmin, nmax) = self.instances_per_bag;
        let (kmin, kmax) = self.classes_per_bag;
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return bad(format!("num_classes must be in 1..={MAX_CLASSES}"));
        }
        if self.feature_dim == 0 || self.num_bags == 0 {
            return bad("feature_dim and num_bags must be positive".into());
        }
        if nmin == 0 || nmin > nmax {
            return bad(format!("instances per bag range {nmin}..={nmax} is empty"));
        }
        if kmin == 0 || kmin > kmax {
            return bad(format!("classes per bag range {kmin}..={kmax} is empty"));
        }
        if kmax > nmin {
            return bad(format!(
                "classes per bag (max {kmax}) exceeds the minimum bag size {nmin}"
            ));
        }
        if kmax > self.num_classes || kmax > MAX_BAG_LABELS {
            return bad(format!(
                "classes per bag (max {kmax}) exceeds the number of classes or the label cap"
            ));
        }
        if !(self.separation >= 0.0
            && self.separation.is_finite()
            && self.noise >= 0.0
            && self.noise.is_finite())
        {
            return bad("separation and noise must be finite and nonnegative".into());
        }
        if self.geometry == Geometry::Ring && self.feature_dim < 2 {
            return bad("ring geometry needs at least two features".into());
        }
        if let CardinalityDist::Geometric { ratio } = self.cardinality {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return bad("geometric ratio must be positive".into());
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn class_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.num_classes)
        .map(|_| {
            let v = gaussian_vec(rng, spec.feature_dim, 1.0);
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * spec.separation / norm).collect()
        })
        .collect()
}

fn draw_instance(
    spec: &SynthSpec,
    means: &[Vec<f64>],
    class: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match spec.geometry {
        Geometry::GaussianClusters => means[class]
            .iter()
            .map(|m| {
                m + spec.noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
            .collect::<Vec<f64>>(),
        Geometry::Ring => {
            let mut x = gaussian_vec(rng, spec.feature_dim, spec.noise);
            if class > 0 {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let r = class as f64 * spec.separation;
                x[0] += r * theta.cos();
                x[1] += r * theta.sin();
            }
            x
        }
    }
}

fn draw_cardinality(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> usize {
    let (kmin, kmax) = spec.classes_per_bag;
    match spec.cardinality {
        CardinalityDist::Uniform => rng.random_range(kmin..=kmax),
        CardinalityDist::Geometric { ratio } => {
            let weights: Vec<f64> = (kmin..=kmax)
                .map(|k| ratio.powi((k - kmin) as i32))
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (k, w) in (kmin..=kmax).zip(&weights) {
                if u < *w {
                    return k;
                }
                u -= w;
            }
            kmax
        }
    }
}

/// Bags pick a class set, place one instance of each chosen class, fill the
/// rest uniformly from the set and shuffle. The bag label is exactly the union
/// of the instance labels.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let classes: Vec<usize> = (0..spec.num_classes).collect();
    let (nmin, nmax) = spec.instances_per_bag;
    let mut bags = Vec::with_capacity(spec.num_bags);
    for b in 0..spec.num_bags {
        let k = draw_cardinality(spec, &mut rng);
        let mut chosen: Vec<usize> = classes.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
        let n = rng.random_range(nmin..=nmax);
        let mut labels = chosen.clone();
        while labels.len() < n {
            labels.push(*chosen.choose(&mut rng).expect("k >= 1"));
        }
        labels.shuffle(&mut rng);
        let instances = labels
            .iter()
            .map(|&c| Instance::new(draw_instance(spec, &means, c, &mut rng)))
            .collect();
        let label = LabelSet::from_classes(chosen)?;
        bags.push(Bag::new(format!("bag{b:05}"), instances, label).with_true_labels(labels));
    }
    let name = match spec.geometry {
        Geometry::GaussianClusters => "gaussian-clusters",
        Geometry::Ring => "ring",
    };
    Ok(Dataset::new(name, spec.num_classes, spec.feature_dim, bags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_unions_and_seeded() {
        for geometry in [Geometry::GaussianClusters, Geometry::Ring] {
            let spec = SynthSpec {
                geometry,
                num_classes: 3,
                num_bags: 40,
                ..SynthSpec::default()
            };
            let ds = generate_synthetic(&spec).unwrap();
            assert!(ds.validate().is_clean());
            for b in &ds.bags {
                let t = b.true_labels.as_ref().unwrap();
                assert_eq!(t.iter().copied().collect::<LabelSet>(), b.label);
                assert!((3..=8).contains(&b.len()));
                assert!((1..=3).contains(&b.label.len()));
            }
            assert_eq!(ds, generate_synthetic(&spec).unwrap());
            assert_ne!(
                ds,
                generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap()
            );
        }
    }

    #[test]
    fn means_sit_on_the_sphere() {
        let spec = SynthSpec {
            noise: 0.0,
            separation: 3.0,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for x in ds.instances() {
            let r = x.features.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_cardinality_is_skewed() {
        let spec = SynthSpec {
            num_classes: 8,
            num_bags: 2000,
            instances_per_bag: (6, 10),
            classes_per_bag: (1, 6),
            cardinality: CardinalityDist::Geometric { ratio: 0.5 },
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut hist = [0usize; 7];
        for b in &ds.bags {
            hist[b.label.len()] += 1;
        }
        assert!(hist[1] > hist[2] && hist[2] > hist[3] && hist[6] > 0);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let bad = [
            SynthSpec {
                classes_per_bag: (1, 4),
                instances_per_bag: (3, 8),
                ..SynthSpec::default()
            },
            SynthSpec {
                classes_per_bag: (3, 2),
                ..SynthSpec::default()
            },
            SynthSpec {
                num_classes: 2,
                classes_per_bag: (1, 3),
                ..SynthSpec::default()
            },
            SynthSpec {
                geometry: Geometry::Ring,
                feature_dim: 1,
                ..SynthSpec::default()
            },
            SynthSpec {
                noise: -1.0,
                ..SynthSpec::default()
            },
        ];
        for s in bad {
            assert!(generate_synthetic(&s).is_err(), "{s:?}");
        }
    }
}
