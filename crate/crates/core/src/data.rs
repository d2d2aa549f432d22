//! Bags, datasets and dataset validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{LabelSet, MAX_BAG_LABELS, MAX_CLASSES};

/// Feature vector of one instance (unaugmented, length `d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance {
    pub features: Vec<f64>,
}

impl Instance {
    pub fn new(features: Vec<f64>) -> Self {
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

impl From<Vec<f64>> for Instance {
    fn from(features: Vec<f64>) -> Self {
        Self { features }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Instance>,
    pub label: LabelSet,
    /// Per-instance ground truth, used for evaluation only.
    pub true_labels: Option<Vec<usize>>,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Instance>, label: LabelSet) -> Self {
        Self {
            id: id.into(),
            instances,
            label,
            true_labels: None,
        }
    }

    pub fn with_true_labels(mut self, labels: Vec<usize>) -> Self {
        self.true_labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// DP cost proxy `n_b * |Y_b| * 2^|Y_b|` used for pruning.
    pub fn dp_cost(&self) -> f64 {
        let k = self.label.len();
        self.len() as f64 * k as f64 * (k as f64).exp2()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        feature_dim: usize,
        bags: Vec<Bag>,
    ) -> Self {
        Self {
            name: name.into(),
            num_classes,
            feature_dim,
            bags,
        }
    }

    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.bags.iter().flat_map(|b| b.instances.iter())
    }

    pub fn has_true_labels(&self) -> bool {
        !self.bags.is_empty() && self.bags.iter().all(|b| b.true_labels.is_some())
    }

    /// A dataset holding the bags at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
        }
    }

    /// Each labeled instance becomes its own single-instance bag.
    pub fn to_singleton_bags(&self) -> Option<Dataset> {
        let mut bags = Vec::with_capacity(self.num_instances());
        for bag in &self.bags {
            let labels = bag.true_labels.as_ref()?;
            for (i, (x, &y)) in bag.instances.iter().zip(labels).enumerate() {
                bags.push(
                    Bag::new(
                        format!("{}#{i}", bag.id),
                        vec![x.clone()],
                        LabelSet::singleton(y),
                    )
                    .with_true_labels(vec![y]),
                );
            }
        }
        Some(Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            bags,
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_dataset(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FindingKind {
    /// Fewer instances than bag labels: the union constraint cannot hold.
    UnsatisfiableUnion {
        instances: usize,
        labels: usize,
    },
    /// The union of true instance labels differs from the bag label.
    UnionMismatch {
        truth: LabelSet,
        label: LabelSet,
    },
    ClassOutOfRange {
        class: usize,
    },
    LabelCapExceeded {
        labels: usize,
    },
    EmptyLabel,
    EmptyBag,
    FeatureDim {
        expected: usize,
        got: usize,
    },
    NonFiniteFeature,
    TrueLabelCount {
        instances: usize,
        labels: usize,
    },
    TooManyClasses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub bag_id: String,
    pub severity: Severity,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "fatal",
        };
        write!(f, "{sev}: bag {}: ", self.bag_id)?;
        match &self.kind {
            FindingKind::UnsatisfiableUnion { instances, labels } => write!(
                f,
                "unsatisfiable union ({instances} instance(s) for {labels} label(s))"
            ),
            FindingKind::UnionMismatch { truth, label } => {
                write!(
                    f,
                    "union of instance labels {truth:?} differs from bag label {label:?}"
                )
            }
            FindingKind::ClassOutOfRange { class } => write!(f, "class index {class} out of range"),
            FindingKind::LabelCapExceeded { labels } => {
                write!(f, "{labels} labels exceed the cap of {MAX_BAG_LABELS}")
            }
            FindingKind::EmptyLabel => write!(f, "empty bag label"),
            FindingKind::EmptyBag => write!(f, "bag has no instances"),
            FindingKind::FeatureDim { expected, got } => {
                write!(f, "feature dimension {got}, expected {expected}")
            }
            FindingKind::NonFiniteFeature => write!(f, "non-finite feature value"),
            FindingKind::TrueLabelCount { instances, labels } => {
                write!(f, "{labels} instance label(s) for {instances} instance(s)")
            }
            FindingKind::TooManyClasses => write!(f, "more than {MAX_CLASSES} classes"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_fatal(&self) -> bool {
        self.fatal().next().is_some()
    }

    pub fn fatal(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Fatal)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }
}

/// Report-only validation; callers decide what to do with the findings.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ds.num_classes > MAX_CLASSES {
        report.findings.push(Finding {
            bag_id: String::new(),
            severity: Severity::Fatal,
            kind: FindingKind::TooManyClasses,
        });
    }
    let mut push = |bag: &Bag, severity, kind| {
        report.findings.push(Finding {
            bag_id: bag.id.clone(),
            severity,
            kind,
        })
    };

    for bag in &ds.bags {
        let n = bag.len();
        let k = bag.label.len();
        if n == 0 {
            push(bag, Severity::Fatal, FindingKind::EmptyBag);
        }
        if k == 0 {
            push(bag, Severity::Fatal, FindingKind::EmptyLabel);
        }
        if bag.label.span() > ds.num_classes {
            push(
                bag,
                Severity::Fatal,
                FindingKind::ClassOutOfRange {
                    class: bag.label.span() - 1,
                },
            );
        }
        if k > MAX_BAG_LABELS {
            push(
                bag,
                Severity::Fatal,
                FindingKind::LabelCapExceeded { labels: k },
            );
        }
        if n > 0 && n < k {
            push(
                bag,
                Severity::Fatal,
                FindingKind::UnsatisfiableUnion {
                    instances: n,
                    labels: k,
                },
            );
        }
        for x in &bag.instances {
            if x.dim() != ds.feature_dim {
                push(
                    bag,
                    Severity::Fatal,
                    FindingKind::FeatureDim {
                        expected: ds.feature_dim,
                        got: x.dim(),
                    },
                );
                break;
            }
        }
        if bag
            .instances
            .iter()
            .any(|x| x.features.iter().any(|v| !v.is_finite()))
        {
            push(bag, Severity::Fatal, FindingKind::NonFiniteFeature);
        }
        if let Some(truth) = &bag.true_labels {
            if truth.len() != n {
                push(
                    bag,
                    Severity::Fatal,
                    FindingKind::TrueLabelCount {
                        instances: n,
                        labels: truth.len(),
                    },
                );
            }
            if let Some(&bad) = truth.iter().find(|&&c| c >= ds.num_classes) {
                push(
                    bag,
                    Severity::Fatal,
                    FindingKind::ClassOutOfRange { class: bad },
                );
            } else {
                let union: LabelSet = truth.iter().copied().collect();
                if union != bag.label {
                    push(
                        bag,
                        Severity::Warning,
                        FindingKind::UnionMismatch {
                            truth: union,
                            label: bag.label,
                        },
                    );
                }
            }
        }
    }
    report
}
