//! ORed logistic regression for instance annotation in multi-instance
//! multi-label data.
//!
//! Each instance carries a hidden class drawn from a multinomial logistic
//! model; a bag's observed label set is the union of its instances' classes.
//! Training is EM with exact instance posteriors computed by dynamic
//! programming over the subsets of the bag label.

pub mod bench;
pub mod data;
pub mod error;
pub mod fit;
pub mod io;
pub mod kernel;
pub mod label;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod predict;
pub mod synth;
pub mod train;

pub use data::{
    validate_dataset, Bag, Dataset, Finding, FindingKind, Instance, Severity, ValidationReport,
};
pub use error::{MimlError, Result};
pub use fit::{
    cross_validate, evaluate_model, fit, fit_sisl, CvOptions, Evaluation, FitReport, FoldResult,
    KernelOptions,
};
pub use kernel::{build_dictionary, kernelize, rbf, select_delta, KernelDictionary};
pub use label::{LabelSet, MAX_BAG_LABELS, MAX_CLASSES};
pub use metrics::{
    dummy_baselines, evaluate, kfold_split, BagTruth, CoverageMode, DummyBaseline, MetricReport,
};
pub use model::{bag_prior, instance_prior, FeatureMap, Model, PriorMatrix, WeightMatrix};
pub use posterior::{
    bag_conditional_likelihood, canonical_subset_order, forward_pass, joint_last,
    leave_one_out_solve, posteriors_bruteforce, posteriors_fast, posteriors_forward,
    substitution_matrix, Engine, JointMatrix, PosteriorMatrix, PosteriorResult, SubsetLattice,
    SubsetTable, SubstitutionMatrix,
};
pub use predict::{
    bag_confidence, predict_bag, predict_dataset, predict_inductive, predict_transductive,
    BagPrediction, BagScores, PredictMode,
};
pub use synth::{generate_synthetic, Geometry, SynthSpec};
pub use train::{
    em_train, em_train_stochastic, gem_step, miml_log_likelihood, prune_bags, surrogate,
    surrogate_gradient, train_sisl, TrainConfig, TrainTrace,
};
