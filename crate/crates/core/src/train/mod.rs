//! Maximum-likelihood training by generalized EM.
//!
//! Every iteration computes exact instance posteriors for each bag (E-step) and
//! then takes one backtracked gradient-ascent step on the surrogate (M-step).
//! Because the step is only accepted when the surrogate does not decrease, the
//! MIML log-likelihood is non-decreasing across iterations.

mod linesearch;
mod objective;
mod prune;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use linesearch::{backtracking_ascent, Backtracking, StepOutcome};
pub use objective::{miml_log_likelihood, surrogate, surrogate_gradient};
pub use prune::{prune_bags, Pruned};

use crate::data::{Dataset, Instance};
use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::model::{bag_prior, instance_prior, Model, WeightMatrix};
use crate::posterior::{Engine, PosteriorMatrix, SubsetLattice};
use objective::{gradient_over, samples, surrogate_over, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub em_iterations: usize,
    pub line_search: Backtracking,
    pub l2_lambda: f64,
    /// Fraction of bags sampled per iteration by stochastic EM.
    pub sample_fraction: f64,
    /// Fraction of the costliest bags removed before training.
    pub prune_fraction: f64,
    pub rng_seed: u64,
    pub engine: Engine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            em_iterations: 50,
            line_search: Backtracking::default(),
            l2_lambda: 0.0,
            sample_fraction: 1.0,
            prune_fraction: 0.0,
            rng_seed: 0,
            engine: Engine::Fast,
        }
    }
}

impl TrainConfig {
    // negated comparisons reject NaN along with out-of-range values
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bt = &self.line_search;
        let bad = |m: &str| Err(MimlError::InvalidConfig(m.to_string()));
        if !(bt.init_step > 0.0) {
            return bad("line-search initial step must be positive");
        }
        if !(bt.shrink > 0.0 && bt.shrink < 1.0) {
            return bad("line-search shrink factor must lie in (0, 1)");
        }
        if !(bt.armijo > 0.0 && bt.armijo < 1.0) {
            return bad("Armijo constant must lie in (0, 1)");
        }
        if bt.max_steps == 0 {
            return bad("line search needs at least one step");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2 lambda must be a nonnegative number");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample fraction must lie in (0, 1]");
        }
        if !(self.prune_fraction >= 0.0 && self.prune_fraction < 1.0) {
            return bad("prune fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Surrogate after the M-step, `g(w^{k+1}, w^k)`, over the bags used this iteration.
    pub surrogate: f64,
    /// Surrogate before the M-step, `g(w^k, w^k)`.
    pub surrogate_start: f64,
    /// Full-data MIML log-likelihood at `w^k` (regularized when λ > 0).
    /// Stochastic runs only record it every 10 iterations.
    pub log_likelihood: Option<f64>,
    pub backtracking_steps: usize,
    pub step_size: f64,
    pub fallbacks: usize,
    pub estep_seconds: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iterations: Vec<IterationRecord>,
    /// Log-likelihood at the returned weights.
    pub final_log_likelihood: f64,
}

impl TrainTrace {
    /// Recorded log-likelihood values, followed by the final one.
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter_map(|r| r.log_likelihood)
            .chain(std::iter::once(self.final_log_likelihood))
            .collect()
    }

    pub fn mean_backtracking_steps(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations
            .iter()
            .map(|r| r.backtracking_steps as f64)
            .sum::<f64>()
            / self.iterations.len() as f64
    }

    pub fn mean_estep_seconds(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().map(|r| r.estep_seconds).sum::<f64>() / self.iterations.len() as f64
    }
}

/// One GEM M-step: a backtracked gradient-ascent step on the surrogate. Returns
/// the new weights and the number of candidate steps evaluated; the weights are
/// unchanged when no candidate satisfies the Armijo condition.
pub fn gem_step(
    w: &WeightMatrix,
    ds: &Dataset,
    posteriors: &[PosteriorMatrix],
    cfg: &TrainConfig,
) -> Result<(WeightMatrix, usize)> {
    let all: Vec<usize> = (0..ds.bags.len()).collect();
    // validates alignment
    surrogate(w, posteriors, ds, cfg.l2_lambda)?;
    let data = samples(ds, &all, posteriors);
    let (w2, out) = step_on(w, &data, cfg);
    Ok((w2, out.trials))
}

fn step_on(
    w: &WeightMatrix,
    data: &[Sample<'_>],
    cfg: &TrainConfig,
) -> (WeightMatrix, StepOutcome) {
    let l2 = cfg.l2_lambda;
    let f0 = surrogate_over(w, data, l2);
    let g = gradient_over(w, data, l2);
    let mut probe = w.clone();
    let out = backtracking_ascent(
        w.as_slice(),
        f0,
        g.as_slice(),
        |x| {
            probe.as_mut_slice().copy_from_slice(x);
            surrogate_over(&probe, data, l2)
        },
        &cfg.line_search,
    );
    let mut next = w.clone();
    next.as_mut_slice().copy_from_slice(&out.x);
    (next, out)
}

/// Lattices shared between bags with equal labels.
pub(crate) fn lattices_for(ds: &Dataset) -> Result<Vec<Arc<SubsetLattice>>> {
    let mut cache: HashMap<LabelSet, Arc<SubsetLattice>> = HashMap::new();
    ds.bags
        .iter()
        .map(|b| {
            if let Some(l) = cache.get(&b.label) {
                return Ok(Arc::clone(l));
            }
            let l = Arc::new(SubsetLattice::new(b.label)?);
            cache.insert(b.label, Arc::clone(&l));
            Ok(l)
        })
        .collect()
}

fn check_dataset(ds: &Dataset) -> Result<()> {
    if ds.bags.is_empty() {
        return Err(MimlError::InvalidData("dataset has no bags".into()));
    }
    if let Some(f) = ds.validate().fatal().next() {
        return Err(MimlError::InvalidData(f.to_string()));
    }
    Ok(())
}

struct EStep {
    posteriors: Vec<PosteriorMatrix>,
    log_likelihood: f64,
    fallbacks: usize,
}

fn e_step(
    w: &WeightMatrix,
    ds: &Dataset,
    lattices: &[Arc<SubsetLattice>],
    bags: &[usize],
    engine: Engine,
) -> Result<EStep> {
    let results: Vec<_> = bags
        .par_iter()
        .map(|&b| {
            let priors = bag_prior(w, &ds.bags[b])?;
            engine.run(&priors, &lattices[b])
        })
        .collect::<Result<_>>()?;
    let mut out = EStep {
        posteriors: Vec::with_capacity(results.len()),
        log_likelihood: 0.0,
        fallbacks: 0,
    };
    // fixed ascending order keeps the sum reproducible
    for r in results {
        out.log_likelihood += r.log_likelihood;
        out.fallbacks += r.fallbacks;
        out.posteriors.push(r.posterior);
    }
    Ok(out)
}

fn full_log_likelihood(
    w: &WeightMatrix,
    ds: &Dataset,
    lattices: &[Arc<SubsetLattice>],
    l2: f64,
) -> Result<f64> {
    let per_bag: Vec<f64> = (0..ds.bags.len())
        .into_par_iter()
        .map(|b| {
            let priors = bag_prior(w, &ds.bags[b])?;
            crate::posterior::bag_conditional_likelihood_with(&priors, &lattices[b])
        })
        .collect::<Result<_>>()?;
    Ok(per_bag.iter().sum::<f64>() - 0.5 * l2 * w.norm_sq())
}

/// Full-batch generalized EM from zero weights.
pub fn em_train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    run_em(ds, cfg, 1.0)
}

/// Stochastic EM: each iteration runs the E-step and the gradient step on
/// `ceil(sample_fraction * B)` bags drawn without replacement. The final model is
/// the last iterate.
pub fn em_train_stochastic(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    run_em(ds, cfg, cfg.sample_fraction)
}

fn run_em(ds: &Dataset, cfg: &TrainConfig, fraction: f64) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MimlError::InvalidConfig(
            "sample fraction must lie in (0, 1]".into(),
        ));
    }
    check_dataset(ds)?;
    let lattices = lattices_for(ds)?;
    let nbags = ds.bags.len();
    let take = ((fraction * nbags as f64).ceil() as usize).clamp(1, nbags);
    let full_batch = take == nbags;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let mut w = WeightMatrix::zeros(ds.feature_dim, ds.num_classes);
    let mut trace = TrainTrace::default();
    let l2 = cfg.l2_lambda;
    let all: Vec<usize> = (0..nbags).collect();

    for it in 0..cfg.em_iterations {
        let t0 = Instant::now();
        let bags: Vec<usize> = if full_batch {
            all.clone()
        } else {
            let mut s = rand::seq::index::sample(&mut rng, nbags, take).into_vec();
            s.sort_unstable();
            s
        };

        let te = Instant::now();
        let estep = e_step(&w, ds, &lattices, &bags, cfg.engine)?;
        let estep_seconds = te.elapsed().as_secs_f64();

        let log_likelihood = if full_batch {
            Some(estep.log_likelihood - 0.5 * l2 * w.norm_sq())
        } else if it % 10 == 0 {
            Some(full_log_likelihood(&w, ds, &lattices, l2)?)
        } else {
            None
        };

        let data = samples(ds, &bags, &estep.posteriors);
        let (next, out) = step_on(&w, &data, cfg);
        let surrogate_start = surrogate_over(&w, &data, l2);
        w = next;

        trace.iterations.push(IterationRecord {
            surrogate: out.value,
            surrogate_start,
            log_likelihood,
            backtracking_steps: out.trials,
            step_size: out.step,
            fallbacks: estep.fallbacks,
            estep_seconds,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    trace.final_log_likelihood = full_log_likelihood(&w, ds, &lattices, l2)?;
    Ok((Model::linear(w, cfg.clone()), trace))
}

/// Single-instance single-label multinomial logistic regression with the same
/// ascent machinery; the fully supervised reference.
pub fn train_sisl(
    instances: &[Instance],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    if instances.is_empty() || instances.len() != labels.len() {
        return Err(MimlError::InvalidData(format!(
            "need one label per instance ({} instances, {} labels)",
            instances.len(),
            labels.len()
        )));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(MimlError::ClassOutOfRange {
            class: c,
            num_classes,
        });
    }
    let d = instances[0].dim();
    if let Some(x) = instances.iter().find(|x| x.dim() != d) {
        return Err(MimlError::DimensionMismatch {
            expected: d,
            got: x.dim(),
            context: "instance features",
        });
    }
    let targets: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let mut t = vec![0.0; num_classes];
            t[y] = 1.0;
            t
        })
        .collect();
    let data: Vec<Sample<'_>> = instances
        .iter()
        .zip(&targets)
        .map(|(x, t)| Sample {
            x: &x.features,
            target: t,
        })
        .collect();
    let l2 = cfg.l2_lambda;
    let loglik = |w: &WeightMatrix| -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in instances.iter().zip(labels) {
            total += instance_prior(w, x)?[y].ln();
        }
        Ok(total - 0.5 * l2 * w.norm_sq())
    };

    let mut w = WeightMatrix::zeros(d, num_classes);
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.em_iterations {
        let t0 = Instant::now();
        let ll = loglik(&w)?;
        let surrogate_start = surrogate_over(&w, &data, l2);
        let (next, out) = step_on(&w, &data, cfg);
        w = next;
        trace.iterations.push(IterationRecord {
            surrogate: out.value,
            surrogate_start,
            log_likelihood: Some(ll),
            backtracking_steps: out.trials,
            step_size: out.step,
            fallbacks: 0,
            estep_seconds: 0.0,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    trace.final_log_likelihood = loglik(&w)?;
    Ok((Model::linear(w, cfg.clone()), trace))
}

/// [`train_sisl`] on the true instance labels of a dataset.
pub fn train_sisl_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    let mut xs = Vec::with_capacity(ds.num_instances());
    let mut ys = Vec::with_capacity(ds.num_instances());
    for bag in &ds.bags {
        let labels = bag.true_labels.as_ref().ok_or_else(|| {
            MimlError::InvalidData(format!("bag {} has no instance labels", bag.id))
        })?;
        xs.extend(bag.instances.iter().cloned());
        ys.extend(labels.iter().copied());
    }
    train_sisl(&xs, &ys, ds.num_classes, cfg)
}
