//! The EM surrogate, its gradient and the MIML log-likelihood.

use crate::data::Dataset;
use crate::error::{MimlError, Result};
use crate::model::{bag_prior, softmax_in_place, WeightMatrix};
use crate::posterior::{bag_conditional_likelihood_with, PosteriorMatrix, SubsetLattice};

/// One instance and its soft target (posterior or indicator), length `C`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample<'a> {
    pub x: &'a [f64],
    pub target: &'a [f64],
}

pub(crate) fn samples<'a>(
    ds: &'a Dataset,
    bags: &[usize],
    posteriors: &'a [PosteriorMatrix],
) -> Vec<Sample<'a>> {
    let mut out = Vec::new();
    for (&b, post) in bags.iter().zip(posteriors) {
        for (x, target) in ds.bags[b].instances.iter().zip(post.rows()) {
            out.push(Sample {
                x: &x.features,
                target,
            });
        }
    }
    out
}

/// `Σ_i [Σ_c t_ic s_ic - log Σ_c e^{s_ic}] - λ/2 |w|^2`.
pub(crate) fn surrogate_over(w: &WeightMatrix, data: &[Sample<'_>], l2: f64) -> f64 {
    let mut s = vec![0.0; w.num_classes()];
    let mut total = 0.0;
    for smp in data {
        w.scores_into(smp.x, &mut s);
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let fit: f64 = smp.target.iter().zip(&s).map(|(t, v)| t * v).sum();
        total += fit - lse;
    }
    total - 0.5 * l2 * w.norm_sq()
}

/// Gradient of [`surrogate_over`]: `Σ_i (t_i - p_i) x̃_i^T - λ w`.
pub(crate) fn gradient_over(w: &WeightMatrix, data: &[Sample<'_>], l2: f64) -> WeightMatrix {
    let c = w.num_classes();
    let d = w.feature_dim();
    let mut g = WeightMatrix::zeros(d, c);
    let gs = g.as_mut_slice();
    let mut p = vec![0.0; c];
    let mut diff = vec![0.0; c];
    for smp in data {
        w.scores_into(smp.x, &mut p);
        softmax_in_place(&mut p);
        for ((df, t), pr) in diff.iter_mut().zip(smp.target).zip(&p) {
            *df = t - pr;
        }
        for (j, &xj) in smp.x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (gv, df) in gs[j * c..(j + 1) * c].iter_mut().zip(&diff) {
                *gv += df * xj;
            }
        }
        for (gv, df) in gs[d * c..].iter_mut().zip(&diff) {
            *gv += df;
        }
    }
    if l2 != 0.0 {
        for (gv, wv) in gs.iter_mut().zip(w.as_slice()) {
            *gv -= l2 * wv;
        }
    }
    g
}

fn check_alignment(ds: &Dataset, posteriors: &[PosteriorMatrix]) -> Result<()> {
    if posteriors.len() != ds.bags.len() {
        return Err(MimlError::DimensionMismatch {
            expected: ds.bags.len(),
            got: posteriors.len(),
            context: "posterior matrices vs bags",
        });
    }
    for (bag, post) in ds.bags.iter().zip(posteriors) {
        if post.num_instances() != bag.len() {
            return Err(MimlError::DimensionMismatch {
                expected: bag.len(),
                got: post.num_instances(),
                context: "posterior rows vs bag instances",
            });
        }
    }
    Ok(())
}

/// The EM surrogate `g(w, w')` (constant term omitted) for posteriors computed
/// at some `w'`, aligned with `ds.bags`.
pub fn surrogate(
    w: &WeightMatrix,
    posteriors: &[PosteriorMatrix],
    ds: &Dataset,
    l2: f64,
) -> Result<f64> {
    check_alignment(ds, posteriors)?;
    let all: Vec<usize> = (0..ds.bags.len()).collect();
    Ok(surrogate_over(w, &samples(ds, &all, posteriors), l2))
}

pub fn surrogate_gradient(
    w: &WeightMatrix,
    posteriors: &[PosteriorMatrix],
    ds: &Dataset,
    l2: f64,
) -> Result<WeightMatrix> {
    check_alignment(ds, posteriors)?;
    let all: Vec<usize> = (0..ds.bags.len()).collect();
    Ok(gradient_over(w, &samples(ds, &all, posteriors), l2))
}

/// `Σ_b log p(Y_b | X_b, w) - λ/2 |w|^2` (the `log p(X)` constant omitted).
pub fn miml_log_likelihood(w: &WeightMatrix, ds: &Dataset, l2: f64) -> Result<f64> {
    let mut total = 0.0;
    for bag in &ds.bags {
        let lattice = SubsetLattice::new(bag.label)?;
        let priors = bag_prior(w, bag)?;
        total += bag_conditional_likelihood_with(&priors, &lattice)?;
    }
    Ok(total - 0.5 * l2 * w.norm_sq())
}
