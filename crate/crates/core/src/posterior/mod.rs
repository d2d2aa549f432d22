//! Exact posterior inference of instance labels given a bag label.
//!
//! Three engines compute the same quantities from a bag's [`PriorMatrix`]:
//!
//! * [`posteriors_bruteforce`] enumerates every labeling of the bag (oracle only),
//! * [`posteriors_forward`] reruns the subset recursion once per held-out instance,
//!   `O(|Y| 2^|Y| n^2)`,
//! * [`posteriors_fast`] runs the recursion once and removes each instance with a
//!   triangular solve, `O(|Y| 2^|Y| n)`.
//!
//! All DP tables are kept in linear space with per-instance max-rescaling; the
//! accumulated log factor is carried alongside so posteriors stay scale free and
//! the bag log-likelihood recovers the scale.

mod lattice;
mod substitution;
mod table;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::str::FromStr;

pub use lattice::{canonical_subset_order, SubsetLattice, EMPTY_RANK};
pub use substitution::{
    leave_one_out_solve, substitution_matrix, LeaveOneOut, SubstitutionMatrix, NEGATIVE_TOLERANCE,
};
pub use table::{forward_pass, forward_pass_with, joint_last, SubsetTable};

use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::model::PriorMatrix;
use table::{check_classes, joint_last_into, local_prior};

/// Largest number of labelings the brute-force oracle will enumerate.
pub const BRUTE_FORCE_GUARD: f64 = 1e7;

/// `p(y_i = c, Y | X, w)` stored as `joint * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMatrix {
    n: usize,
    c: usize,
    pub joint: Vec<f64>,
    pub log_scale: f64,
}

impl JointMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.joint[i * self.c..(i + 1) * self.c]
    }

    pub fn num_instances(&self) -> usize {
        self.n
    }

    /// Unscaled entry.
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.joint[i * self.c + c] * self.log_scale.exp()
    }
}

/// `p(y_i = c | Y, X, w)`; rows sum to one and vanish outside `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    n: usize,
    c: usize,
    post: Vec<f64>,
}

impl PosteriorMatrix {
    fn from_joint(joint: &JointMatrix) -> Result<Self> {
        let mut post = joint.joint.clone();
        for row in post.chunks_mut(joint.c) {
            let s: f64 = row.iter().sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(MimlError::Numeric("joint row has no mass".into()));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self {
            n: joint.n,
            c: joint.c,
            post,
        })
    }

    /// Builds a posterior matrix from explicit rows (used for indicator targets).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let c = rows.first().map_or(0, Vec::len);
        Self {
            n: rows.len(),
            c,
            post: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn num_instances(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.post[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.post.chunks(self.c)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    pub joint: JointMatrix,
    pub posterior: PosteriorMatrix,
    /// `log p(Y | X, w)`.
    pub log_likelihood: f64,
    /// Instances whose FAST solve was rejected and recomputed directly.
    pub fallbacks: usize,
}

/// Which E-step engine to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    Forward,
    #[default]
    Fast,
    Brute,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Forward => "forward",
            Engine::Fast => "fast",
            Engine::Brute => "brute",
        }
    }

    pub fn run(self, priors: &PriorMatrix, lattice: &SubsetLattice) -> Result<PosteriorResult> {
        match self {
            Engine::Forward => posteriors_forward_with(priors, lattice),
            Engine::Fast => posteriors_fast_with(priors, lattice),
            Engine::Brute => posteriors_bruteforce_with(priors, lattice),
        }
    }
}

impl FromStr for Engine {
    type Err = MimlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Engine::Forward),
            "fast" => Ok(Engine::Fast),
            "brute" => Ok(Engine::Brute),
            other => Err(MimlError::InvalidConfig(format!(
                "unknown engine '{other}'"
            ))),
        }
    }
}

impl Serialize for Engine {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Engine {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_satisfiable(priors: &PriorMatrix, lattice: &SubsetLattice) -> Result<()> {
    check_classes(priors, lattice)?;
    if priors.num_instances() < lattice.cardinality() {
        return Err(MimlError::ZeroLikelihood {
            instances: priors.num_instances(),
            labels: lattice.cardinality(),
        });
    }
    Ok(())
}

fn finish(joint: JointMatrix, log_likelihood: f64, fallbacks: usize) -> Result<PosteriorResult> {
    if !log_likelihood.is_finite() {
        return Err(MimlError::Numeric(format!(
            "bag log-likelihood is {log_likelihood}"
        )));
    }
    let posterior = PosteriorMatrix::from_joint(&joint)?;
    Ok(PosteriorResult {
        joint,
        posterior,
        log_likelihood,
        fallbacks,
    })
}

/// Forward algorithm: for every instance, swap it to the last position, rerun the
/// recursion over the other instances and close with [`joint_last`].
pub fn posteriors_forward(priors: &PriorMatrix, label: LabelSet) -> Result<PosteriorResult> {
    posteriors_forward_with(priors, &SubsetLattice::new(label)?)
}

pub fn posteriors_forward_with(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
) -> Result<PosteriorResult> {
    check_satisfiable(priors, lattice)?;
    let n = priors.num_instances();
    let c = priors.num_classes();
    let mut joint = vec![0.0; n * c];
    let mut scales = vec![0.0; n];
    let mut table = SubsetTable::empty(lattice);
    let mut q = vec![0.0; lattice.cardinality()];

    for i in 0..n {
        leave_out_table(priors, lattice, i, &mut table, &mut q);
        scales[i] = table.log_scale;
        joint_last_into(
            priors.row(i),
            &table,
            lattice,
            &mut joint[i * c..(i + 1) * c],
        );
    }

    // bring every row onto the last row's scale
    let common = scales[n - 1];
    for (row, &s) in joint.chunks_mut(c).zip(&scales) {
        let f = (s - common).exp();
        if f != 1.0 {
            row.iter_mut().for_each(|v| *v *= f);
        }
    }
    let last: f64 = joint[(n - 1) * c..].iter().sum();
    let ll = last.ln() + common;
    finish(
        JointMatrix {
            n,
            c,
            joint,
            log_scale: common,
        },
        ll,
        0,
    )
}

/// Table over every instance except `i`, with instance `n-1` moved into slot `i`.
fn leave_out_table(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
    i: usize,
    table: &mut SubsetTable,
    q: &mut [f64],
) {
    let n = priors.num_instances();
    table.values.iter_mut().for_each(|v| *v = 0.0);
    table.log_scale = 0.0;
    table.empty = 1.0;
    table.instances = 0;
    for j in 0..n - 1 {
        let src = if j == i { n - 1 } else { j };
        local_prior(priors, src, lattice, q);
        table.absorb(lattice, q);
    }
}

/// Forward-and-substitution: one full recursion, then a triangular solve per
/// instance. Instances whose solve is numerically rejected are recomputed with the
/// forward path, so the result stays exact.
pub fn posteriors_fast(priors: &PriorMatrix, label: LabelSet) -> Result<PosteriorResult> {
    posteriors_fast_with(priors, &SubsetLattice::new(label)?)
}

pub fn posteriors_fast_with(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
) -> Result<PosteriorResult> {
    check_satisfiable(priors, lattice)?;
    let n = priors.num_instances();
    let c = priors.num_classes();
    let k = lattice.cardinality();
    let mut joint = vec![0.0; n * c];

    if n == 1 {
        let empty = SubsetTable::empty(lattice);
        joint_last_into(priors.row(0), &empty, lattice, &mut joint);
        let ll = joint.iter().sum::<f64>().ln();
        return finish(
            JointMatrix {
                n,
                c,
                joint,
                log_scale: 0.0,
            },
            ll,
            0,
        );
    }

    let mut full = SubsetTable::empty(lattice);
    let mut q = vec![0.0; k];
    for i in 0..n {
        local_prior(priors, i, lattice, &mut q);
        full.absorb(lattice, &q);
    }
    let u = &full.values;
    let scale = full.log_scale;
    let tol = NEGATIVE_TOLERANCE * u.iter().copied().fold(0.0, f64::max);

    let mut rest = SubsetTable {
        values: vec![0.0; lattice.len()],
        log_scale: scale,
        empty: 0.0,
        instances: n - 1,
    };
    let mut scratch = SubsetTable::empty(lattice);
    let mut fallbacks = 0;
    for i in 0..n {
        local_prior(priors, i, lattice, &mut q);
        let row = &mut joint[i * c..(i + 1) * c];
        if substitution::solve_in_place(u, &q, lattice, tol, &mut rest.values) {
            joint_last_into(priors.row(i), &rest, lattice, row);
        } else {
            fallbacks += 1;
            leave_out_table(priors, lattice, i, &mut scratch, &mut q);
            joint_last_into(priors.row(i), &scratch, lattice, row);
            let f = (scratch.log_scale - scale).exp();
            row.iter_mut().for_each(|v| *v *= f);
        }
    }
    let ll = u[lattice.full_rank()].ln() + scale;
    finish(
        JointMatrix {
            n,
            c,
            joint,
            log_scale: scale,
        },
        ll,
        fallbacks,
    )
}

/// Oracle: enumerate every labeling with labels drawn from `Y` and keep those
/// whose union is `Y`. Refuses when `|Y|^n` exceeds [`BRUTE_FORCE_GUARD`].
pub fn posteriors_bruteforce(priors: &PriorMatrix, label: LabelSet) -> Result<PosteriorResult> {
    posteriors_bruteforce_with(priors, &SubsetLattice::new(label)?)
}

pub fn posteriors_bruteforce_with(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
) -> Result<PosteriorResult> {
    check_satisfiable(priors, lattice)?;
    let n = priors.num_instances();
    let c = priors.num_classes();
    let k = lattice.cardinality();
    let count = (k as f64).powi(n as i32);
    if count > BRUTE_FORCE_GUARD {
        return Err(MimlError::OracleGuard(count));
    }
    let classes = lattice.classes();
    let full_mask = (1u32 << k) - 1;

    // Per-row normalization keeps products away from underflow.
    let mut q = vec![0.0; n * k];
    let mut log_scale = 0.0;
    for i in 0..n {
        let row = priors.row(i);
        let m = classes.iter().map(|&cl| row[cl]).fold(0.0, f64::max);
        log_scale += m.ln();
        for (j, &cl) in classes.iter().enumerate() {
            q[i * k + j] = row[cl] / m;
        }
    }

    let mut joint = vec![0.0; n * c];
    let mut total = 0.0;
    let mut digits = vec![0usize; n];
    loop {
        let mut mask = 0u32;
        let mut prod = 1.0;
        for (i, &d) in digits.iter().enumerate() {
            mask |= 1 << d;
            prod *= q[i * k + d];
        }
        if mask == full_mask {
            total += prod;
            for (i, &d) in digits.iter().enumerate() {
                joint[i * c + classes[d]] += prod;
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                let ll = total.ln() + log_scale;
                return finish(
                    JointMatrix {
                        n,
                        c,
                        joint,
                        log_scale,
                    },
                    ll,
                    0,
                );
            }
            digits[pos] += 1;
            if digits[pos] < k {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// `log p(Y | X, w)` from a single forward recursion over the whole bag.
pub fn bag_conditional_likelihood(priors: &PriorMatrix, label: LabelSet) -> Result<f64> {
    bag_conditional_likelihood_with(priors, &SubsetLattice::new(label)?)
}

pub fn bag_conditional_likelihood_with(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
) -> Result<f64> {
    check_satisfiable(priors, lattice)?;
    let t = forward_pass_with(priors, lattice, priors.num_instances())?;
    let ll = t.values[lattice.full_rank()].ln() + t.log_scale;
    if !ll.is_finite() {
        return Err(MimlError::Numeric(format!("bag log-likelihood is {ll}")));
    }
    Ok(ll)
}

#[cfg(test)]
mod tests;
