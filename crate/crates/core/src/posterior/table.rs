//! The forward recursion over subsets of a bag label.

use super::lattice::{SubsetLattice, EMPTY_RANK};
use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::model::PriorMatrix;

/// Probability mass `p(Y^i = L | X, w)` for every nonempty `L ⊆ Y`, indexed by
/// canonical rank, stored as `values * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetTable {
    pub values: Vec<f64>,
    pub log_scale: f64,
    /// Mass on the empty set: 1 before any instance is absorbed, 0 after.
    pub empty: f64,
    /// Number of instances absorbed.
    pub instances: usize,
}

impl SubsetTable {
    /// Table for zero instances: all mass on the empty set.
    pub fn empty(lattice: &SubsetLattice) -> Self {
        Self {
            values: vec![0.0; lattice.len()],
            log_scale: 0.0,
            empty: 1.0,
            instances: 0,
        }
    }

    /// Unscaled value at `rank`.
    pub fn mass(&self, rank: usize) -> f64 {
        self.values[rank] * self.log_scale.exp()
    }

    #[inline]
    pub(crate) fn at(&self, rank: u32) -> f64 {
        if rank == EMPTY_RANK {
            self.empty
        } else {
            self.values[rank as usize]
        }
    }

    /// Absorbs one more instance whose priors restricted to `Y` are `q`
    /// (indexed by local element), then rescales by the largest entry.
    pub fn absorb(&mut self, lattice: &SubsetLattice, q: &[f64]) {
        // New value at rank r depends on old values at r and strictly lower ranks,
        // so a descending sweep can overwrite in place.
        for r in (0..self.values.len()).rev() {
            let old = self.values[r];
            let mut acc = 0.0;
            for &(j, sub) in lattice.links(r) {
                acc += q[j as usize] * (old + self.at(sub));
            }
            self.values[r] = acc;
        }
        self.empty = 0.0;
        self.instances += 1;
        self.rescale();
    }

    fn rescale(&mut self) {
        let m = self.values.iter().copied().fold(0.0, f64::max);
        if m > 0.0 && m.is_finite() {
            let inv = 1.0 / m;
            for v in &mut self.values {
                *v *= inv;
            }
            self.log_scale += m.ln();
        }
    }
}

/// Priors of row `i` restricted to the lattice's classes, in local order.
pub(crate) fn local_prior(
    priors: &PriorMatrix,
    i: usize,
    lattice: &SubsetLattice,
    out: &mut [f64],
) {
    let row = priors.row(i);
    for (o, &c) in out.iter_mut().zip(lattice.classes()) {
        *o = row[c];
    }
}

/// Runs the recursion over the first `upto` instances of the bag.
pub fn forward_pass(priors: &PriorMatrix, label: LabelSet, upto: usize) -> Result<SubsetTable> {
    let lattice = SubsetLattice::new(label)?;
    forward_pass_with(priors, &lattice, upto)
}

pub fn forward_pass_with(
    priors: &PriorMatrix,
    lattice: &SubsetLattice,
    upto: usize,
) -> Result<SubsetTable> {
    if upto == 0 || upto > priors.num_instances() {
        return Err(MimlError::InvalidConfig(format!(
            "forward pass needs 1 <= k <= {} (got {upto})",
            priors.num_instances()
        )));
    }
    check_classes(priors, lattice)?;
    let mut table = SubsetTable::empty(lattice);
    let mut q = vec![0.0; lattice.cardinality()];
    for i in 0..upto {
        local_prior(priors, i, lattice, &mut q);
        table.absorb(lattice, &q);
    }
    Ok(table)
}

pub(crate) fn check_classes(priors: &PriorMatrix, lattice: &SubsetLattice) -> Result<()> {
    let span = lattice.label().span();
    if span > priors.num_classes() {
        return Err(MimlError::ClassOutOfRange {
            class: span - 1,
            num_classes: priors.num_classes(),
        });
    }
    Ok(())
}

/// `p(y_last = c, Y | X, w)` for every class from the table over the other
/// instances; zero outside `Y`. The result carries the table's scale.
///
/// `prior_last` is the full length-`C` prior of the held-out instance.
pub fn joint_last(prior_last: &[f64], table: &SubsetTable, lattice: &SubsetLattice) -> Vec<f64> {
    let mut out = vec![0.0; prior_last.len()];
    joint_last_into(prior_last, table, lattice, &mut out);
    out
}

pub(crate) fn joint_last_into(
    prior_last: &[f64],
    table: &SubsetTable,
    lattice: &SubsetLattice,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let full = lattice.full_rank();
    let at_full = table.values[full];
    for &(j, sub) in lattice.links(full) {
        let c = lattice.classes()[j as usize];
        out[c] = prior_last[c] * (at_full + table.at(sub));
    }
}
