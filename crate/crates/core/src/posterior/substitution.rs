//! Removing one instance from a full-bag subset table by forward substitution.
//!
//! With `u` the table over all instances and `v` the table over all but instance
//! `i`, the recursion gives `u = A v` where `A(r, r) = Σ_{l ∈ L_r} p_i(l)` and
//! `A(r, s) = p_i(c)` when `L_s = L_r \ {c}`. Under the canonical order `A` is
//! lower triangular, so `v` follows by one top-to-bottom sweep.

use super::lattice::{SubsetLattice, EMPTY_RANK};
use crate::error::{MimlError, Result};
use crate::label::LabelSet;

/// Relative tolerance on negative intermediates before a solve is rejected.
pub const NEGATIVE_TOLERANCE: f64 = 1e-8;

/// Sparse lower-triangular matrix in canonical subset order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionMatrix {
    size: usize,
    diag: Vec<f64>,
    /// Strictly-lower entries of row `r`: `(column, value)`.
    lower: Vec<Vec<(usize, f64)>>,
}

impl SubstitutionMatrix {
    /// Builds `A` for an instance with full-length prior `prior`.
    pub fn new(prior: &[f64], lattice: &SubsetLattice) -> Self {
        let size = lattice.len();
        let mut diag = Vec::with_capacity(size);
        let mut lower = Vec::with_capacity(size);
        for r in 0..size {
            let mut d = 0.0;
            let mut row = Vec::new();
            for &(j, sub) in lattice.links(r) {
                let p = prior[lattice.classes()[j as usize]];
                d += p;
                if sub != EMPTY_RANK {
                    row.push((sub as usize, p));
                }
            }
            row.sort_by_key(|&(s, _)| s);
            diag.push(d);
            lower.push(row);
        }
        Self { size, diag, lower }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry `(r, s)`, 0-based.
    pub fn get(&self, r: usize, s: usize) -> f64 {
        if r == s {
            return self.diag[r];
        }
        self.lower[r]
            .iter()
            .find(|&&(col, _)| col == s)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn nonzeros_in_row(&self, r: usize) -> usize {
        self.lower[r].len() + usize::from(self.diag[r] != 0.0)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.size]; self.size];
        for (r, row) in m.iter_mut().enumerate() {
            row[r] = self.diag[r];
            for &(s, v) in &self.lower[r] {
                row[s] = v;
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|r| {
                self.diag[r] * v[r] + self.lower[r].iter().map(|&(s, a)| a * v[s]).sum::<f64>()
            })
            .collect()
    }
}

/// Result of one leave-one-out solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    pub values: Vec<f64>,
    /// Set when an intermediate went below `-NEGATIVE_TOLERANCE * max(u)` or the
    /// solve produced a non-finite value; the caller should recompute directly.
    pub fallback: bool,
}

/// Solves `A v = u` top to bottom; small negatives are clamped to zero.
pub fn leave_one_out_solve(u: &[f64], a: &SubstitutionMatrix) -> Result<LeaveOneOut> {
    if u.len() != a.size {
        return Err(MimlError::DimensionMismatch {
            expected: a.size,
            got: u.len(),
            context: "u vs substitution matrix",
        });
    }
    if let Some(r) = a.diag.iter().position(|&d| d <= 0.0) {
        return Err(MimlError::Numeric(format!(
            "zero diagonal in substitution matrix at row {r}"
        )));
    }
    let tol = NEGATIVE_TOLERANCE * u.iter().copied().fold(0.0, f64::max);
    let mut v = vec![0.0; a.size];
    let mut fallback = false;
    for r in 0..a.size {
        let mut acc = u[r];
        for &(s, val) in &a.lower[r] {
            acc -= val * v[s];
        }
        let x = acc / a.diag[r];
        if !x.is_finite() || x < -tol {
            fallback = true;
        }
        v[r] = if x > 0.0 { x } else { 0.0 };
    }
    Ok(LeaveOneOut {
        values: v,
        fallback,
    })
}

/// Convenience wrapper building `A` from a label set.
pub fn substitution_matrix(prior: &[f64], label: LabelSet) -> Result<SubstitutionMatrix> {
    let lattice = SubsetLattice::new(label)?;
    Ok(SubstitutionMatrix::new(prior, &lattice))
}

/// Allocation-free solve used inside FAST: works directly on the lattice links.
/// Returns `false` when the result must not be trusted.
pub(crate) fn solve_in_place(
    u: &[f64],
    q: &[f64],
    lattice: &SubsetLattice,
    tol: f64,
    v: &mut [f64],
) -> bool {
    let mut ok = true;
    for r in 0..u.len() {
        let mut acc = u[r];
        let mut d = 0.0;
        for &(j, sub) in lattice.links(r) {
            let p = q[j as usize];
            d += p;
            if sub != EMPTY_RANK {
                acc -= p * v[sub as usize];
            }
        }
        let x = acc / d;
        if !x.is_finite() || x < -tol {
            ok = false;
        }
        v[r] = if x > 0.0 { x } else { 0.0 };
    }
    ok
}
