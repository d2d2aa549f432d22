//! Canonical ordering of the nonempty subsets of a bag label.
//!
//! Subsets are ranked by ascending cardinality, ties broken lexicographically on
//! their sorted element lists. Every proper subset of a set therefore has a
//! smaller rank, which makes the subset-removal matrix lower triangular and lets
//! the forward recursion update a table in place by walking ranks downwards.

use crate::error::{MimlError, Result};
use crate::label::{LabelSet, MAX_BAG_LABELS};

/// Sentinel rank for the empty set.
pub const EMPTY_RANK: u32 = u32::MAX;

/// Precomputed subset structure of one bag label `Y`.
#[derive(Debug, Clone)]
pub struct SubsetLattice {
    label: LabelSet,
    /// Class index of each local element, ascending.
    classes: Vec<usize>,
    /// Local mask (bit `j` = `classes[j]`) of each rank.
    masks: Vec<u32>,
    /// For rank `r`, `links[offsets[r]..offsets[r + 1]]` holds `(j, rank of mask \ {j})`
    /// for every local element `j` of the mask.
    offsets: Vec<usize>,
    links: Vec<(u32, u32)>,
    full: usize,
}

impl SubsetLattice {
    pub fn new(label: LabelSet) -> Result<Self> {
        let k = label.len();
        if k == 0 {
            return Err(MimlError::EmptyLabelSet);
        }
        if k > MAX_BAG_LABELS {
            return Err(MimlError::LabelCapExceeded(k));
        }
        let classes = label.to_vec();
        let size = (1usize << k) - 1;

        let mut masks: Vec<u32> = (1..=size as u32).collect();
        // Lexicographic order on ascending element lists for equal cardinality:
        // comparing the bit-reversed masks (lowest element = most significant)
        // descending does exactly that.
        masks.sort_by(|&a, &b| {
            a.count_ones()
                .cmp(&b.count_ones())
                .then_with(|| lex_key(b, k).cmp(&lex_key(a, k)))
        });

        let mut rank_of = vec![EMPTY_RANK; size + 1];
        for (r, &m) in masks.iter().enumerate() {
            rank_of[m as usize] = r as u32;
        }

        let mut offsets = Vec::with_capacity(size + 1);
        let mut links = Vec::with_capacity(k * (size + 1) / 2);
        offsets.push(0);
        for &m in &masks {
            let mut rest = m;
            while rest != 0 {
                let j = rest.trailing_zeros();
                rest &= rest - 1;
                links.push((j, rank_of[(m & !(1 << j)) as usize]));
            }
            offsets.push(links.len());
        }

        Ok(Self {
            label,
            classes,
            masks,
            offsets,
            links,
            full: size - 1,
        })
    }

    pub fn label(&self) -> LabelSet {
        self.label
    }

    /// Number of nonempty subsets, `2^|Y| - 1`.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// `|Y|`.
    pub fn cardinality(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Rank of `Y` itself (always the last one).
    pub fn full_rank(&self) -> usize {
        self.full
    }

    pub fn local_mask(&self, rank: usize) -> u32 {
        self.masks[rank]
    }

    /// The subset at `rank` as a class-level [`LabelSet`].
    pub fn subset(&self, rank: usize) -> LabelSet {
        let m = self.masks[rank];
        self.classes
            .iter()
            .enumerate()
            .filter(|(j, _)| m & (1 << j) != 0)
            .map(|(_, &c)| c)
            .collect()
    }

    /// Rank of a class-level subset of `Y`, if it is a nonempty subset.
    pub fn rank_of(&self, set: LabelSet) -> Option<usize> {
        if set.is_empty() || !set.is_subset(self.label) {
            return None;
        }
        let mut local = 0u32;
        for (j, &c) in self.classes.iter().enumerate() {
            if set.contains(c) {
                local |= 1 << j;
            }
        }
        // masks are small; a linear scan keeps this off the hot path without a map
        self.masks.iter().position(|&m| m == local)
    }

    /// `(local element j, rank of subset \ {j})` pairs for the subset at `rank`.
    pub fn links(&self, rank: usize) -> &[(u32, u32)] {
        &self.links[self.offsets[rank]..self.offsets[rank + 1]]
    }

    /// Local index of `class`, if it belongs to `Y`.
    pub fn local_index(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

fn lex_key(mask: u32, k: usize) -> u32 {
    mask.reverse_bits() >> (32 - k)
}

/// All nonempty subsets of `label` in canonical order.
pub fn canonical_subset_order(label: LabelSet) -> Result<Vec<LabelSet>> {
    let lattice = SubsetLattice::new(label)?;
    Ok((0..lattice.len()).map(|r| lattice.subset(r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(c: &[usize]) -> LabelSet {
        LabelSet::from_classes(c.iter().copied()).unwrap()
    }

    #[test]
    fn order_for_one_three_four() {
        let order: Vec<Vec<usize>> = canonical_subset_order(set(&[1, 3, 4]))
            .unwrap()
            .into_iter()
            .map(LabelSet::to_vec)
            .collect();
        assert_eq!(
            order,
            vec![
                vec![1],
                vec![3],
                vec![4],
                vec![1, 3],
                vec![1, 4],
                vec![3, 4],
                vec![1, 3, 4]
            ]
        );
    }

    #[test]
    fn singleton_and_pair() {
        assert_eq!(canonical_subset_order(set(&[5])).unwrap(), vec![set(&[5])]);
        assert_eq!(
            canonical_subset_order(set(&[1, 2])).unwrap(),
            vec![set(&[1]), set(&[2]), set(&[1, 2])]
        );
    }

    #[test]
    fn cap_and_empty() {
        assert!(matches!(
            SubsetLattice::new(LabelSet::EMPTY),
            Err(MimlError::EmptyLabelSet)
        ));
        assert!(matches!(
            SubsetLattice::new(set(&(0..21).collect::<Vec<_>>())),
            Err(MimlError::LabelCapExceeded(21))
        ));
    }

    #[test]
    fn order_is_lexicographic_for_larger_sets() {
        // brute-force comparison against sorting explicit element lists
        let label = set(&[0, 2, 3, 7, 9]);
        let order = canonical_subset_order(label).unwrap();
        let mut expected: Vec<Vec<usize>> = (1u32..32)
            .map(|m| {
                label
                    .to_vec()
                    .into_iter()
                    .enumerate()
                    .filter(|(j, _)| m & (1 << j) != 0)
                    .map(|(_, c)| c)
                    .collect()
            })
            .collect();
        expected.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        let got: Vec<Vec<usize>> = order.into_iter().map(LabelSet::to_vec).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn links_point_to_smaller_ranks() {
        let lat = SubsetLattice::new(set(&[1, 3, 4, 6])).unwrap();
        for r in 0..lat.len() {
            let links = lat.links(r);
            assert_eq!(links.len(), lat.local_mask(r).count_ones() as usize);
            for &(j, s) in links {
                if s == EMPTY_RANK {
                    assert_eq!(lat.local_mask(r), 1 << j);
                } else {
                    assert!((s as usize) < r);
                    assert_eq!(lat.local_mask(s as usize) | (1 << j), lat.local_mask(r));
                }
            }
            assert_eq!(lat.rank_of(lat.subset(r)), Some(r));
        }
        assert_eq!(lat.full_rank(), lat.len() - 1);
        assert_eq!(lat.subset(lat.full_rank()), lat.label());
    }
}
