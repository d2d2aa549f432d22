//! Label sets over the `C` classes, stored as bitmasks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};

/// Largest bag label cardinality accepted anywhere in the crate.
pub const MAX_BAG_LABELS: usize = 20;

/// Largest number of classes a [`LabelSet`] can address.
pub const MAX_CLASSES: usize = 64;

/// A subset of the classes `0..C`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct LabelSet(u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_mask(mask: u64) -> Self {
        LabelSet(mask)
    }

    pub fn singleton(class: usize) -> Self {
        assert!(
            class < MAX_CLASSES,
            "class index {class} exceeds {MAX_CLASSES}"
        );
        LabelSet(1u64 << class)
    }

    /// Builds a set from class indices; duplicates are merged.
    pub fn from_classes<I: IntoIterator<Item = usize>>(classes: I) -> Result<Self> {
        let mut mask = 0u64;
        for c in classes {
            if c >= MAX_CLASSES {
                return Err(MimlError::ClassOutOfRange {
                    class: c,
                    num_classes: MAX_CLASSES,
                });
            }
            mask |= 1u64 << c;
        }
        Ok(LabelSet(mask))
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, class: usize) -> bool {
        class < MAX_CLASSES && self.0 & (1u64 << class) != 0
    }

    pub fn insert(&mut self, class: usize) {
        assert!(
            class < MAX_CLASSES,
            "class index {class} exceeds {MAX_CLASSES}"
        );
        self.0 |= 1u64 << class;
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn symmetric_difference(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 ^ other.0)
    }

    pub fn is_subset(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Largest class index plus one, or 0 for the empty set.
    pub fn span(self) -> usize {
        64 - self.0.leading_zeros() as usize
    }

    /// Class indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let c = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(c)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Checks the bag-label contract: nonempty, within `num_classes`, under the cap.
    pub fn check_bag_label(self, num_classes: usize) -> Result<()> {
        if self.is_empty() {
            return Err(MimlError::EmptyLabelSet);
        }
        if self.span() > num_classes {
            return Err(MimlError::ClassOutOfRange {
                class: self.span() - 1,
                num_classes,
            });
        }
        if self.len() > MAX_BAG_LABELS {
            return Err(MimlError::LabelCapExceeded(self.len()));
        }
        Ok(())
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = LabelSet::EMPTY;
        for c in iter {
            s.insert(c);
        }
        s
    }
}

impl From<LabelSet> for Vec<usize> {
    fn from(s: LabelSet) -> Self {
        s.to_vec()
    }
}

impl TryFrom<Vec<usize>> for LabelSet {
    type Error = MimlError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LabelSet::from_classes(v)
    }
}
