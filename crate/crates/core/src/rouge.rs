//! ROUGE-2 precision and recall over word tokens.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// ROUGE-2 precision and recall of a candidate against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTarget {
    pub precision: f64,
    pub recall: f64,
}

impl RougeTarget {
    pub fn as_array(&self) -> [f64; 2] {
        [self.precision, self.recall]
    }
}

/// Adjacent token pairs with their multiplicities.
pub fn bigram_multiset<T: Ord>(tokens: &[T]) -> BTreeMap<(&T, &T), usize> {
    let mut counts = BTreeMap::new();
    for w in tokens.windows(2) {
        *counts.entry((&w[0], &w[1])).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-2 with `q` as the reference and `s` as the candidate.
///
/// The overlap is the clipped multiset intersection. A side with fewer than
/// two tokens has no bigrams and its ratio is 0.
pub fn rouge2<T: Ord>(q: &[T], s: &[T]) -> RougeTarget {
    let q_bigrams = bigram_multiset(q);
    let s_bigrams = bigram_multiset(s);
    let overlap: usize = q_bigrams
        .iter()
        .map(|(bg, &n)| n.min(s_bigrams.get(bg).copied().unwrap_or(0)))
        .sum();
    let ratio = |total: usize| {
        if total == 0 {
            0.0
        } else {
            overlap as f64 / total as f64
        }
    };
    RougeTarget {
        precision: ratio(s.len().saturating_sub(1)),
        recall: ratio(q.len().saturating_sub(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec;

    #[test]
    fn bigram_multiplicity() {
        let m = bigram_multiset(&["a", "b", "c"]);
        assert_eq!(m.len(), 2);
        assert!(bigram_multiset(&["a"]).is_empty());
        let m = bigram_multiset(&["a", "a", "a"]);
        assert_eq!(m.get(&(&"a", &"a")), Some(&2));
    }

    #[test]
    fn identical_and_disjoint() {
        let q = ["a", "b", "c"];
        assert_eq!(rouge2(&q, &q), RougeTarget { precision: 1.0, recall: 1.0 });
        assert_eq!(
            rouge2(&q, &["x", "y", "z"]),
            RougeTarget { precision: 0.0, recall: 0.0 }
        );
    }

    #[test]
    fn hand_enumerated_overlap() {
        let r = rouge2(&["a", "b", "c", "d"], &["a", "b", "c", "e"]);
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 2.0 / 3.0);
    }

    #[test]
    fn degenerate_sides_are_zero() {
        let r = rouge2(&["a"], &["a", "b"]);
        assert_eq!(r, RougeTarget { precision: 0.0, recall: 0.0 });
        let empty: [&str; 0] = [];
        assert_eq!(rouge2(&empty, &empty).recall, 0.0);
    }

    #[test]
    fn clipping_counts_repeats_once_per_match() {
        // q has (a,a) twice, s once
        let r = rouge2(&["a", "a", "a"], &["a", "a", "b"]);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.precision, 0.5);
    }

    proptest! {
        #[test]
        fn swap_symmetry_and_bounds(
            q in proptest::collection::vec(0u8..6, 0..20),
            s in proptest::collection::vec(0u8..6, 0..20),
        ) {
            let a = rouge2(&q, &s);
            let b = rouge2(&s, &q);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert!((0.0..=1.0).contains(&a.precision));
            prop_assert!((0.0..=1.0).contains(&a.recall));
            let qs: Vec<u8> = q.clone();
            prop_assert_eq!(rouge2(&qs, &qs).recall, if q.len() >= 2 { 1.0 } else { 0.0 });
        }
    }
}
