//! Batch order and balanced same-class pair formation.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Same-class row pairs grouped by class. In a non-empty batch every class
/// holds the same number of pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairBatch {
    per_class: Vec<Vec<(usize, usize)>>,
}

impl PairBatch {
    pub fn empty(num_classes: usize) -> Self {
        Self {
            per_class: vec![Vec::new(); num_classes],
        }
    }

    pub fn class_pairs(&self, class: usize) -> &[(usize, usize)] {
        &self.per_class[class]
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn pairs_per_class(&self) -> usize {
        self.per_class.first().map_or(0, Vec::len)
    }

    /// Total pair count, i.e. `classes × pairs_per_class`.
    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.per_class.iter().flatten()
    }
}

/// Seeded per-epoch shuffle of `0..len`, cut into consecutive batches; the
/// last batch may be short.
pub fn make_batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(seed, &[stream::BATCHES, epoch as u64]));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per-class labeled counts in a batch.
pub fn class_counts(labels: &[Option<usize>], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for c in labels.iter().flatten() {
        counts[*c] += 1;
    }
    counts
}

/// Balanced pair formation: with `c_min` the smallest labeled count over all
/// classes, every class gets exactly `2·c_min` unordered pairs of distinct
/// rows. When `c_min < 2` no pairs are formed. Pairs are drawn without
/// replacement when the class has enough distinct pairs; otherwise every
/// distinct pair is used once and the rest are drawn with replacement.
pub fn form_pairs(labels: &[Option<usize>], num_classes: usize, seed: u64) -> PairBatch {
    let counts = class_counts(labels, num_classes);
    let c_min = counts.iter().copied().min().unwrap_or(0);
    if c_min < 2 {
        return PairBatch::empty(num_classes);
    }
    let need = 2 * c_min;
    let per_class = (0..num_classes)
        .map(|class| {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == Some(class))
                .map(|(i, _)| i)
                .collect();
            let pool: Vec<(usize, usize)> = rows
                .iter()
                .enumerate()
                .flat_map(|(k, &a)| rows[k + 1..].iter().map(move |&b| (a, b)))
                .collect();
            let mut rng = rng_for(seed, &[stream::PAIRS, class as u64]);
            if pool.len() >= need {
                index::sample(&mut rng, pool.len(), need).into_iter().map(|k| pool[k]).collect()
            } else {
                let mut out = pool.clone();
                out.extend((pool.len()..need).map(|_| pool[rng.random_range(0..pool.len())]));
                out
            }
        })
        .collect();
    PairBatch { per_class }
}

/// Appends labeled rows (not already present) so that every class reaches
/// at least `min_per_class` labeled members in the batch, when the labeled
/// pool allows it.
pub fn oversample_labeled(batch: &mut Vec<usize>, labeled_by_class: &[Vec<usize>], min_per_class: usize, seed: u64) {
    let mut rng = rng_for(seed, &[stream::OVERSAMPLE]);
    for pool in labeled_by_class {
        let present = pool.iter().filter(|i| batch.contains(i)).count();
        if present >= min_per_class {
            continue;
        }
        let mut missing: Vec<usize> = pool.iter().copied().filter(|i| !batch.contains(i)).collect();
        missing.shuffle(&mut rng);
        batch.extend(missing.into_iter().take(min_per_class - present));
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn labels_from_counts(counts: &[usize], unlabeled: usize) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, n)| std::iter::repeat_n(Some(c), *n))
            .collect();
        out.extend(std::iter::repeat_n(None, unlabeled));
        out
    }

    #[test]
    fn batch_partition() {
        let batches = make_batches(1000, 256, 3, 1).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![256, 256, 256, 232]);
        assert_eq!(batches, make_batches(1000, 256, 3, 1).unwrap());
        let all: HashSet<usize> = batches.iter().flatten().copied().collect();
        assert_eq!(all.len(), 1000);
        let epochs: Vec<_> = (1..=5).map(|e| make_batches(1000, 256, 3, e).unwrap()).collect();
        assert!(epochs.windows(2).any(|w| w[0] != w[1]));
        assert!(make_batches(0, 4, 0, 0).is_err());
    }

    #[test]
    fn uneven_classes_use_the_smallest_count() {
        let pb = form_pairs(&labels_from_counts(&[3, 5, 7, 4], 10), 4, 1);
        assert_eq!(pb.pairs_per_class(), 6);
        assert_eq!(pb.len(), 24);
        assert!(form_pairs(&labels_from_counts(&[1, 5, 5, 5], 0), 4, 1).is_empty());
        assert!(form_pairs(&labels_from_counts(&[0, 5, 5, 5], 0), 4, 1).is_empty());
    }

    #[test]
    fn two_member_classes_repeat_their_only_pair() {
        let labels = labels_from_counts(&[2, 2, 2, 2], 0);
        let pb = form_pairs(&labels, 4, 9);
        for class in 0..4 {
            let pairs = pb.class_pairs(class);
            assert_eq!(pairs.len(), 4);
            let a = 2 * class;
            assert!(pairs.iter().all(|p| *p == (a, a + 1)));
        }
    }

    #[test]
    fn without_replacement_when_pool_is_large() {
        // 5 members: 10 distinct pairs, exactly 10 needed.
        let pb = form_pairs(&labels_from_counts(&[5, 6, 6, 6], 0), 4, 2);
        for class in 0..4 {
            let distinct: HashSet<_> = pb.class_pairs(class).iter().collect();
            assert_eq!(distinct.len(), 10);
        }
        // 3 members: 3 distinct pairs, 4 needed -> all three plus one repeat.
        let pb = form_pairs(&labels_from_counts(&[2, 3, 2, 2], 0), 4, 2);
        let distinct: HashSet<_> = pb.class_pairs(1).iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn oversampling_reaches_minimum() {
        let pools = vec![vec![100, 101, 102], vec![200], vec![300, 301]];
        let mut batch = vec![1, 2, 100];
        oversample_labeled(&mut batch, &pools, 2, 5);
        assert_eq!(batch.iter().filter(|i| (100..103).contains(*i)).count(), 2);
        assert!(batch.contains(&200));
        assert_eq!(batch.iter().filter(|i| (300..302).contains(*i)).count(), 2);
        let unique: HashSet<_> = batch.iter().collect();
        assert_eq!(unique.len(), batch.len());
    }

    proptest! {
        #[test]
        fn pair_invariants(raw in prop::collection::vec(0usize..6, 0..60), seed in any::<u64>()) {
            // 4 and 5 mean "unlabeled"
            let labels: Vec<Option<usize>> = raw.iter().map(|v| (*v < 4).then_some(*v)).collect();
            let counts = class_counts(&labels, 4);
            let c_min = *counts.iter().min().unwrap();
            let pb = form_pairs(&labels, 4, seed);
            for class in 0..4 {
                let pairs = pb.class_pairs(class);
                prop_assert_eq!(pairs.len(), if c_min >= 2 { 2 * c_min } else { 0 });
                for &(i, j) in pairs {
                    prop_assert!(i != j);
                    prop_assert_eq!(labels[i], Some(class));
                    prop_assert_eq!(labels[j], Some(class));
                }
            }
            prop_assert_eq!(pb.clone(), form_pairs(&labels, 4, seed));
        }
    }
}
