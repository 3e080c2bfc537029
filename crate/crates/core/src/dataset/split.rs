use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::Result;
use crate::rng::{rng_for, stream};

/// Splits into train/test halves: each class's labeled entities are shuffled
/// and halved, and the unlabeled pool is shuffled and halved. Odd counts give
/// the extra entity to train. Entities keep their original relative order.
pub fn split_dataset(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let labels = dataset.labels();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes() + 1];
    for (i, e) in dataset.entities().iter().enumerate() {
        let g = labels.class_of(&e.id).unwrap_or(labels.num_classes());
        groups[g].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, mut members) in groups.into_iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::SPLIT, g as u64]);
        members.shuffle(&mut rng);
        let cut = members.len().div_ceil(2);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Entity, FractionMap, LabelStore, Provenance, SurfaceAreaSeries};

    fn dataset(per_class: &[usize], unlabeled: usize) -> Dataset {
        let mut entities = Vec::new();
        let mut labels = LabelStore::default();
        for (class, n) in per_class.iter().enumerate() {
            for k in 0..*n {
                let id = format!("c{class}-{k}");
                labels.insert(&id, class, Provenance::Seed).unwrap();
                entities.push(Entity {
                    id,
                    fraction_map: FractionMap::zeros(2),
                    series: SurfaceAreaSeries::new(vec![0.0]).unwrap(),
                });
            }
        }
        for k in 0..unlabeled {
            entities.push(Entity {
                id: format!("u{k}"),
                fraction_map: FractionMap::zeros(2),
                series: SurfaceAreaSeries::new(vec![0.0]).unwrap(),
            });
        }
        Dataset::new(entities, labels).unwrap()
    }

    #[test]
    fn odd_class_sizes_round_up_to_train() {
        let d = dataset(&[417, 316, 142, 288], 0);
        let (train, test) = split_dataset(&d, 3).unwrap();
        assert_eq!(train.labels().class_counts(), vec![209, 158, 71, 144]);
        assert_eq!(test.labels().class_counts(), vec![208, 158, 71, 144]);
        assert_eq!(train.len() + test.len(), d.len());
    }

    #[test]
    fn unlabeled_halves_and_determinism() {
        let d = dataset(&[3, 0, 1, 2], 11);
        let (a, b) = split_dataset(&d, 9).unwrap();
        let (a2, _) = split_dataset(&d, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.len() - a.labels().len(), 6);
        assert_eq!(b.len() - b.labels().len(), 5);
        for e in a.entities() {
            assert!(b.entity(&e.id).is_none());
        }
    }
}
