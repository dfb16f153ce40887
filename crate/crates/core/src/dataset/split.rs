use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, DatasetRole, IdentityDataset};

/// Partitions identities (never individual images) into train and test sets.
///
/// The train side receives `round(train_fraction · identities)` identities
/// chosen by a seeded shuffle.
pub fn split_disjoint(
    dataset: &IdentityDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(IdentityDataset, IdentityDataset), DatasetError> {
    let total = dataset.identity_count();
    if total < 2 {
        return Err(DatasetError::Split(format!("need at least 2 identities, have {total}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let train_count = (train_fraction * total as f64).round() as usize;
    if train_count == 0 || train_count == total {
        return Err(DatasetError::Split(format!(
            "fraction {train_fraction} of {total} identities leaves the {} side empty",
            if train_count == 0 { "train" } else { "test" }
        )));
    }
    let mut labels: Vec<String> = dataset.labels().map(str::to_owned).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_labels: std::collections::BTreeSet<String> = labels[..train_count].iter().cloned().collect();

    let (mut train, mut test) = (BTreeMap::new(), BTreeMap::new());
    for (label, images) in dataset.clone().into_entries() {
        if train_labels.contains(&label) {
            train.insert(label, images);
        } else {
            test.insert(label, images);
        }
    }
    Ok((
        IdentityDataset::new(DatasetRole::Train, train)?,
        IdentityDataset::new(DatasetRole::Test, test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageTensor;

    fn dataset(n: usize) -> IdentityDataset {
        let entries = (0..n)
            .map(|i| (format!("p{i:02}"), vec![ImageTensor::filled(2, 2, 1, i as f64 / n as f64).unwrap()]))
            .collect();
        IdentityDataset::new(DatasetRole::All, entries).unwrap()
    }

    #[test]
    fn eighty_twenty_is_disjoint() {
        let (train, test) = split_disjoint(&dataset(10), 0.8, 1).unwrap();
        assert_eq!(train.identity_count(), 8);
        assert_eq!(test.identity_count(), 2);
        assert!(train.labels().all(|l| !test.contains(l)));
        assert_eq!(train.role(), DatasetRole::Train);
        assert_eq!(test.role(), DatasetRole::Test);
    }

    #[test]
    fn same_seed_same_partition() {
        let a = split_disjoint(&dataset(10), 0.5, 9).unwrap();
        let b = split_disjoint(&dataset(10), 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_side_is_an_error() {
        assert!(matches!(split_disjoint(&dataset(10), 0.99, 0), Err(DatasetError::Split(_))));
        assert!(matches!(split_disjoint(&dataset(10), 0.01, 0), Err(DatasetError::Split(_))));
        assert!(matches!(split_disjoint(&dataset(1), 0.5, 0), Err(DatasetError::Split(_))));
        assert!(matches!(split_disjoint(&dataset(10), 1.0, 0), Err(DatasetError::Split(_))));
    }
}
