//! Seeded image-level train/test assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::domain::Split;
use crate::error::{Error, Result};

/// Number of training images for `n` images at `fraction`: `floor(n * f)`,
/// with the remainder going to test.
pub fn train_count(n: usize, fraction: f64) -> usize {
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    ((n as f64 * fraction + 1e-9).floor() as usize).min(n)
}

/// Reassigns every record to train or test after a seeded shuffle.
pub fn split_dataset(mut manifest: DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = manifest.records.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 images to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(n, train_fraction);
    for (rank, &i) in order.iter().enumerate() {
        manifest.records[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    manifest.refresh_fraction();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::manifest::{ImageRecord, SourceKind};
    use proptest::prelude::*;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            records: (0..n)
                .map(|i| ImageRecord {
                    id: format!("img{i}"),
                    image_path: format!("{i}.png").into(),
                    height: 4,
                    width: 4,
                    split: Split::Train,
                    instances: vec![],
                })
                .collect(),
            source_kind: SourceKind::PolygonManifest,
            train_fraction: 1.0,
        }
    }

    #[test]
    fn pavement_dataset_proportions() {
        let m = split_dataset(manifest(240), 0.75, 42).unwrap();
        assert_eq!(m.split_counts(), (180, 60));
        assert_eq!(m.train_fraction, 0.75);
    }

    #[test]
    fn small_split_uses_floor() {
        assert_eq!(split_dataset(manifest(4), 0.75, 1).unwrap().split_counts(), (3, 1));
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = split_dataset(manifest(50), 0.75, 9).unwrap();
        let b = split_dataset(manifest(50), 0.75, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_tiny_inputs_and_bad_fractions() {
        assert!(split_dataset(manifest(1), 0.75, 0).is_err());
        assert!(split_dataset(manifest(10), 1.0, 0).is_err());
        assert!(split_dataset(manifest(10), 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_images(n in 2usize..300, f in 0.01f64..0.99, seed in any::<u64>()) {
            let m = split_dataset(manifest(n), f, seed).unwrap();
            let (train, test) = m.split_counts();
            prop_assert_eq!(train + test, n);
            prop_assert!((train as f64 - n as f64 * f).abs() < 1.0 + 1e-9);
            let mut ids: Vec<_> = m.records.iter().map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
