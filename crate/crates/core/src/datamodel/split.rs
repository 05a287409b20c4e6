use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Part sizes for `n` samples: each part gets `floor(n * r)`, and the
/// leftover samples go one by one to the parts with the largest fractional
/// share, ties resolved in (train, val, test) order.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::Split(format!(
            "ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let shares = ratios.map(|r| n as f64 * r);
    // Tolerance absorbs representation error such as 0.15 * 1000 = 149.99..
    let mut sizes = shares.map(|s| (s + 1e-9).floor() as usize);
    let fracs = [0, 1, 2].map(|i| (shares[i] - sizes[i] as f64).max(0.0));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]).then(a.cmp(&b)));
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Deterministic seeded shuffle of the samples followed by contiguous cuts.
pub fn split_dataset(
    ds: &Dataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let sizes = split_sizes(ds.len(), ratios)?;
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        let name = ["train", "val", "test"][i];
        return Err(Error::Split(format!(
            "{name} split would be empty for {} samples with ratios {ratios:?}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(sizes[0]);
    let (val, test) = rest.split_at(sizes[1]);
    Ok((ds.subset(train)?, ds.subset(val)?, ds.subset(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ImageSample, SegmentationMask};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn dummy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| ImageSample {
                id: format!("img{i:04}"),
                image: image::RgbImage::new(2, 2),
                boxes: vec![],
                mask: SegmentationMask::zeros(2, 2),
            })
            .collect();
        Dataset::new(samples, 1, 2).unwrap()
    }

    #[test]
    fn thousand_samples_split_700_150_150() {
        assert_eq!(
            split_sizes(1000, [0.7, 0.15, 0.15]).unwrap(),
            [700, 150, 150]
        );
        let (a, b, c) = split_dataset(&dummy(1000), [0.7, 0.15, 0.15], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (700, 150, 150));
    }

    #[test]
    fn ten_samples_follow_largest_remainder() {
        // shares 7.0 / 1.5 / 1.5 -> floors 7 / 1 / 1, one leftover;
        // val and test tie on 0.5, val comes first.
        assert_eq!(split_sizes(10, [0.7, 0.15, 0.15]).unwrap(), [7, 2, 1]);
    }

    #[test]
    fn same_seed_same_membership() {
        let ds = dummy(50);
        let (a1, b1, c1) = split_dataset(&ds, [0.7, 0.15, 0.15], 42).unwrap();
        let (a2, b2, c2) = split_dataset(&ds, [0.7, 0.15, 0.15], 42).unwrap();
        assert_eq!(a1.ids(), a2.ids());
        assert_eq!(b1.ids(), b2.ids());
        assert_eq!(c1.ids(), c2.ids());
        let (a3, _, _) = split_dataset(&ds, [0.7, 0.15, 0.15], 43).unwrap();
        assert_ne!(a1.ids(), a3.ids());
    }

    #[test]
    fn empty_part_and_bad_ratios_are_errors() {
        assert!(split_dataset(&dummy(3), [0.7, 0.15, 0.15], 0).is_err());
        assert!(split_sizes(10, [0.7, 0.2, 0.2]).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..200, seed in any::<u64>(), a in 1u32..10, b in 1u32..10, c in 1u32..10) {
            let t = (a + b + c) as f64;
            let ratios = [a as f64 / t, b as f64 / t, 1.0 - a as f64 / t - b as f64 / t];
            let sizes = split_sizes(n, ratios).unwrap();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            if let Ok((x, y, z)) = split_dataset(&dummy(n), ratios, seed) {
                let mut all = HashSet::new();
                for id in x.ids().into_iter().chain(y.ids()).chain(z.ids()) {
                    prop_assert!(all.insert(id.to_string()));
                }
                prop_assert_eq!(all.len(), n);
            } else {
                prop_assert!(sizes.contains(&0));
            }
        }
    }
}
