use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};

use crate::error::{Error, Result};
use crate::rng;

const RATIO_TOLERANCE: f64 = 1e-9;
const SPLIT_STREAM: u64 = 0x5e11;

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios { train: 0.8, val: 0.1, test: 0.1 };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::BadRatios(format!("ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(Error::BadRatios(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// (train, val, test) sizes for `n` items: val and test are floored, the
    /// remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + RATIO_TOLERANCE).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        (n - val - test, val, test)
    }
}

/// Assigns every entry to train/val/test. The assignment depends only on the
/// set of entry ids and the seed, not on entry order.
pub fn split_dataset(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let n = manifest.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 entries to split, got {n}")));
    }
    let mut order: Vec<(String, usize)> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id(), i))
        .collect();
    order.sort();
    order.shuffle(&mut rng::rng(seed, &[SPLIT_STREAM]));

    let (n_train, n_val, _) = ratios.sizes(n);
    let mut out = manifest.clone();
    out.seed = seed;
    for (rank, (_, idx)) in order.iter().enumerate() {
        out.entries[*idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Cohort, ManifestEntry};
    use std::collections::HashSet;

    fn manifest(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                image: format!("img_{i:04}.png"),
                mask: Some(format!("mask_{i:04}.png")),
                cohort: Cohort::Cohort1,
                split: Split::Unsplit,
            })
            .collect();
        DatasetManifest::new(".", 0, entries)
    }

    fn counts(m: &DatasetManifest) -> (usize, usize, usize) {
        let c = |s| m.entries_in(s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }

    #[test]
    fn cohort1_sized_split() {
        let out = split_dataset(&manifest(368), SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!(counts(&out), (296, 36, 36));
    }

    #[test]
    fn five_items_hand_enumerated() {
        // 5*0.2 = 1 each for val/test, 3 left for train.
        let out = split_dataset(&manifest(5), SplitRatios::new(0.6, 0.2, 0.2).unwrap(), 3).unwrap();
        assert_eq!(counts(&out), (3, 1, 1));
    }

    #[test]
    fn deterministic_and_idempotent() {
        let m = manifest(10);
        let a = split_dataset(&m, SplitRatios::DEFAULT, 7).unwrap();
        let b = split_dataset(&m, SplitRatios::DEFAULT, 7).unwrap();
        assert_eq!(a, b);
        let again = split_dataset(&a, SplitRatios::DEFAULT, 7).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn independent_of_entry_order() {
        let m = manifest(40);
        let mut reversed = m.clone();
        reversed.entries.reverse();
        let a = split_dataset(&m, SplitRatios::DEFAULT, 9).unwrap();
        let b = split_dataset(&reversed, SplitRatios::DEFAULT, 9).unwrap();
        let key = |m: &DatasetManifest| {
            let mut v: Vec<_> = m.entries.iter().map(|e| (e.id(), e.split)).collect();
            v.sort_by(|x, y| x.0.cmp(&y.0));
            v
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn bad_ratios() {
        assert_eq!(SplitRatios::new(0.5, 0.5, 0.5).unwrap_err().code(), "BAD_RATIOS");
        assert_eq!(SplitRatios::new(1.0, 0.0, 0.0).unwrap_err().code(), "BAD_RATIOS");
        let r = SplitRatios { train: 0.9, val: 0.2, test: -0.1 };
        assert_eq!(split_dataset(&manifest(10), r, 0).unwrap_err().code(), "BAD_RATIOS");
    }

    #[test]
    fn too_few_entries() {
        assert!(split_dataset(&manifest(2), SplitRatios::DEFAULT, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn partition_is_exact(n in 3usize..400, seed: u64, a in 1u32..20, b in 1u32..20, c in 1u32..20) {
            let total = f64::from(a + b + c);
            let r = SplitRatios { train: f64::from(a) / total, val: f64::from(b) / total, test: f64::from(c) / total };
            proptest::prop_assume!(r.validate().is_ok());
            let out = split_dataset(&manifest(n), r, seed).unwrap();
            let (tr, va, te) = counts(&out);
            proptest::prop_assert_eq!(tr + va + te, n);
            proptest::prop_assert_eq!((tr, va, te), r.sizes(n));
            let ids: HashSet<_> = out.entries.iter().map(|e| e.id()).collect();
            proptest::prop_assert_eq!(ids.len(), n);
            proptest::prop_assert!(out.entries.iter().all(|e| e.split != Split::Unsplit));
        }
    }
}
