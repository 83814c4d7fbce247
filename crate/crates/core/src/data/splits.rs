//! Volume-level train/val/test partition.

use std::collections::BTreeMap;

use super::triplet::SliceTriplet;
use crate::error::{Error, Result};
use crate::metrics::Region;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Upper bound on the shaft share of training bone slices; `None` keeps
    /// every slice.
    pub shaft_cap: Option<f64>,
    pub seed: u64,
}

impl SplitSpec {
    /// All but two volumes for training, one each for validation and test.
    pub fn for_volumes(n: usize, seed: u64) -> Self {
        Self { n_train: n.saturating_sub(2), n_val: 1, n_test: 1, shaft_cap: Some(0.4), seed }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<SliceTriplet>,
    pub val: Vec<SliceTriplet>,
    /// Every test slice, above-structure ones included.
    pub test: Vec<SliceTriplet>,
    pub train_volumes: Vec<usize>,
    pub val_volumes: Vec<usize>,
    pub test_volumes: Vec<usize>,
    pub dropped_shaft: usize,
}

impl Splits {
    pub fn test_region(&self, region: Region) -> Vec<&SliceTriplet> {
        self.test.iter().filter(|t| t.region == region).collect()
    }

    pub fn test_by_region(&self) -> BTreeMap<Region, Vec<&SliceTriplet>> {
        let mut m: BTreeMap<Region, Vec<&SliceTriplet>> = BTreeMap::new();
        for t in &self.test {
            m.entry(t.region).or_default().push(t);
        }
        m
    }
}

/// Number of shaft slices to drop so that `shaft / bone ≤ cap`.
pub fn shaft_excess(shaft: usize, bone: usize, cap: f64) -> usize {
    if bone == 0 || shaft as f64 <= cap * bone as f64 {
        return 0;
    }
    if cap <= 0.0 {
        return shaft;
    }
    // (shaft − d) / (bone − d) ≤ cap  ⇔  d ≥ (shaft − cap·bone) / (1 − cap)
    let d = ((shaft as f64 - cap * bone as f64) / (1.0 - cap)).ceil() as usize;
    d.min(shaft)
}

/// Volumes are taken in order: the first `n_train` train, the next `n_val`
/// validate, the last `n_test` test.
pub fn build_splits(volumes: Vec<Vec<SliceTriplet>>, spec: &SplitSpec) -> Result<Splits> {
    let n = volumes.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 volumes for disjoint train/val/test, got {n}")));
    }
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 || spec.n_train + spec.n_val + spec.n_test > n {
        return Err(Error::Config(format!(
            "split {}/{}/{} does not fit {n} volumes (each part needs at least one)",
            spec.n_train, spec.n_val, spec.n_test
        )));
    }
    if let Some(cap) = spec.shaft_cap {
        if !(0.0..=1.0).contains(&cap) {
            return Err(Error::Config(format!("shaft cap {cap} is outside [0, 1]")));
        }
    }
    let mut s = Splits::default();
    let val_start = spec.n_train;
    let test_start = n - spec.n_test;
    for (i, vol) in volumes.into_iter().enumerate() {
        if i < val_start {
            s.train.extend(vol);
            s.train_volumes.push(i);
        } else if i < val_start + spec.n_val {
            s.val.extend(vol);
            s.val_volumes.push(i);
        } else if i >= test_start {
            s.test.extend(vol);
            s.test_volumes.push(i);
        }
    }
    if let Some(cap) = spec.shaft_cap {
        let bone = s.train.iter().filter(|t| t.region != Region::AboveStructure).count();
        let mut shaft: Vec<usize> = (0..s.train.len()).filter(|&i| s.train[i].region == Region::Shaft).collect();
        let d = shaft_excess(shaft.len(), bone, cap);
        if d > 0 {
            SplitMix64::keyed(spec.seed, "shaft-drop").shuffle(&mut shaft);
            let mut drop = vec![false; s.train.len()];
            for &i in &shaft[..d] {
                drop[i] = true;
            }
            let mut k = 0;
            s.train.retain(|_| {
                k += 1;
                !drop[k - 1]
            });
        }
        s.dropped_shaft = d;
    }
    Ok(s)
}
