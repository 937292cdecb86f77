use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, Provenance, RoiImage};
use crate::error::{Error, Result};

/// Fold index per source id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, source_id: &str) -> Option<usize> {
        self.folds.get(source_id).copied()
    }

    /// Source ids in fold `f`, in id order.
    pub fn members(&self, f: usize) -> Vec<&str> {
        self.folds.iter().filter(|(_, &v)| v == f).map(|(k, _)| k.as_str()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in self.folds.values() {
            s[f] += 1;
        }
        s
    }
}

/// Shuffles each class with `seed` and deals sources round-robin. The dealing
/// counter runs on across classes, which keeps fold totals within one of each
/// other as well as the per-class counts.
pub fn stratified_folds(dataset: &[RoiImage], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidArgument("fold count must be >= 1".into()));
    }
    if let Some(img) = dataset.iter().find(|i| i.provenance != Provenance::Original) {
        return Err(Error::InvalidArgument(format!(
            "folds are assigned to originals only; {} is {}",
            img.source_id, img.provenance
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut counter = 0;
    for label in Label::ALL {
        let mut ids: Vec<&str> = dataset.iter().filter(|i| i.label == label).map(|i| i.source_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < k {
            return Err(Error::Dataset(format!("class {label} has {} sources, fewer than k={k}", ids.len())));
        }
        ids.shuffle(&mut rng);
        for id in ids {
            folds.insert(id.to_string(), counter % k);
            counter += 1;
        }
    }
    Ok(FoldAssignment { k, folds })
}

/// Stratified hold-out: `⌈fraction·n_class⌉` sources of each class go to
/// validation. Returns `(train, validation)`, each sorted by id.
pub fn split_validation(
    sources: &[(String, Label)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<(String, Label)>, Vec<(String, Label)>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("validation fraction must be in (0,1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for label in Label::ALL {
        let mut ids: Vec<&String> = sources.iter().filter(|(_, l)| *l == label).map(|(s, _)| s).collect();
        ids.sort_unstable();
        if ids.len() < 2 {
            return Err(Error::Dataset(format!("class {label} has {} training sources, need at least 2", ids.len())));
        }
        ids.shuffle(&mut rng);
        let n_val = ((fraction * ids.len() as f64) - 1e-9).ceil() as usize;
        let n_val = n_val.clamp(1, ids.len() - 1);
        for (i, id) in ids.into_iter().enumerate() {
            let dst = if i < n_val { &mut val } else { &mut train };
            dst.push((id.clone(), label));
        }
    }
    train.sort();
    val.sort();
    Ok((train, val))
}
