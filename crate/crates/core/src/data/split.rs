use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deals label-stratified indices into `2·folds` shards. Fold `i` tests on shard
/// `2i`, validates on shard `2i+1` and trains on the rest, which gives an
/// 80/10/10 split with disjoint test shards when `folds == 5`.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds == 0 {
        return Err(Error::contract("need at least one fold"));
    }
    let shards = 2 * folds;
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < shards {
            return Err(Error::contract(format!(
                "class {class} has {} members, fewer than the {shards} shards",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); shards];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            buckets[next % shards].push(i);
            next += 1;
        }
    }
    for b in &mut buckets {
        b.sort_unstable();
    }

    Ok((0..folds)
        .map(|f| {
            let test = 2 * f;
            let val = (test + 1) % shards;
            let mut train: Vec<usize> = buckets
                .iter()
                .enumerate()
                .filter(|(s, _)| *s != test && *s != val)
                .flat_map(|(_, b)| b.iter().copied())
                .collect();
            train.sort_unstable();
            Fold {
                train,
                val: buckets[val].clone(),
                test: buckets[test].clone(),
            }
        })
        .collect())
}

/// Stratified folds over the dataset's stratification task.
pub fn stratified_kfold(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    stratified_folds(&dataset.stratify_labels()?, folds, seed)
}
