use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BipartiteGraph, Interaction};
use crate::error::{Error, Result};

/// Per-user train/test partition of the filtered positives.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: BipartiteGraph,
    /// Sorted held-out items per user; may be empty for some users.
    pub test_positives: Vec<Vec<u32>>,
    pub split_seed: u64,
    pub ratio: f64,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    pub fn num_test(&self) -> usize {
        self.test_positives.iter().map(Vec::len).sum()
    }
}

/// Number of training positives for a user with `n` positives.
pub fn train_count(n: usize, ratio: f64) -> usize {
    // the epsilon absorbs representation error such as 0.3 * 10 = 3.0000000000000004
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Uniformly random per-user partition with `ceil(ratio * n)` positives to train.
///
/// Dense indices follow first appearance in `interactions`. Every user must
/// have at least two interactions.
pub fn split_per_user(interactions: &[Interaction], ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1]")));
    }
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut users: HashMap<&str, u32> = HashMap::new();
    let mut items: HashMap<&str, u32> = HashMap::new();
    let mut positives: Vec<Vec<u32>> = Vec::new();
    for it in interactions {
        let u = *users.entry(&it.user).or_insert_with(|| {
            user_keys.push(it.user.clone());
            positives.push(Vec::new());
            (user_keys.len() - 1) as u32
        });
        let i = *items.entry(&it.item).or_insert_with(|| {
            item_keys.push(it.item.clone());
            (item_keys.len() - 1) as u32
        });
        positives[u as usize].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(positives.len());
    let mut test = Vec::with_capacity(positives.len());
    for (u, mut list) in positives.into_iter().enumerate() {
        list.sort_unstable();
        list.dedup();
        if list.len() < 2 {
            return Err(Error::Data(format!(
                "user `{}` has {} interaction(s); splitting needs at least 2",
                user_keys[u],
                list.len()
            )));
        }
        list.shuffle(&mut rng);
        let k = train_count(list.len(), ratio);
        let mut held = list.split_off(k);
        list.sort_unstable();
        held.sort_unstable();
        train.push(list);
        test.push(held);
    }

    Ok(SplitDataset {
        train: BipartiteGraph::from_parts(user_keys, item_keys, train)?,
        test_positives: test,
        split_seed: seed,
        ratio,
    })
}
