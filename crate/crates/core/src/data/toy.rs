use crate::data::{BipartiteGraph, SplitDataset};

/// Five users and five items in two planted communities.
///
/// Users 0-2 interact with items 0-2 and users 3-4 with items 3-4. Each user
/// has one community item held out for testing, so a model that recovers the
/// block structure ranks the held-out item first among its candidates.
pub fn planted_toy() -> SplitDataset {
    let users = (0..5).map(|u| format!("user{u}")).collect();
    let items = (0..5).map(|i| format!("item{i}")).collect();
    let train = vec![vec![0, 1], vec![1, 2], vec![0, 2], vec![3], vec![4]];
    let test = vec![vec![2], vec![0], vec![1], vec![4], vec![3]];
    SplitDataset {
        train: BipartiteGraph::from_parts(users, items, train).expect("static toy graph"),
        test_positives: test,
        split_seed: 0,
        ratio: 0.5,
    }
}
