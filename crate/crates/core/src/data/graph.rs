use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// Users, items, and the observed edges between them.
///
/// Users and items carry dense indices `0..M` and `0..N`; the external keys
/// are kept so results can be reported in the input's vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_lookup: HashMap<String, u32>,
    item_lookup: HashMap<String, u32>,
    positives: Vec<Vec<u32>>,
}

impl BipartiteGraph {
    /// Validates and assembles a graph. Each user's positive list is sorted and
    /// must be nonempty; item indices must be below `item_keys.len()`.
    pub fn from_parts(user_keys: Vec<String>, item_keys: Vec<String>, mut positives: Vec<Vec<u32>>) -> Result<Self> {
        if positives.len() != user_keys.len() {
            return Err(Error::Data(format!(
                "{} users but {} positive lists",
                user_keys.len(),
                positives.len()
            )));
        }
        let n = item_keys.len();
        for (u, list) in positives.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(Error::Data(format!("user `{}` has no positives", user_keys[u])));
            }
            if let Some(&bad) = list.iter().find(|&&i| i as usize >= n) {
                return Err(Error::Data(format!("item index {bad} out of range (N = {n})")));
            }
        }
        let user_lookup = index_keys(&user_keys)?;
        let item_lookup = index_keys(&item_keys)?;
        Ok(Self {
            user_keys,
            item_keys,
            user_lookup,
            item_lookup,
            positives,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Sorted positive items of `user`.
    pub fn positives(&self, user: usize) -> &[u32] {
        &self.positives[user]
    }

    pub fn all_positives(&self) -> &[Vec<u32>] {
        &self.positives
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.positives[user].binary_search(&item).is_ok()
    }

    pub fn user_key(&self, user: usize) -> &str {
        &self.user_keys[user]
    }

    pub fn item_key(&self, item: usize) -> &str {
        &self.item_keys[item]
    }

    pub fn user_keys(&self) -> &[String] {
        &self.user_keys
    }

    pub fn item_keys(&self) -> &[String] {
        &self.item_keys
    }

    pub fn user_index(&self, key: &str) -> Option<usize> {
        self.user_lookup.get(key).map(|&i| i as usize)
    }

    pub fn item_index(&self, key: &str) -> Option<usize> {
        self.item_lookup.get(key).map(|&i| i as usize)
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items()];
        for list in &self.positives {
            for &i in list {
                deg[i as usize] += 1;
            }
        }
        deg
    }
}

fn index_keys(keys: &[String]) -> Result<HashMap<String, u32>> {
    let mut map = HashMap::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        if map.insert(k.clone(), i as u32).is_some() {
            return Err(Error::Data(format!("duplicate key `{k}`")));
        }
    }
    Ok(map)
}

/// Symmetric normalised adjacency `D^{-1/2} A D^{-1/2}` over `M + N` vertices.
///
/// Users occupy rows `0..M`, items `M..M+N`. A zero-degree vertex gets an
/// all-zero row and column.
pub fn build_laplacian(graph: &BipartiteGraph) -> Result<SparseMatrix> {
    let m = graph.num_users();
    let n = graph.num_items();
    if m + n == 0 {
        return Err(Error::Data("cannot build a Laplacian for an empty graph".into()));
    }
    let item_deg = graph.item_degrees();
    let mut triplets = Vec::with_capacity(2 * graph.num_interactions());
    for u in 0..m {
        let du = graph.positives(u).len() as f64;
        for &i in graph.positives(u) {
            let di = item_deg[i as usize] as f64;
            let v = 1.0 / (du.sqrt() * di.sqrt());
            triplets.push((u, m + i as usize, v));
            triplets.push((m + i as usize, u, v));
        }
    }
    SparseMatrix::from_triplets(m + n, m + n, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn single_edge() {
        let g = BipartiteGraph::from_parts(keys("u", 1), keys("i", 1), vec![vec![0]]).unwrap();
        let l = build_laplacian(&g).unwrap().to_dense();
        assert_eq!(l.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn star_with_two_items() {
        let g = BipartiteGraph::from_parts(keys("u", 1), keys("i", 2), vec![vec![0, 1]]).unwrap();
        let l = build_laplacian(&g).unwrap();
        let expect = 1.0 / 2f64.sqrt();
        assert_eq!(l.get(0, 1), expect);
        assert_eq!(l.get(0, 2), expect);
        assert_eq!(l.get(2, 0), expect);
        assert!((expect - 0.70711).abs() < 1e-5);
        assert_eq!(l.get(1, 2), 0.0);
    }

    #[test]
    fn isolated_item_row_and_column_are_zero() {
        let g = BipartiteGraph::from_parts(keys("u", 1), keys("i", 2), vec![vec![0]]).unwrap();
        let l = build_laplacian(&g).unwrap().to_dense();
        for k in 0..3 {
            assert_eq!(l.get(2, k), 0.0);
            assert_eq!(l.get(k, 2), 0.0);
        }
    }

    #[test]
    fn rejects_bad_parts() {
        assert!(BipartiteGraph::from_parts(keys("u", 1), keys("i", 1), vec![vec![3]]).is_err());
        assert!(BipartiteGraph::from_parts(keys("u", 1), keys("i", 1), vec![vec![]]).is_err());
        assert!(BipartiteGraph::from_parts(vec!["a".into(), "a".into()], keys("i", 1), vec![vec![0], vec![0]]).is_err());
    }
}
