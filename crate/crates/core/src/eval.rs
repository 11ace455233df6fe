//! Ranking metrics over held-out positives: Recall@K, MAP@K and NDCG@K.

use crate::binindex::{topk, topk_scored, PackedCodes};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::dense::dot;
use crate::numerics::DenseMatrix;

/// `|top-K ∩ relevant| / |relevant|`. `relevant` must be sorted and non-empty.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with a `log2(r + 1)` discount, normalised by the ideal
/// list of `min(K, |relevant|)` hits.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Average precision at K, normalised by `min(K, |relevant|)`.
pub fn map_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    let norm = k.min(relevant.len());
    if norm == 0 {
        0.0
    } else {
        sum / norm as f64
    }
}

/// Something that ranks a user's candidate items.
pub enum Scorer<'a> {
    Packed { users: &'a PackedCodes, items: &'a PackedCodes },
    Real { users: &'a DenseMatrix, items: &'a DenseMatrix },
}

impl Scorer<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            Scorer::Packed { users, items } => (users.rows(), items.rows()),
            Scorer::Real { users, items } => (users.rows(), items.rows()),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            Scorer::Packed { users, items } => users.d() == items.d(),
            Scorer::Real { users, items } => users.cols() == items.cols(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data("user and item representations have different widths".into()))
        }
    }

    /// The `k` best items for `user`, skipping the sorted `exclude` list.
    pub fn rank(&self, user: usize, k: usize, exclude: &[u32]) -> Result<Vec<u32>> {
        match self {
            Scorer::Packed { users, items } => Ok(topk(users.row(user), items, k, exclude)?.items()),
            Scorer::Real { users, items } => {
                let u = users.row(user);
                let scores = (0..items.rows() as u32)
                    .filter(|i| exclude.binary_search(i).is_err())
                    .map(|i| (i, dot(u, items.row(i as usize))));
                Ok(topk_scored(scores, k)?.items())
            }
        }
    }
}

/// Averages over users with a non-empty test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub recall: f64,
    pub map: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    /// Users left out of the averages because they have no held-out items.
    pub users_skipped: usize,
}

impl EvalReport {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("K", self.k)
            .set("recall", self.recall)
            .set("map", self.map)
            .set("ndcg", self.ndcg)
            .set("users_evaluated", self.users_evaluated)
            .set("users_skipped", self.users_skipped);
        kv
    }

    pub const CSV_HEADER: &'static str = "dataset,model,seed,K,recall,map,ndcg";

    pub fn csv_row(&self, dataset: &str, model: &str, seed: u64) -> String {
        format!(
            "{dataset},{model},{seed},{},{:.6},{:.6},{:.6}",
            self.k, self.recall, self.map, self.ndcg
        )
    }
}

/// Ranks all items minus each user's training positives once at the largest
/// cutoff and scores every cutoff in `ks` from that list.
pub fn evaluate_many(scorer: &Scorer, split: &SplitDataset, ks: &[usize]) -> Result<Vec<EvalReport>> {
    scorer.check()?;
    if scorer.shape() != (split.num_users(), split.num_items()) {
        return Err(Error::Data(format!(
            "scorer covers {:?} users x items, split has {}x{}",
            scorer.shape(),
            split.num_users(),
            split.num_items()
        )));
    }
    let kmax = match ks.iter().max() {
        Some(&k) if !ks.contains(&0) => k,
        _ => return Err(Error::Config("cutoffs must be non-empty and >= 1".into())),
    };
    let mut sums = vec![[0.0f64; 3]; ks.len()];
    let mut evaluated = 0;
    for (user, relevant) in split.test_positives.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        evaluated += 1;
        let ranked = scorer.rank(user, kmax, split.train.positives(user))?;
        for (s, &k) in sums.iter_mut().zip(ks) {
            s[0] += recall_at_k(&ranked, relevant, k);
            s[1] += map_at_k(&ranked, relevant, k);
            s[2] += ndcg_at_k(&ranked, relevant, k);
        }
    }
    let avg = |v: f64| if evaluated == 0 { 0.0 } else { v / evaluated as f64 };
    Ok(ks
        .iter()
        .zip(&sums)
        .map(|(&k, s)| EvalReport {
            k,
            recall: avg(s[0]),
            map: avg(s[1]),
            ndcg: avg(s[2]),
            users_evaluated: evaluated,
            users_skipped: split.num_users() - evaluated,
        })
        .collect())
}

pub fn evaluate(scorer: &Scorer, split: &SplitDataset, k: usize) -> Result<EvalReport> {
    Ok(evaluate_many(scorer, split, &[k])?.remove(0))
}
