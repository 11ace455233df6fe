use rand::seq::index::sample;
use rand::Rng;

use crate::data::BipartiteGraph;

/// `(user, observed item, unobserved item)`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Draws one item uniformly from the complement of `user`'s positives, or
/// `None` when the user owns every item.
pub fn sample_negative<R: Rng + ?Sized>(graph: &BipartiteGraph, user: usize, rng: &mut R) -> Option<u32> {
    let n = graph.num_items();
    let pos = graph.positives(user);
    if pos.len() >= n {
        return None;
    }
    // rank-select over the complement: draw r in [0, N - |I+|) and skip past positives
    let mut r = rng.random_range(0..(n - pos.len()) as u32);
    for &p in pos {
        if p <= r {
            r += 1;
        } else {
            break;
        }
    }
    Some(r)
}

/// One triple per (user, training positive), negatives uniform over each user's complement.
/// Users that own every item are skipped with a warning.
pub fn sample_bpr_epoch<R: Rng + ?Sized>(graph: &BipartiteGraph, rng: &mut R) -> Vec<BprTriple> {
    let mut out = Vec::with_capacity(graph.num_interactions());
    for u in 0..graph.num_users() {
        for &p in graph.positives(u) {
            match sample_negative(graph, u, rng) {
                Some(neg) => out.push(BprTriple {
                    user: u as u32,
                    pos: p,
                    neg,
                }),
                None => {
                    log::warn!("user `{}` has no unobserved items; skipped", graph.user_key(u));
                    break;
                }
            }
        }
    }
    out
}

/// Up to `count` distinct negatives for `user`, uniformly without replacement, sorted.
pub fn sample_negatives_distinct<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    user: usize,
    count: usize,
    rng: &mut R,
) -> Vec<u32> {
    let pos = graph.positives(user);
    let pool = graph.num_items() - pos.len();
    let count = count.min(pool);
    let mut ranks: Vec<u32> = sample(rng, pool, count).into_iter().map(|r| r as u32).collect();
    ranks.sort_unstable();
    // map complement ranks to item ids in one merge pass
    let mut out = Vec::with_capacity(count);
    let mut skipped = 0u32;
    let mut pi = 0;
    for r in ranks {
        while pi < pos.len() && pos[pi] <= r + skipped {
            skipped += 1;
            pi += 1;
        }
        out.push(r + skipped);
    }
    out
}
