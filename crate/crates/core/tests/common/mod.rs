#![allow(dead_code)]

use binrec::data::BipartiteGraph;
use binrec::numerics::DenseMatrix;
use binrec::teacher::Hyperparams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Teacher settings for the planted 5x5 toy: a narrow model and a step size
/// large enough to move in 200 full-batch steps.
pub fn toy_teacher_hyper() -> Hyperparams {
    Hyperparams {
        dim: 8,
        lr: 0.01,
        epochs: 200,
        convergence_tol: 0.0,
        seed: 1,
        ..Hyperparams::default()
    }
}

/// Student settings for the toy; weights and temperatures keep their defaults.
pub fn toy_student_hyper() -> Hyperparams {
    Hyperparams {
        lr: 0.1,
        epochs: 8000,
        ..toy_teacher_hyper()
    }
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index of the best item for `user`, lowest index on ties, over `candidates`.
pub fn argmax_row(scores: &DenseMatrix, user: usize, candidates: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in candidates {
        if best.is_none_or(|b| scores.get(user, i) > scores.get(user, b)) {
            best = Some(i);
        }
    }
    best.expect("at least one candidate")
}

/// Random bipartite graph in which every user has at least one positive and
/// at least one unobserved item.
pub fn random_graph(m: usize, n: usize, rng: &mut ChaCha8Rng) -> BipartiteGraph {
    let positives = (0..m)
        .map(|_| {
            let mut list: Vec<u32> = (0..n as u32).filter(|_| rng.random_bool(0.5)).collect();
            if list.is_empty() {
                list.push(rng.random_range(0..n as u32));
            }
            if list.len() == n {
                list.pop();
            }
            list
        })
        .collect();
    let users = (0..m).map(|u| format!("u{u}")).collect();
    let items = (0..n).map(|i| format!("i{i}")).collect();
    BipartiteGraph::from_parts(users, items, positives).unwrap()
}

// Ranking metrics written straight from their definitions: linear scans, with
// every prefix recounted at every rank.

fn in_list(list: &[u32], x: u32) -> bool {
    list.iter().any(|&y| y == x)
}

pub fn recall_ref(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let top = &ranked[..k.min(ranked.len())];
    let mut hits = 0.0;
    for &r in relevant {
        if in_list(top, r) {
            hits += 1.0;
        }
    }
    hits / relevant.len() as f64
}

pub fn ndcg_ref(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut dcg = 0.0;
    for pos in 1..=k.min(ranked.len()) {
        if in_list(relevant, ranked[pos - 1]) {
            dcg += 1.0 / (pos as f64 + 1.0).ln() * 2f64.ln();
        }
    }
    let mut idcg = 0.0;
    for pos in 1..=k.min(relevant.len()) {
        idcg += 1.0 / (pos as f64 + 1.0).ln() * 2f64.ln();
    }
    dcg / idcg
}

pub fn map_ref(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut total = 0.0;
    for pos in 1..=k.min(ranked.len()) {
        if in_list(relevant, ranked[pos - 1]) {
            let precision = ranked[..pos].iter().filter(|&&x| in_list(relevant, x)).count() as f64 / pos as f64;
            total += precision;
        }
    }
    total / k.min(relevant.len()) as f64
}
