//! Binary-code student: tanh-relaxed codes trained on BPR, listwise
//! distillation from the frozen teacher, and two penalties that push the
//! relaxed codes towards the corners of the hypercube.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binindex::{BinaryCodeMatrix, PackedCodes};
use crate::data::{sample_negative, sample_negatives_distinct, BipartiteGraph, BprTriple, SplitDataset};
use crate::error::{Error, Result};
use crate::numerics::{softmax_into, AdamState, DenseMatrix, Tape, Var};
use crate::teacher::{bpr_loss, grad_norms, Hyperparams, TeacherEmbeddings};

/// Unconstrained pre-activations; the relaxed codes are `tanh(P)`, `tanh(Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentParams {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
}

impl StudentParams {
    /// `P = atanh(clamp(U / max|U|, ±0.99))`, likewise `Q` from `V`.
    pub fn from_teacher(teacher: &TeacherEmbeddings) -> Self {
        Self {
            p: init_from(&teacher.users),
            q: init_from(&teacher.items),
        }
    }

    pub fn d(&self) -> usize {
        self.p.cols()
    }
}

fn init_from(m: &DenseMatrix) -> DenseMatrix {
    let scale = m.max_abs();
    if scale == 0.0 {
        return DenseMatrix::zeros(m.rows(), m.cols());
    }
    m.map(|v| (v / scale).clamp(-0.99, 0.99).atanh())
}

/// Elementwise `tanh`.
pub fn relaxed_codes(p: &DenseMatrix) -> DenseMatrix {
    p.map(f64::tanh)
}

/// Sign codes with ties at zero mapped to +1.
pub fn binarize(p: &DenseMatrix) -> BinaryCodeMatrix {
    PackedCodes::from_signs_of(p)
}

/// Expected squared rounding noise of one relaxed entry `x`: with
/// probability `σ(x/τ)` the noise is `1 − x`, otherwise `−1 − x`.
pub fn noise_expectation(x: f64, tau: f64) -> f64 {
    // σ(1−x)² + (1−σ)(1+x)² = (1+x)² − 4xσ
    (1.0 + x) * (1.0 + x) - 4.0 * x * crate::numerics::sigmoid(x / tau)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("noise temperature tau = {tau} must be > 0")))
    }
}

/// `Σ E‖ε‖²` over all entries of `x`, in closed form.
pub fn noise_penalty(tape: &mut Tape, x: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let shifted = tape.affine(x, 1.0, 1.0);
    let sq = tape.square(shifted);
    let sq = tape.reduce_sum(sq);
    let z = tape.scale(x, 1.0 / tau);
    let s = tape.sigmoid(z);
    let xs = tape.hadamard(x, s)?;
    let xs = tape.reduce_sum(xs);
    let xs = tape.scale(xs, -4.0);
    tape.add(sq, xs)
}

pub fn noise_penalty_value(x: &DenseMatrix, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(x.as_slice().iter().map(|&v| noise_expectation(v, tau)).sum())
}

/// `Σ_rows ‖|x| − 1‖²`: zero exactly on `{−1, +1}` entries.
pub fn corner_penalty(tape: &mut Tape, x: Var) -> Var {
    let a = tape.abs(x);
    let a = tape.affine(a, 1.0, -1.0);
    let s = tape.square(a);
    tape.reduce_sum(s)
}

pub fn corner_penalty_value(x: &DenseMatrix) -> f64 {
    x.as_slice().iter().map(|&v| (v.abs() - 1.0).powi(2)).sum()
}

/// Per-user item lists for one distillation step.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBatch {
    pub users: Vec<u32>,
    /// Training positives of each user in `users`.
    pub positives: Vec<Vec<u32>>,
    /// Distinct sampled unobserved items, as many as the user has positives.
    /// Empty only for a user who has interacted with every item.
    pub negatives: Vec<Vec<u32>>,
    pub triples: Vec<BprTriple>,
}

impl DistillBatch {
    pub fn sample<R: Rng + ?Sized>(graph: &BipartiteGraph, users: &[u32], rng: &mut R) -> Self {
        let mut batch = Self {
            users: users.to_vec(),
            positives: Vec::with_capacity(users.len()),
            negatives: Vec::with_capacity(users.len()),
            triples: Vec::new(),
        };
        for &u in users {
            let pos = graph.positives(u as usize);
            batch.positives.push(pos.to_vec());
            batch
                .negatives
                .push(sample_negatives_distinct(graph, u as usize, pos.len(), rng));
            for &p in pos {
                if let Some(neg) = sample_negative(graph, u as usize, rng) {
                    batch.triples.push(BprTriple { user: u, pos: p, neg });
                }
            }
        }
        batch
    }
}

/// Per-user listwise cross-entropy of the student's softmax under the
/// teacher's, summed over the positive lists and, separately, the negative lists.
pub fn rank_distill_loss(
    tape: &mut Tape,
    teacher: &TeacherEmbeddings,
    xp: Var,
    xq: Var,
    batch: &DistillBatch,
    temperature: f64,
) -> Result<Var> {
    let (u, v) = (&teacher.users, &teacher.items);
    if (tape.shape(xp).0, tape.shape(xq).0) != (u.rows(), v.rows()) {
        return Err(Error::shape("rank_distill_loss", tape.shape(xp), u.shape()));
    }
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    let mut offsets = vec![0usize];
    let mut targets = Vec::new();
    let mut scores = Vec::new();
    for (k, &user) in batch.users.iter().enumerate() {
        if batch.positives[k].is_empty() {
            continue;
        }
        for list in [&batch.positives[k], &batch.negatives[k]] {
            if list.is_empty() {
                continue;
            }
            scores.clear();
            scores.extend(list.iter().map(|&j| crate::numerics::dense::dot(u.row(user as usize), v.row(j as usize))));
            let start = targets.len();
            targets.resize(start + list.len(), 0.0);
            softmax_into(&scores, temperature, &mut targets[start..]);
            rows_a.extend(std::iter::repeat_n(user, list.len()));
            rows_b.extend_from_slice(list);
            offsets.push(targets.len());
        }
    }
    if targets.is_empty() {
        return Ok(tape.constant(DenseMatrix::scalar(0.0)));
    }
    let logits = tape.pair_dot(xp, xq, Arc::from(rows_a), Arc::from(rows_b))?;
    tape.segment_cross_entropy(logits, Arc::from(offsets), Arc::from(targets), temperature)
}

/// Handles to the separate terms of [`student_loss`].
#[derive(Clone, Copy, Debug)]
pub struct StudentLossTerms {
    pub total: Var,
    pub bpr: Var,
    pub rank: Var,
    pub noise: Var,
    pub corner: Var,
}

/// BPR on relaxed codes + `αT²`·distillation + `ν`·noise + `β`·corner.
///
/// `penalty_scale` multiplies the two penalties; training passes the batch's
/// share of the epoch so that one epoch applies them exactly once.
pub fn student_loss(
    tape: &mut Tape,
    p: Var,
    q: Var,
    teacher: &TeacherEmbeddings,
    batch: &DistillBatch,
    hyper: &Hyperparams,
    penalty_scale: f64,
) -> Result<StudentLossTerms> {
    let xp = tape.tanh(p);
    let xq = tape.tanh(q);
    let bpr = if batch.triples.is_empty() {
        tape.constant(DenseMatrix::scalar(0.0))
    } else {
        bpr_loss(tape, xp, xq, &batch.triples, 0.0)?
    };
    let rank = rank_distill_loss(tape, teacher, xp, xq, batch, hyper.temperature)?;
    let np = noise_penalty(tape, xp, hyper.tau)?;
    let nq = noise_penalty(tape, xq, hyper.tau)?;
    let noise = tape.add(np, nq)?;
    let cp = corner_penalty(tape, xp);
    let cq = corner_penalty(tape, xq);
    let corner = tape.add(cp, cq)?;

    let t2 = hyper.temperature * hyper.temperature;
    let weighted_rank = tape.scale(rank, hyper.alpha * t2);
    let weighted_noise = tape.scale(noise, hyper.nu * penalty_scale);
    let weighted_corner = tape.scale(corner, hyper.beta * penalty_scale);
    let total = tape.add(bpr, weighted_rank)?;
    let total = tape.add(total, weighted_noise)?;
    let total = tape.add(total, weighted_corner)?;
    Ok(StudentLossTerms {
        total,
        bpr,
        rank,
        noise,
        corner,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentCheckpoint {
    pub params: StudentParams,
    pub hyper: Hyperparams,
}

impl StudentCheckpoint {
    pub fn codes(&self) -> (BinaryCodeMatrix, BinaryCodeMatrix) {
        (binarize(&self.params.p), binarize(&self.params.q))
    }
}

#[derive(Clone, Debug)]
pub struct StudentRun {
    pub checkpoint: StudentCheckpoint,
    pub losses: Vec<f64>,
}

/// Users grouped so each group holds about `batch_size` training positives;
/// 0 puts everyone in one group.
fn user_batches(graph: &BipartiteGraph, order: &[u32], batch_size: usize) -> Vec<Vec<u32>> {
    if batch_size == 0 {
        return vec![order.to_vec()];
    }
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut load = 0;
    for &u in order {
        cur.push(u);
        load += graph.positives(u as usize).len();
        if load >= batch_size {
            out.push(std::mem::take(&mut cur));
            load = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Distils the frozen teacher into relaxed codes of width `3·dim`.
pub fn train_student(teacher: &TeacherEmbeddings, split: &SplitDataset, hyper: &Hyperparams) -> Result<StudentRun> {
    hyper.validate()?;
    let graph = &split.train;
    let d = 3 * hyper.dim;
    if teacher.users.cols() != d || teacher.items.cols() != d {
        return Err(Error::Config(format!(
            "teacher embeddings are {} wide but dim = {} needs {d}",
            teacher.users.cols(),
            hyper.dim
        )));
    }
    if teacher.users.rows() != graph.num_users() || teacher.items.rows() != graph.num_items() {
        return Err(Error::Data(format!(
            "teacher covers {} users / {} items, split has {} / {}",
            teacher.users.rows(),
            teacher.items.rows(),
            graph.num_users(),
            graph.num_items()
        )));
    }

    let mut params = StudentParams::from_teacher(teacher);
    // distinct stream from the teacher run with the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_5700_de47);
    let mut adam = AdamState::new(hyper.lr);
    let mut losses = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<u32> = (0..graph.num_users() as u32).collect();
    let total_positives = graph.num_interactions() as f64;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for users in user_batches(graph, &order, hyper.batch_size) {
            let batch = DistillBatch::sample(graph, &users, &mut rng);
            let share = users
                .iter()
                .map(|&u| graph.positives(u as usize).len())
                .sum::<usize>() as f64
                / total_positives;
            let mut tape = Tape::new();
            let p = tape.param(params.p.clone());
            let q = tape.param(params.q.clone());
            let terms = student_loss(&mut tape, p, q, teacher, &batch, hyper, share)?;
            let value = tape.scalar(terms.total);
            let g = tape.backward(terms.total)?;
            let grads = [g.get_or_zeros(p, params.p.shape()), g.get_or_zeros(q, params.q.shape())];
            if !value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "student epoch {}: loss {value}, gradient norms [{}]",
                    epoch + 1,
                    grad_norms(&grads)
                )));
            }
            adam.step(&mut [&mut params.p, &mut params.q], &grads)?;
            epoch_loss += value;
        }
        log::debug!("student epoch {} loss {epoch_loss:.6}", epoch + 1);
        // no early stop: the distillation term sits on a large entropy floor,
        // so relative loss changes say little about progress
        losses.push(epoch_loss);
    }
    Ok(StudentRun {
        checkpoint: StudentCheckpoint {
            params,
            hyper: hyper.clone(),
        },
        losses,
    })
}
