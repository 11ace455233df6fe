use binrec::data::{planted_toy, sample_bpr_epoch};
use binrec::numerics::{grad_check, DenseMatrix, Tape, Var};
use binrec::student::{
    binarize, corner_penalty, corner_penalty_value, noise_expectation, noise_penalty, noise_penalty_value,
    rank_distill_loss, relaxed_codes, student_loss, train_student, DistillBatch,
};
use binrec::teacher::{bpr_loss, train_teacher, Hyperparams, TeacherEmbeddings};
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::{random_graph, rng, uniform};

fn sigmoid_ref(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn noise_closed_form_matches_monte_carlo() {
    let mut r = rng(10);
    let tau = 0.2;
    let x = uniform(2, 4, 0.95, &mut r);
    let closed = noise_penalty_value(&x, tau).unwrap();
    let probs: Vec<f64> = x.as_slice().iter().map(|&v| sigmoid_ref(v / tau)).collect();
    let draws = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let mut norm = 0.0;
        for (&v, &p) in x.as_slice().iter().zip(&probs) {
            let eps = if r.random_bool(p) { 1.0 - v } else { -1.0 - v };
            norm += eps * eps;
        }
        sum += norm;
        sum_sq += norm * norm;
    }
    let mean = sum / draws as f64;
    let var = sum_sq / draws as f64 - mean * mean;
    let se = (var / draws as f64).sqrt();
    println!("noise penalty: closed form {closed:.6}, Monte Carlo {mean:.6} ± {se:.6}");
    assert!((mean - closed).abs() < 3.0 * se);
}

#[test]
fn noise_corner_beats_centre_below_crossover() {
    // 4(1 − σ(1/τ)) < 1 exactly when σ(1/τ) > 3/4, i.e. τ < 1/ln 3
    let crossover = 1.0 / 3f64.ln();
    for k in 1..=90 {
        let tau = k as f64 * 0.01;
        assert!(tau < crossover);
        let centre = noise_expectation(0.0, tau);
        for corner in [1.0, -1.0] {
            assert!(noise_expectation(corner, tau) < centre, "tau {tau}");
        }
    }
    assert!((noise_expectation(1.0, crossover) - 1.0).abs() < 1e-12);
    for tau in [0.92, 0.95, 1.0] {
        assert!(noise_expectation(1.0, tau) > noise_expectation(0.0, tau), "tau {tau}");
    }
}

#[test]
fn corner_penalty_zero_on_every_corner() {
    for d in 1..=10usize {
        for mask in 0..1u32 << d {
            let row: Vec<f64> = (0..d).map(|b| if mask >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
            assert_eq!(corner_penalty_value(&DenseMatrix::from_rows(&[row]).unwrap()), 0.0);
        }
    }
}

#[test]
fn corner_penalty_positive_inside() {
    let mut r = rng(11);
    for _ in 0..10_000 {
        let d = r.random_range(1..=12);
        let x = uniform(1, d, 0.999, &mut r);
        assert!(corner_penalty_value(&x) > 0.0);
    }
}

#[test]
fn corner_penalty_lipschitz_along_paths() {
    let mut r = rng(12);
    for _ in 0..200 {
        let d = r.random_range(1..=10);
        let a = uniform(1, d, 1.0, &mut r);
        let b = uniform(1, d, 1.0, &mut r);
        let steps = 500;
        let at = |t: f64| a.zip_map(&b, |x, y| x + t * (y - x));
        let step = a.max_abs_diff(&b) / steps as f64;
        let mut prev = corner_penalty_value(&at(0.0));
        for k in 1..=steps {
            let cur = corner_penalty_value(&at(k as f64 / steps as f64));
            assert!((cur - prev).abs() <= 4.0 * d as f64 * step + 1e-12);
            prev = cur;
        }
    }
}

#[test]
fn corner_penalty_is_squared_distance_near_corners() {
    // inside the half-box around a corner, |x_i| - 1 is exactly the per-coordinate distance
    let mut r = rng(13);
    for _ in 0..10_000 {
        let d = r.random_range(1..=10);
        let y: Vec<f64> = (0..d).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let x: Vec<f64> = y.iter().map(|&c| c - c * r.random_range(0.0..0.5)).collect();
        let sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let g = corner_penalty_value(&DenseMatrix::from_rows(&[x]).unwrap());
        assert!((g - sq).abs() < 1e-12, "{g} vs {sq}");
    }
}

struct Instance {
    teacher: TeacherEmbeddings,
    batch: DistillBatch,
    p: DenseMatrix,
    q: DenseMatrix,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let graph = random_graph(4, 4, &mut r);
    let d = 9;
    let users: Vec<u32> = (0..4).collect();
    let mut batch = DistillBatch::sample(&graph, &users, &mut r);
    batch.triples = sample_bpr_epoch(&graph, &mut r);
    Instance {
        teacher: TeacherEmbeddings {
            users: uniform(4, d, 1.0, &mut r),
            items: uniform(4, d, 1.0, &mut r),
        },
        batch,
        p: uniform(4, d, 1.5, &mut r),
        q: uniform(4, d, 1.5, &mut r),
    }
}

fn check_term(name: &str, term: impl Fn(&mut Tape, Var, Var, &Instance) -> binrec::Result<Var>) {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = instance(seed);
        let report = grad_check(
            |tape, v| {
                let xp = tape.tanh(v[0]);
                let xq = tape.tanh(v[1]);
                term(tape, xp, xq, &inst)
            },
            &[inst.p.clone(), inst.q.clone()],
            1e-5,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.max_rel_error < 1e-4, "{name} seed {seed}: {}", report.max_rel_error);
    }
    println!("{name}: worst relative gradient error over 20 seeds {worst:.3e}");
}

#[test]
fn gradients_of_each_term() {
    check_term("bpr on relaxed codes", |t, xp, xq, i| bpr_loss(t, xp, xq, &i.batch.triples, 0.0));
    check_term("rank distillation", |t, xp, xq, i| rank_distill_loss(t, &i.teacher, xp, xq, &i.batch, 1.0));
    check_term("rank distillation T=2.5", |t, xp, xq, i| {
        rank_distill_loss(t, &i.teacher, xp, xq, &i.batch, 2.5)
    });
    check_term("noise penalty", |t, xp, xq, _| {
        let a = noise_penalty(t, xp, 0.2)?;
        let b = noise_penalty(t, xq, 0.2)?;
        t.add(a, b)
    });
    check_term("corner penalty", |t, xp, xq, _| {
        let a = corner_penalty(t, xp);
        let b = corner_penalty(t, xq);
        t.add(a, b)
    });
}

#[test]
fn gradient_of_full_objective() {
    let hyper = Hyperparams { dim: 3, ..Hyperparams::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = instance(seed);
        let report = grad_check(
            |tape, v| Ok(student_loss(tape, v[0], v[1], &inst.teacher, &inst.batch, &hyper, 0.7)?.total),
            &[inst.p.clone(), inst.q.clone()],
            1e-5,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {}", report.max_rel_error);
    }
    println!("full objective: worst relative gradient error over 20 seeds {worst:.3e}");
}

fn objective(inst: &Instance, hyper: &Hyperparams) -> f64 {
    let mut t = Tape::new();
    let p = t.constant(inst.p.clone());
    let q = t.constant(inst.q.clone());
    let terms = student_loss(&mut t, p, q, &inst.teacher, &inst.batch, hyper, 1.0).unwrap();
    t.scalar(terms.total)
}

#[test]
fn weights_zero_reduces_to_relaxed_bpr() {
    let inst = instance(3);
    let hyper = Hyperparams {
        dim: 3,
        alpha: 0.0,
        beta: 0.0,
        nu: 0.0,
        ..Hyperparams::default()
    };
    let mut t = Tape::new();
    let xp = t.constant(relaxed_codes(&inst.p));
    let xq = t.constant(relaxed_codes(&inst.q));
    let bpr = bpr_loss(&mut t, xp, xq, &inst.batch.triples, 0.0).unwrap();
    assert_eq!(objective(&inst, &hyper), t.scalar(bpr));
}

#[test]
fn distillation_term_is_linear_in_alpha() {
    for seed in 0..5 {
        let inst = instance(seed);
        let at = |alpha| objective(&inst, &Hyperparams { dim: 3, alpha, ..Hyperparams::default() });
        let base = at(0.0);
        let one = at(10.0) - base;
        let two = at(20.0) - base;
        assert!((two - 2.0 * one).abs() <= 1e-10 * two.abs().max(1.0), "{one} {two}");
    }
}

fn entropy_sum(inst: &Instance, temperature: f64) -> f64 {
    let (u, v) = (&inst.teacher.users, &inst.teacher.items);
    let mut h = 0.0;
    for (k, &user) in inst.batch.users.iter().enumerate() {
        for list in [&inst.batch.positives[k], &inst.batch.negatives[k]] {
            let z: Vec<f64> = list
                .iter()
                .map(|&j| (0..u.cols()).map(|c| u.get(user as usize, c) * v.get(j as usize, c)).sum::<f64>() / temperature)
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = z.iter().map(|s| (s - m).exp()).sum();
            h -= z.iter().map(|s| ((s - m).exp() / total) * ((s - m) - total.ln())).sum::<f64>();
        }
    }
    h
}

#[test]
fn cross_entropy_bounded_below_by_teacher_entropy() {
    for seed in 0..200 {
        let inst = instance(seed);
        for temperature in [0.5, 1.0, 3.0] {
            let h = entropy_sum(&inst, temperature);
            let mut t = Tape::new();
            let xp = t.constant(relaxed_codes(&inst.p));
            let xq = t.constant(relaxed_codes(&inst.q));
            let ce = rank_distill_loss(&mut t, &inst.teacher, xp, xq, &inst.batch, temperature).unwrap();
            let ce = t.scalar(ce);
            assert!(ce >= h - 1e-12, "seed {seed}: {ce} < {h}");

            let mut t = Tape::new();
            let up = t.constant(inst.teacher.users.clone());
            let vq = t.constant(inst.teacher.items.clone());
            let same = rank_distill_loss(&mut t, &inst.teacher, up, vq, &inst.batch, temperature).unwrap();
            let same = t.scalar(same);
            assert!((same - h).abs() < 1e-12, "seed {seed}: {same} vs {h}");
        }
    }
}

#[test]
fn student_training_is_deterministic() {
    let split = planted_toy();
    let th = Hyperparams { epochs: 20, ..common::toy_teacher_hyper() };
    let teacher = train_teacher(&split, &th).unwrap().checkpoint.embeddings;
    let sh = Hyperparams { epochs: 30, ..common::toy_student_hyper() };
    let a = train_student(&teacher, &split, &sh).unwrap();
    let b = train_student(&teacher, &split, &sh).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn minibatched_epoch_matches_full_objective_scale() {
    let split = planted_toy();
    let th = Hyperparams { epochs: 20, ..common::toy_teacher_hyper() };
    let teacher = train_teacher(&split, &th).unwrap().checkpoint.embeddings;
    let run = train_student(
        &teacher,
        &split,
        &Hyperparams {
            epochs: 3,
            batch_size: 2,
            ..common::toy_student_hyper()
        },
    )
    .unwrap();
    assert_eq!(run.losses.len(), 3);
    assert!(run.losses.iter().all(|l| l.is_finite() && *l > 0.0));
}

#[test]
fn binary_top1_follows_teacher_on_planted_toy() {
    let split = planted_toy();
    let teacher = train_teacher(&split, &common::toy_teacher_hyper()).unwrap().checkpoint.embeddings;
    let run = train_student(&teacher, &split, &common::toy_student_hyper()).unwrap();
    let (pc, qc) = run.checkpoint.codes();
    let binary = pc.unpack().matmul_t(&qc.unpack()).unwrap();
    let real = teacher.users.matmul_t(&teacher.items).unwrap();
    let agree = (0..5)
        .filter(|&u| common::argmax_row(&binary, u, 0..5) == common::argmax_row(&real, u, 0..5))
        .count();
    println!("binary top-1 matches the teacher for {agree}/5 users");
    assert!(agree >= 4);
}

proptest! {
    #[test]
    fn binarize_ignores_tanh(rows in 1usize..4, cols in 1usize..80, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = uniform(rows, cols, 5.0, &mut r);
        p.set(0, 0, 0.0);
        prop_assert_eq!(binarize(&p), binarize(&relaxed_codes(&p)));
    }

    #[test]
    fn taped_penalties_match_direct_sums(seed in any::<u64>(), tau in 0.01f64..3.0) {
        let mut r = rng(seed);
        let x = uniform(3, 5, 1.0, &mut r);
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let n = noise_penalty(&mut t, v, tau).unwrap();
        let c = corner_penalty(&mut t, v);
        prop_assert!((t.scalar(n) - noise_penalty_value(&x, tau).unwrap()).abs() < 1e-12);
        prop_assert!((t.scalar(c) - corner_penalty_value(&x)).abs() < 1e-12);
    }
}
