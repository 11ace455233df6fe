use binrec::binindex::{bench, dot_binary, topk, topk_dense, topk_scored, DenseF32, PackedCodes};
use binrec::numerics::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_signs(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * d).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    DenseMatrix::from_vec(rows, d, data).unwrap()
}

fn dense_dot(a: &[f64], b: &[f64]) -> i32 {
    a.iter().zip(b).map(|(x, y)| (x * y) as i32).sum()
}

#[test]
fn round_trip_1000_rows_d192() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_signs(1000, 192, &mut rng);
    let packed = PackedCodes::pack(&x).unwrap();
    assert_eq!(packed.words_per_row(), 3);
    assert_eq!(packed.unpack(), x);
}

#[test]
fn exhaustive_small_d() {
    for d in 1..=8usize {
        let all: Vec<Vec<f64>> = (0..1u32 << d)
            .map(|m| (0..d).map(|b| if m >> b & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        let packed = PackedCodes::pack(&DenseMatrix::from_rows(&all).unwrap()).unwrap();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let got = dot_binary(packed.row(i), packed.row(j), d).unwrap();
                assert_eq!(got, dense_dot(a, b));
            }
        }
    }
}

#[test]
fn exhaustive_d16_against_fixed_partners() {
    // every one of the 2^16 codes against a handful of partners
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let partners = random_signs(4, d, &mut rng);
    let pp = PackedCodes::pack(&partners).unwrap();
    for m in 0..1u64 << d {
        let a: Vec<f64> = (0..d).map(|b| if m >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
        for p in 0..4 {
            assert_eq!(dot_binary(&[m], pp.row(p), d).unwrap(), dense_dot(&a, partners.row(p)));
        }
    }
}

#[test]
fn topk_matches_full_sort_oracle_n500() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items = random_signs(500, 128, &mut rng);
    let user = random_signs(1, 128, &mut rng);
    let pi = PackedCodes::pack(&items).unwrap();
    let pu = PackedCodes::pack(&user).unwrap();
    let mut oracle: Vec<(u32, i32)> = (0..500).map(|i| (i as u32, dense_dot(user.row(0), items.row(i)))).collect();
    oracle.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    oracle.truncate(10);
    assert_eq!(topk(pu.row(0), &pi, 10, &[]).unwrap().entries, oracle);
}

#[test]
fn topk_1000_random_instances_with_ties_and_exclusions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        // small d forces many ties
        let d = rng.random_range(1..=12);
        let n = rng.random_range(1..=60);
        let k = rng.random_range(1..=70);
        let items = random_signs(n, d, &mut rng);
        let user = random_signs(1, d, &mut rng);
        let exclude: Vec<u32> = (0..n as u32).filter(|_| rng.random_bool(0.2)).collect();
        let pi = PackedCodes::pack(&items).unwrap();
        let pu = PackedCodes::pack(&user).unwrap();
        let mut oracle: Vec<(u32, i32)> = (0..n)
            .filter(|i| !exclude.contains(&(*i as u32)))
            .map(|i| (i as u32, dense_dot(user.row(0), items.row(i))))
            .collect();
        oracle.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        oracle.truncate(k);
        assert_eq!(topk(pu.row(0), &pi, k, &exclude).unwrap().entries, oracle);

        let dense = topk_dense(
            &user.row(0).iter().map(|&v| v as f32).collect::<Vec<_>>(),
            &DenseF32::from_matrix(&items),
            k,
            &exclude,
        )
        .unwrap();
        assert_eq!(dense.items(), oracle.iter().map(|e| e.0).collect::<Vec<_>>());

        let scored = topk_scored(oracle.iter().rev().map(|&(i, s)| (i, s as f64)), k).unwrap();
        assert_eq!(scored.items(), oracle.iter().map(|e| e.0).collect::<Vec<_>>());
    }
}

#[test]
fn bench_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let users = PackedCodes::pack(&random_signs(8, 48, &mut rng)).unwrap();
    let items = PackedCodes::pack(&random_signs(300, 48, &mut rng)).unwrap();
    let r = bench(&users, &items, 20, 2).unwrap();
    assert!(r.valid && r.identical);
    assert!(r.qps_binary > 0.0 && r.qps_dense > 0.0);
    assert_eq!(r.to_kv().get("d"), Some("48"));
}

fn sign_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { -1.0 }), d)
}

fn pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (sign_vec(d), sign_vec(d))
}

proptest! {
    #[test]
    fn dot_matches_dense_symmetric_and_parity(
        (a, b) in prop::sample::select(vec![64usize, 128, 192, 48, 13]).prop_flat_map(pair)
    ) {
        let d = a.len();
        let m = DenseMatrix::from_rows(&[a.clone(), b.clone()]).unwrap();
        let p = PackedCodes::pack(&m).unwrap();
        let ab = dot_binary(p.row(0), p.row(1), d).unwrap();
        prop_assert_eq!(ab, dense_dot(&a, &b));
        prop_assert_eq!(ab, dot_binary(p.row(1), p.row(0), d).unwrap());
        prop_assert_eq!((ab - d as i32).rem_euclid(2), 0);
    }

    #[test]
    fn pack_unpack_identity(rows in 1usize..6, d in 1usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_signs(rows, d, &mut rng);
        prop_assert_eq!(PackedCodes::pack(&x).unwrap().unpack(), x);
    }
}
