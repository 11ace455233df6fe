//! Fixtures shared by the criterion benches.

use binrec::binindex::PackedCodes;
use binrec::data::{split_per_user, Interaction, SplitDataset};
use binrec::numerics::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random ±1 codes.
pub fn random_codes(rows: usize, d: usize, seed: u64) -> PackedCodes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * d).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    PackedCodes::pack(&DenseMatrix::from_vec(rows, d, data).unwrap()).unwrap()
}

/// A random implicit-feedback split where every user rates `per_user` distinct items.
pub fn random_split(users: usize, items: usize, per_user: usize, seed: u64) -> SplitDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let picked = rand::seq::index::sample(&mut rng, items, per_user.min(items - 1));
        for i in picked {
            rows.push(Interaction::new(format!("u{u}"), format!("i{i}")));
        }
    }
    split_per_user(&rows, 0.8, seed).unwrap()
}
