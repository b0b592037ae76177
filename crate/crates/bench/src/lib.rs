//! Seeded fixtures shared by the benches.

use patchbank::memory::{build_bank, BankMeta};
use patchbank::{MemoryBank, PatchDistances, PatchFeatureGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> PatchFeatureGrid {
    let data = (0..h * w * dim).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    PatchFeatureGrid::new(h, w, dim, data, "bench").unwrap()
}

/// A bank of `rows` random vectors, built from 32x32 grids.
pub fn bank(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> MemoryBank {
    let grids: Vec<_> = (0..rows / 1024).map(|_| grid(rng, 32, 32, dim)).collect();
    build_bank(&grids, BankMeta::default()).unwrap()
}

pub fn distances(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PatchDistances {
    let values = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    PatchDistances::new(h, w, values, vec![false; h * w]).unwrap()
}

pub fn labeled_scores(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let scores = labels.iter().map(|&l| rng.gen_range(0.0..1.0) + if l { 0.3 } else { 0.0 }).collect();
    (scores, labels)
}
