use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scan::dot;
use super::{similarity_to_distance, CoresetRecord, MemoryBank};
use crate::error::{Error, Result};

/// Greedy k-center (farthest point) subsampling in cosine distance.
///
/// Starts from a row drawn with `seed`, then repeatedly adds the row whose
/// distance to the selected set is largest (lowest index on ties). Rows of
/// the result appear in selection order.
pub fn coreset_reduce(bank: &MemoryBank, target: usize, seed: u64) -> Result<MemoryBank> {
    let n = bank.count();
    if target == 0 || target > n {
        return Err(Error::invalid(format!(
            "coreset target {target} outside 1..={n}"
        )));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..n);
    let order = greedy_k_center(bank, target, start);

    let dim = bank.dim();
    let mut raw = Vec::with_capacity(target * dim);
    for &i in &order {
        raw.extend_from_slice(bank.raw_row(i));
    }
    let mut meta = bank.meta().clone();
    meta.zero_replaced = 0;
    let original_count = meta.coreset.as_ref().map_or(n, |c| c.original_count);
    meta.coreset = Some(CoresetRecord {
        original_count,
        target,
        seed,
    });
    MemoryBank::from_rows(dim, raw, meta)
}

pub(crate) fn greedy_k_center(bank: &MemoryBank, target: usize, start: usize) -> Vec<usize> {
    let n = bank.count();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| bank.unit_row(i)).collect();
    let mut min_dist = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(target);
    let mut next = start;
    while order.len() < target {
        order.push(next);
        let c = &rows[next];
        for (i, r) in rows.iter().enumerate() {
            let d = similarity_to_distance(dot(c, r));
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
        min_dist[next] = f64::NEG_INFINITY;
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best.0 {
                best = (d, i);
            }
        }
        next = best.1;
    }
    order
}
