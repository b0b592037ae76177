//! Exact maximum-inner-product scan over unit vectors.
//!
//! Rows are packed into panels of [`LANES`] rows stored dimension-major so
//! the inner loop is a broadcast-multiply-add over contiguous lanes. Dot
//! products always accumulate over dimensions in index order, so every
//! value is bitwise identical to a plain sequential loop and independent of
//! how queries are partitioned across threads.

use rayon::prelude::*;

pub(crate) const LANES: usize = 8;
const QUERY_GROUP: usize = 4;
const TILE_BYTES: usize = 32 * 1024;
const QUERY_CHUNK: usize = 64;

/// L2-normalizes `v` in f64. Returns `None` for the zero vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| x as f64 / norm).collect())
}

pub fn normalize_f64(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[derive(Debug, Clone)]
pub(crate) struct UnitPanel {
    dim: usize,
    count: usize,
    blocks: Vec<f64>,
}

impl UnitPanel {
    pub fn from_rows(rows: &[f64], dim: usize) -> Self {
        let count = rows.len() / dim;
        let n_blocks = count.div_ceil(LANES);
        let mut blocks = vec![0.0; n_blocks * dim * LANES];
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            let (b, lane) = (i / LANES, i % LANES);
            let base = b * dim * LANES;
            for (d, &v) in row.iter().enumerate() {
                blocks[base + d * LANES + lane] = v;
            }
        }
        // pad the last block with copies of the final row so lane maxima
        // never see a spurious zero dot product
        if count % LANES != 0 {
            let b = count / LANES;
            let base = b * dim * LANES;
            for lane in count % LANES..LANES {
                for d in 0..dim {
                    blocks[base + d * LANES + lane] = rows[(count - 1) * dim + d];
                }
            }
        }
        Self { dim, count, blocks }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn n_blocks(&self) -> usize {
        self.count.div_ceil(LANES)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let (b, lane) = (i / LANES, i % LANES);
        let base = b * self.dim * LANES;
        (0..self.dim)
            .map(|d| self.blocks[base + d * LANES + lane])
            .collect()
    }

    fn tile_blocks(&self) -> usize {
        (TILE_BYTES / (self.dim * LANES * 8)).max(1)
    }

    /// Dot products of up to [`QUERY_GROUP`] queries against block `b`.
    ///
    /// `queries` holds `QUERY_GROUP` rows of `dim` values (zero padded).
    #[inline(always)]
    pub fn block_dots(&self, queries: &[f64], b: usize) -> [[f64; LANES]; QUERY_GROUP] {
        let dim = self.dim;
        let blk = &self.blocks[b * dim * LANES..(b + 1) * dim * LANES];
        let mut acc = [[0f64; LANES]; QUERY_GROUP];
        for d in 0..dim {
            let lanes: &[f64; LANES] = blk[d * LANES..(d + 1) * LANES].try_into().unwrap();
            for (q, a) in acc.iter_mut().enumerate() {
                let qv = queries[q * dim + d];
                for l in 0..LANES {
                    a[l] += qv * lanes[l];
                }
            }
        }
        acc
    }

    pub fn valid_lanes(&self, b: usize) -> usize {
        (self.count - b * LANES).min(LANES)
    }

    fn max_dots_serial(&self, queries: &[f64], out: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { self.max_dots_avx2(queries, out) };
        }
        self.max_dots_generic(queries, out)
    }

    /// Same code built with 256-bit vectors. FMA stays disabled so every
    /// product is rounded before the add, as in the portable path.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn max_dots_avx2(&self, queries: &[f64], out: &mut [f64]) {
        self.max_dots_generic(queries, out)
    }

    /// Maximum dot product of each unit query against all rows.
    #[inline(always)]
    fn max_dots_generic(&self, queries: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        let nq = queries.len() / dim;
        let n_groups = nq.div_ceil(QUERY_GROUP);
        let mut padded = vec![0.0; n_groups * QUERY_GROUP * dim];
        padded[..queries.len()].copy_from_slice(queries);
        // per-lane running maxima; padding lanes repeat a real row
        let mut best = vec![[[f64::NEG_INFINITY; LANES]; QUERY_GROUP]; n_groups];
        let tile = self.tile_blocks();
        let n_blocks = self.n_blocks();
        let mut start = 0;
        while start < n_blocks {
            let end = (start + tile).min(n_blocks);
            for (group, bg) in padded.chunks_exact(QUERY_GROUP * dim).zip(best.iter_mut()) {
                for b in start..end {
                    let acc = self.block_dots(group, b);
                    for (m, a) in bg.iter_mut().zip(&acc) {
                        for l in 0..LANES {
                            m[l] = if a[l] > m[l] { a[l] } else { m[l] };
                        }
                    }
                }
            }
            start = end;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = best[i / QUERY_GROUP][i % QUERY_GROUP]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }

    pub fn max_dots(&self, queries: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let n = queries.len() / dim;
        let mut out = vec![0.0; n];
        if n <= QUERY_CHUNK || rayon::current_num_threads() == 1 {
            self.max_dots_serial(queries, &mut out);
        } else {
            out.par_chunks_mut(QUERY_CHUNK)
                .zip(queries.par_chunks(QUERY_CHUNK * dim))
                .for_each(|(o, q)| self.max_dots_serial(q, o));
        }
        out
    }
}
