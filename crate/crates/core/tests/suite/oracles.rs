use nalgebra::{DMatrix, SymmetricEigen};
use patchbank::batched::{mutual_patch_scores, BatchedConfig};
use patchbank::eval::{auroc, average_precision, f1_max, pro, GroundTruth, ProThresholds};
use patchbank::masking::{fit_pca_direction, MaskPolicy};
use patchbank::memory::{build_bank, nn_distance, score_grid, BankMeta};
use patchbank::scoring::make_map;
use patchbank::{AnomalyMap, Error, PatchDistances, PatchFeatureGrid, ScoreConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{components, cos_dist, ensure, pair_auroc, random_grid, rows_f64, Check};

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let p = rng.gen_range(0.1..0.9);
    let mut l: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
    l[0] = true;
    l[1] = false;
    l.shuffle(rng);
    l
}

pub fn auroc_pair_counting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for inst in 0..100 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64 - 0.3).collect();
        let labels = random_labels(&mut rng, n);
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = pair_auroc(&scores, &labels);
        ensure((got - want).abs() <= 1e-12, || format!("auroc instance {inst}: {got} vs {want}"))?;
    }
    Ok(())
}

fn f1_oracle(s: &[f64], l: &[bool]) -> f64 {
    let p = l.iter().filter(|&&x| x).count() as f64;
    let mut best = 0.0f64;
    for &t in s {
        let tp = s.iter().zip(l).filter(|(&v, &y)| v >= t && y).count() as f64;
        let fp = s.iter().zip(l).filter(|(&v, &y)| v >= t && !y).count() as f64;
        if tp == 0.0 {
            continue;
        }
        let (prec, rec) = (tp / (tp + fp), tp / p);
        best = best.max(2.0 * prec * rec / (prec + rec));
    }
    best
}

/// Step-rule AP with ties broken by position.
fn ap_oracle(s: &[f64], l: &[bool]) -> f64 {
    let ahead = |j: usize, i: usize| s[j] > s[i] || (s[j] == s[i] && j <= i);
    let p = l.iter().filter(|&&x| x).count() as f64;
    let mut sum = 0.0;
    for i in 0..s.len() {
        if !l[i] {
            continue;
        }
        let rank = (0..s.len()).filter(|&j| ahead(j, i)).count() as f64;
        let hits = (0..s.len()).filter(|&j| l[j] && ahead(j, i)).count() as f64;
        sum += hits / rank;
    }
    sum / p
}

fn check_all_labelings(scores: &[f64]) -> Check {
    let n = scores.len();
    for mask in 0u32..(1 << n) {
        let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let (f1, ap) = (f1_max(scores, &labels), average_precision(scores, &labels));
        if mask == 0 {
            ensure(
                matches!(f1, Err(Error::UndefinedMetric(_))) && matches!(ap, Err(Error::UndefinedMetric(_))),
                || "metrics without positives must be undefined".into(),
            )?;
            continue;
        }
        let (f1, ap) = (f1.map_err(|e| e.to_string())?, ap.map_err(|e| e.to_string())?);
        let (f1o, apo) = (f1_oracle(scores, &labels), ap_oracle(scores, &labels));
        ensure((f1 - f1o).abs() <= 1e-12, || format!("f1 {scores:?} {labels:?}: {f1} vs {f1o}"))?;
        ensure((ap - apo).abs() <= 1e-12, || format!("ap {scores:?} {labels:?}: {ap} vs {apo}"))?;
    }
    Ok(())
}

/// Every labeling of every score vector over `n` levels for `n <= 5`, and
/// every labeling of sampled score vectors up to `n = 12`.
pub fn ap_f1_enumeration() -> Check {
    for n in 1..=5usize {
        let total = n.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let v = c % n;
                    c /= n;
                    v as f64 * 0.25
                })
                .collect();
            check_all_labelings(&scores)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for n in 6..=12usize {
        for _ in 0..12 {
            let levels = rng.gen_range(1..=n);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 7.0).collect();
            check_all_labelings(&scores)?;
        }
    }
    Ok(())
}

pub fn nn_double_loop() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for inst in 0..40 {
        let rows = rng.gen_range(1..=500);
        let dim = rng.gen_range(1..=24);
        let nonneg = inst % 3 == 0;
        let bank_grid = random_grid(&mut rng, 1, rows, dim, nonneg);
        let bank = build_bank(std::slice::from_ref(&bank_grid), BankMeta::default()).map_err(|e| e.to_string())?;
        let nq = rng.gen_range(1..=64);
        let mut q = random_grid(&mut rng, 1, nq, dim, nonneg).into_data();
        // some queries coincide with bank rows
        for k in 0..nq / 4 {
            let r = rng.gen_range(0..rows);
            q[k * dim..(k + 1) * dim].copy_from_slice(bank_grid.patch(r));
        }
        let qgrid = PatchFeatureGrid::new(1, nq, dim, q, "q").unwrap();
        let brows = rows_f64(&bank_grid);
        let dists = score_grid(&qgrid, &bank, None).map_err(|e| e.to_string())?;
        for (i, p) in rows_f64(&qgrid).iter().enumerate() {
            let want = brows.iter().map(|b| cos_dist(p, b)).fold(f64::INFINITY, f64::min);
            let single = nn_distance(p, &bank).map_err(|e| e.to_string())?;
            let batch = dists.values()[i];
            ensure((single - want).abs() <= 1e-12 && (batch - want).abs() <= 1e-12, || {
                format!("nn instance {inst} query {i}: {single} / {batch} vs {want}")
            })?;
        }
    }
    Ok(())
}

pub fn mutual_double_loop() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for inst in 0..40 {
        let n = rng.gen_range(2..=5);
        let dim = rng.gen_range(1..=8);
        let grids: Vec<PatchFeatureGrid> = (0..n)
            .map(|_| {
                let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                random_grid(&mut rng, h, w, dim, false)
            })
            .collect();
        let alpha = rng.gen_range(0.001..0.6);
        let cfg = BatchedConfig {
            alpha,
            score: ScoreConfig::default(),
        };
        for j in 0..n {
            let got = mutual_patch_scores(&grids, j, &cfg, None).map_err(|e| e.to_string())?;
            let others: Vec<Vec<f64>> = (0..n).filter(|&k| k != j).flat_map(|k| rows_f64(&grids[k])).collect();
            let m = ((alpha * others.len() as f64 + 1e-9).floor() as usize).max(1);
            for (i, p) in rows_f64(&grids[j]).iter().enumerate() {
                let mut d: Vec<f64> = others.iter().map(|o| cos_dist(p, o)).collect();
                d.sort_by(f64::total_cmp);
                let want = d[..m].iter().sum::<f64>() / m as f64;
                let v = got.values()[i];
                ensure((v - want).abs() <= 1e-12, || format!("mutual instance {inst} image {j} patch {i}: {v} vs {want}"))?;
            }
        }
    }
    Ok(())
}

fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Pixel `(y, x)` of the bilinear upsampling, sampling at pixel centers
/// with cell values anchored at cell centers.
fn bilinear_at(v: &[f64], gh: usize, gw: usize, oh: usize, ow: usize, y: usize, x: usize) -> f64 {
    let src = |o: usize, n_src: usize, n_dst: usize| {
        ((o as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64)
    };
    let (sy, sx) = (src(y, gh, oh), src(x, gw, ow));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |r: usize, c: usize| v[r * gw + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

pub fn make_map_dense() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for inst in 0..30 {
        let (gh, gw) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (oh, ow) = (rng.gen_range(gh..=112), rng.gen_range(gw..=112));
        let sigma = rng.gen_range(0.5..3.0);
        let values: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = PatchDistances::dense(gh, gw, values.clone()).unwrap();
        let cfg = ScoreConfig {
            sigma,
            ..ScoreConfig::default()
        };
        let map = make_map(&d, oh, ow, &cfg).map_err(|e| e.to_string())?;
        let up: Vec<f64> = (0..oh * ow).map(|i| bilinear_at(&values, gh, gw, oh, ow, i / ow, i % ow)).collect();
        let r = (4.0 * sigma).ceil() as i64;
        let g: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let gs: f64 = g.iter().sum();
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let w = g[(dy + r) as usize] * g[(dx + r) as usize] / (gs * gs);
                        acc += w * up[reflect(y as i64 + dy, oh) * ow + reflect(x as i64 + dx, ow)];
                    }
                }
                let got = map.get(y, x);
                ensure((got - acc).abs() <= 1e-6, || {
                    format!("map instance {inst} ({gh}x{gw} -> {oh}x{ow}, sigma {sigma}) at ({y},{x}): {got} vs {acc}")
                })?;
            }
        }
    }
    Ok(())
}

/// Random orthonormal basis of R^dim.
fn random_basis(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

pub fn pca_vs_eigen() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    for inst in 0..120 {
        let dim = rng.gen_range(2..=8);
        let (h, w) = (rng.gen_range(4..=8), rng.gen_range(4..=8));
        let basis = random_basis(&mut rng, dim);
        let scales: Vec<f64> = (0..dim).map(|k| if k == 0 { 2.0 } else { rng.gen_range(0.1..1.6) }).collect();
        let offset: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let data: Vec<f32> = (0..h * w)
            .flat_map(|_| {
                let z: Vec<f64> = scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect();
                (0..dim)
                    .map(|i| (offset[i] + (0..dim).map(|k| basis[(i, k)] * z[k]).sum::<f64>()) as f32)
                    .collect::<Vec<_>>()
            })
            .collect();
        let grid = PatchFeatureGrid::new(h, w, dim, data, "p").unwrap();
        let rows = rows_f64(&grid);
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(dim, dim, |i, j| {
            rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n
        });
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        if l1 < 1.05 * l2 {
            continue;
        }
        checked += 1;
        let top = eig.eigenvectors.column(order[0]);
        let pca = fit_pca_direction(std::slice::from_ref(&grid), &MaskPolicy::default()).map_err(|e| e.to_string())?;
        let cos: f64 = pca.direction.iter().zip(top.iter()).map(|(a, b)| a * b).sum::<f64>().abs();
        ensure(cos >= 0.999, || format!("pca instance {inst}: |cos| = {cos}"))?;
    }
    ensure(checked >= 90, || format!("only {checked} PCA instances had an eigengap"))
}

fn oracle_thresholds(values: &[f64], mode: ProThresholds) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match mode {
        ProThresholds::Exact => {
            let mut v = values.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            v
        }
        ProThresholds::Uniform(n) => {
            if n == 1 || lo == hi {
                return vec![lo];
            }
            let step = (hi - lo) / (n - 1) as f64;
            let mut t: Vec<f64> = (0..n - 1).map(|i| hi - i as f64 * step).collect();
            t.push(lo);
            t
        }
    }
}

pub fn pro_oracle(maps: &[AnomalyMap], gts: &[GroundTruth], limit: f64, mode: ProThresholds) -> f64 {
    let all: Vec<f64> = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let regions: Vec<(usize, Vec<usize>)> = gts
        .iter()
        .enumerate()
        .flat_map(|(i, g)| components(g.bits(), g.h(), g.w()).into_iter().map(move |r| (i, r)))
        .collect();
    let n_neg: usize = gts.iter().map(|g| g.bits().iter().filter(|&&b| !b).count()).sum();
    let mut curve = vec![(0.0, 0.0)];
    for t in oracle_thresholds(&all, mode) {
        let mut fp = 0;
        for (m, g) in maps.iter().zip(gts) {
            for (v, b) in m.values().iter().zip(g.bits()) {
                if !b && *v >= t {
                    fp += 1;
                }
            }
        }
        let overlap: f64 = regions
            .iter()
            .map(|(i, r)| r.iter().filter(|&&p| maps[*i].values()[p] >= t).count() as f64 / r.len() as f64)
            .sum::<f64>()
            / regions.len() as f64;
        curve.push((fp as f64 / n_neg as f64, overlap));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area / limit
}

/// Random maps with ties and ground truths holding both classes.
pub fn random_pro_fixture(rng: &mut ChaCha8Rng) -> (Vec<AnomalyMap>, Vec<GroundTruth>) {
    loop {
        let n = rng.gen_range(1..=3);
        let levels = rng.gen_range(2..=40);
        let mut maps = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n {
            let (h, w) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
            let p = rng.gen_range(0.05..0.5);
            let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
            let vals = bits
                .iter()
                .map(|&b| (rng.gen_range(0..levels) + if b { levels / 3 } else { 0 }) as f64 / levels as f64)
                .collect();
            maps.push(AnomalyMap::new(h, w, vals).unwrap());
            gts.push(GroundTruth::new(h, w, bits).unwrap());
        }
        let pos = gts.iter().any(|g| g.any());
        let neg = gts.iter().any(|g| g.bits().iter().any(|&b| !b));
        if pos && neg {
            return (maps, gts);
        }
    }
}

pub fn pro_hand_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for inst in 0..150 {
        let (maps, gts) = random_pro_fixture(&mut rng);
        let limit = [0.05, 0.1, 0.3, 0.5, 1.0, rng.gen_range(0.01..1.0)][inst % 6];
        for mode in [ProThresholds::Exact, ProThresholds::Uniform(rng.gen_range(1..=60)), ProThresholds::default()] {
            let got = pro(&maps, &gts, limit, mode).map_err(|e| e.to_string())?;
            let want = pro_oracle(&maps, &gts, limit, mode);
            ensure((got - want).abs() <= 1e-9, || format!("pro instance {inst} {mode:?} limit {limit}: {got} vs {want}"))?;
        }
    }
    Ok(())
}

pub const ALL: &[(&str, fn() -> Check)] = &[
    ("auroc vs pair counting", auroc_pair_counting),
    ("ap and f1 vs enumeration", ap_f1_enumeration),
    ("nn_distance vs double loop", nn_double_loop),
    ("mutual scores vs double loop", mutual_double_loop),
    ("make_map vs dense oracle", make_map_dense),
    ("pca vs eigendecomposition", pca_vs_eigen),
    ("pro vs per-threshold oracle", pro_hand_oracle),
];
