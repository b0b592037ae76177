use image::{Rgb, RgbImage};
use patchbank::batched::{batched_run, mutual_patch_scores, tail_count, BatchedConfig};
use patchbank::eval::{auroc, average_precision, f1_max, pro, ProThresholds};
use patchbank::features::{
    decode_feature_file, encode_feature_file, preprocess_image, rotate_image, toy_extract, FeatureFileMeta,
    PreprocessConfig, PATCH_PX,
};
use patchbank::masking::{
    close_mask, compute_mask, dilate_mask, fit_pca_direction, masking_test, patch_mask, MaskPolicy, PatchMask,
};
use patchbank::memory::{build_bank, coreset_reduce, nn_distance, BankMeta};
use patchbank::scoring::{aggregate, make_map, Aggregation};
use patchbank::{AnomalyMap, PatchDistances, PatchFeatureGrid, ScoreConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::random_pro_fixture;
use super::{cos_dist, pair_auroc, prop, random_grid, rows_f64, Check};

const CASES: u32 = 128;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

fn bank_of(grids: &[PatchFeatureGrid]) -> patchbank::MemoryBank {
    build_bank(grids, BankMeta::default()).unwrap()
}

fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

// ---- features ----

pub fn preprocess_idempotent() -> Check {
    prop(
        "preprocess idempotent",
        CASES,
        (14u32..150, 14u32..150, 1u32..=5, any::<u64>()),
        |(w, h, k, seed)| {
            let img = random_image(&mut seeded(seed), w, h);
            let cfg = PreprocessConfig {
                resolution: 14 * k,
                ..PreprocessConfig::default()
            };
            let once = preprocess_image(&img, &cfg).unwrap();
            let twice = preprocess_image(&once, &cfg).unwrap();
            prop_assert!(once == twice);
            Ok(())
        },
    )
}

pub fn grid_shape_matches_image() -> Check {
    prop(
        "grid shape",
        CASES,
        (14u32..120, 14u32..120, 1u32..=4, any::<u64>()),
        |(w, h, k, seed)| {
            let img = random_image(&mut seeded(seed), w, h);
            let cfg = PreprocessConfig {
                resolution: 14 * k,
                ..PreprocessConfig::default()
            };
            let pre = preprocess_image(&img, &cfg).unwrap();
            let g = toy_extract(&pre).unwrap();
            prop_assert_eq!(
                (g.grid_h(), g.grid_w()),
                (pre.height() as usize / PATCH_PX, pre.width() as usize / PATCH_PX)
            );
            Ok(())
        },
    )
}

pub fn zero_rotation_is_identity() -> Check {
    prop("zero rotation", CASES, (1u32..6, 1u32..6, any::<u64>()), |(gw, gh, seed)| {
        let img = random_image(&mut seeded(seed), gw * 14, gh * 14);
        let rotated = rotate_image(&img, 0.0).unwrap();
        prop_assert!(toy_extract(&rotated).unwrap() == toy_extract(&img).unwrap());
        Ok(())
    })
}

pub fn feature_file_round_trip() -> Check {
    prop(
        "feature file round trip",
        CASES,
        (1usize..7, 1usize..7, 1usize..20, any::<u64>(), "[a-z0-9_]{0,12}", 0u32..=1),
        |(h, w, dim, seed, id, flags)| {
            let mut rng = seeded(seed);
            let data: Vec<f32> = (0..h * w * dim).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let grid = PatchFeatureGrid::new(h, w, dim, data, id.clone()).unwrap();
            let meta = FeatureFileMeta {
                source_id: id,
                backbone: "toy".into(),
                resolution: 14 * h as u32,
            };
            let bytes = encode_feature_file(&grid, &meta, flags);
            let back = decode_feature_file(&bytes).unwrap();
            prop_assert!(back.grid.data() == grid.data());
            prop_assert_eq!(&back.meta, &meta);
            prop_assert!(encode_feature_file(&back.grid, &back.meta, back.flags) == bytes);
            Ok(())
        },
    )
}

// ---- memory ----

pub fn nn_monotone_in_bank() -> Check {
    prop(
        "nn monotone",
        CASES,
        (1usize..40, 1usize..40, 1usize..9, any::<u64>()),
        |(n, extra, dim, seed)| {
            let mut rng = seeded(seed);
            let a = random_grid(&mut rng, 1, n, dim, false);
            let b = random_grid(&mut rng, 1, extra, dim, false);
            let p = as_f64(random_grid(&mut rng, 1, 1, dim, false).data());
            let small = nn_distance(&p, &bank_of(&[a.clone()])).unwrap();
            let large = nn_distance(&p, &bank_of(&[a, b])).unwrap();
            prop_assert!(large <= small, "{} > {}", large, small);
            Ok(())
        },
    )
}

pub fn nn_row_permutation() -> Check {
    prop("nn permutation", CASES, (1usize..60, 1usize..9, any::<u64>()), |(n, dim, seed)| {
        let mut rng = seeded(seed);
        let g = random_grid(&mut rng, 1, n, dim, false);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let data: Vec<f32> = order.iter().flat_map(|&i| g.patch(i).to_vec()).collect();
        let shuffled = PatchFeatureGrid::new(1, n, dim, data, "s").unwrap();
        let p = as_f64(random_grid(&mut rng, 1, 1, dim, false).data());
        let d1 = nn_distance(&p, &bank_of(&[g])).unwrap();
        let d2 = nn_distance(&p, &bank_of(&[shuffled])).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-12);
        Ok(())
    })
}

pub fn nn_scale_invariant() -> Check {
    prop(
        "nn scale",
        CASES,
        (1usize..60, 1usize..9, -3.0f64..3.0, any::<u64>()),
        |(n, dim, log_alpha, seed)| {
            let mut rng = seeded(seed);
            let bank = bank_of(&[random_grid(&mut rng, 1, n, dim, false)]);
            let p = as_f64(random_grid(&mut rng, 1, 1, dim, false).data());
            let alpha = 10f64.powf(log_alpha);
            let scaled: Vec<f64> = p.iter().map(|x| x * alpha).collect();
            let (d1, d2) = (nn_distance(&p, &bank).unwrap(), nn_distance(&scaled, &bank).unwrap());
            prop_assert!((d1 - d2).abs() <= 1e-9);
            Ok(())
        },
    )
}

pub fn nn_range() -> Check {
    prop(
        "nn range",
        CASES,
        (1usize..60, 1usize..9, any::<bool>(), any::<u64>()),
        |(n, dim, nonneg, seed)| {
            let mut rng = seeded(seed);
            let bank = bank_of(&[random_grid(&mut rng, 1, n, dim, nonneg)]);
            let p = as_f64(random_grid(&mut rng, 1, 1, dim, nonneg).data());
            let d = nn_distance(&p, &bank).unwrap();
            let hi = if nonneg { 1.0 } else { 2.0 };
            prop_assert!((0.0..=hi).contains(&d), "{}", d);
            Ok(())
        },
    )
}

/// Chordal distance `sqrt(2 d)` is a metric on the unit sphere, so the
/// coreset distance is bounded by the full distance plus the covering
/// radius of the dropped rows.
pub fn coreset_covering_bound() -> Check {
    prop(
        "coreset bound",
        CASES,
        (2usize..60, 1usize..7, any::<u64>()),
        |(n, dim, seed)| {
            let mut rng = seeded(seed);
            let bank = bank_of(&[random_grid(&mut rng, 1, n, dim, false)]);
            let target = rng.gen_range(1..=n);
            let core = coreset_reduce(&bank, target, rng.gen()).unwrap();
            prop_assert_eq!(core.count(), target);
            let chord = |a: &[f64], b: &[f64]| (2.0 * cos_dist(a, b)).sqrt();
            let kept: Vec<Vec<f64>> = (0..core.count()).map(|i| core.unit_row(i)).collect();
            let radius = (0..bank.count())
                .map(|i| {
                    let r = bank.unit_row(i);
                    kept.iter().map(|c| chord(&r, c)).fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            for _ in 0..10 {
                let p = as_f64(random_grid(&mut rng, 1, 1, dim, false).data());
                let full = (2.0 * nn_distance(&p, &bank).unwrap()).sqrt();
                let reduced = (2.0 * nn_distance(&p, &core).unwrap()).sqrt();
                prop_assert!(reduced <= full + radius + 1e-9, "{} > {} + {}", reduced, full, radius);
            }
            Ok(())
        },
    )
}

// ---- scoring ----

fn random_distances(rng: &mut ChaCha8Rng, h: usize, w: usize, constant: bool) -> PatchDistances {
    let c = rng.gen_range(0.0..1.0);
    let values = (0..h * w).map(|_| if constant { c } else { rng.gen_range(0.0..1.0) }).collect();
    let mut excluded: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
    excluded[rng.gen_range(0..h * w)] = false;
    PatchDistances::new(h, w, values, excluded).unwrap()
}

fn cfg_for(agg: Aggregation, fraction: f64) -> ScoreConfig {
    ScoreConfig {
        aggregation: agg,
        fraction,
        ..ScoreConfig::default()
    }
}

pub fn aggregate_order_bound() -> Check {
    prop(
        "order bound",
        CASES * 2,
        (1usize..18, 1usize..18, 0.001f64..=1.0, any::<bool>(), any::<u64>()),
        |(h, w, f, constant, seed)| {
            let d = random_distances(&mut seeded(seed), h, w, constant);
            let inc = d.included_values();
            let mean = inc.iter().sum::<f64>() / inc.len() as f64;
            let max = inc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s = aggregate(&d, &cfg_for(Aggregation::MeanTopFraction, f)).unwrap();
            prop_assert!(mean - 1e-12 <= s && s <= max + 1e-12, "{} {} {}", mean, s, max);
            if constant {
                prop_assert!((s - max).abs() <= 1e-12 && (mean - max).abs() <= 1e-12);
            }
            Ok(())
        },
    )
}

pub fn aggregate_cell_permutation() -> Check {
    prop(
        "aggregate permutation",
        CASES,
        (1usize..18, 1usize..18, 0.001f64..=1.0, any::<u64>()),
        |(h, w, f, seed)| {
            let mut rng = seeded(seed);
            let d = random_distances(&mut rng, h, w, false);
            let mut order: Vec<usize> = (0..h * w).collect();
            order.shuffle(&mut rng);
            let p = PatchDistances::new(
                h,
                w,
                order.iter().map(|&i| d.values()[i]).collect(),
                order.iter().map(|&i| d.excluded()[i]).collect(),
            )
            .unwrap();
            for agg in [Aggregation::MeanTopFraction, Aggregation::MaxPatch] {
                let cfg = cfg_for(agg, f);
                prop_assert_eq!(aggregate(&d, &cfg).unwrap(), aggregate(&p, &cfg).unwrap());
            }
            Ok(())
        },
    )
}

pub fn map_max_bounded() -> Check {
    prop(
        "map max",
        CASES,
        (1usize..10, 1usize..10, 0.3f64..6.0, any::<u64>()),
        |(h, w, sigma, seed)| {
            let mut rng = seeded(seed);
            let d = random_distances(&mut rng, h, w, false);
            let (oh, ow) = (rng.gen_range(h..=h * 14), rng.gen_range(w..=w * 14));
            let cfg = ScoreConfig {
                sigma,
                ..ScoreConfig::default()
            };
            let map = make_map(&d, oh, ow, &cfg).unwrap();
            let hi = d.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(map.max_value() <= hi + 1e-9);
            Ok(())
        },
    )
}

pub fn aggregate_monotone() -> Check {
    prop(
        "aggregate monotone",
        CASES,
        (1usize..12, 1usize..12, 0.001f64..=1.0, 1e-6f64..1.0, any::<u64>()),
        |(h, w, f, delta, seed)| {
            let mut rng = seeded(seed);
            let d = random_distances(&mut rng, h, w, false);
            let inc: Vec<usize> = (0..h * w).filter(|&i| !d.excluded()[i]).collect();
            let k = inc[rng.gen_range(0..inc.len())];
            let mut v = d.values().to_vec();
            v[k] += delta;
            let up = PatchDistances::new(h, w, v, d.excluded().to_vec()).unwrap();
            for agg in [Aggregation::MeanTopFraction, Aggregation::MaxPatch, Aggregation::MaxMap] {
                let cfg = cfg_for(agg, f);
                let (a, b) = (aggregate(&d, &cfg).unwrap(), aggregate(&up, &cfg).unwrap());
                prop_assert!(b >= a, "{:?}: {} < {}", agg, b, a);
            }
            Ok(())
        },
    )
}

pub fn full_fraction_is_mean() -> Check {
    prop("fraction one", CASES, (1usize..18, 1usize..18, any::<u64>()), |(h, w, seed)| {
        let d = random_distances(&mut seeded(seed), h, w, false);
        let inc = d.included_values();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let s = aggregate(&d, &cfg_for(Aggregation::MeanTopFraction, 1.0)).unwrap();
        prop_assert!((s - mean).abs() <= 1e-12);
        Ok(())
    })
}

// ---- masking ----

fn anisotropic_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> PatchFeatureGrid {
    let scales: Vec<f32> = (0..dim).map(|_| rng.gen_range(0.1..3.0)).collect();
    let data = (0..h * w)
        .flat_map(|_| scales.iter().map(|s| s * rng.gen_range(-1.0f32..1.0) + 0.5).collect::<Vec<_>>())
        .collect();
    PatchFeatureGrid::new(h, w, dim, data, "a").unwrap()
}

fn projection_variance(rows: &[Vec<f64>], dir: &[f64]) -> f64 {
    let p: Vec<f64> = rows.iter().map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
    let m = p.iter().sum::<f64>() / p.len() as f64;
    p.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / p.len() as f64
}

pub fn pca_unit_and_maximal() -> Check {
    prop(
        "pca maximal",
        CASES,
        (2usize..9, 2usize..9, 2usize..9, any::<u64>()),
        |(h, w, dim, seed)| {
            let mut rng = seeded(seed);
            let g = anisotropic_grid(&mut rng, h, w, dim);
            let pca = fit_pca_direction(std::slice::from_ref(&g), &MaskPolicy::default()).unwrap();
            let norm = pca.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-9);
            let rows = rows_f64(&g);
            let best = projection_variance(&rows, &pca.direction);
            for _ in 0..100 {
                let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let u: Vec<f64> = u.iter().map(|x| x / n).collect();
                let v = projection_variance(&rows, &u);
                prop_assert!(best >= v - 1e-9 * (1.0 + v), "{} < {}", best, v);
            }
            Ok(())
        },
    )
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PatchMask {
    let p = rng.gen_range(0.05..0.9);
    PatchMask::new(h, w, (0..h * w).map(|_| rng.gen_bool(p)).collect()).unwrap()
}

pub fn dilation_and_closing() -> Check {
    prop(
        "morphology",
        CASES * 2,
        (1usize..13, 1usize..13, 0usize..4, any::<u64>()),
        |(h, w, r, seed)| {
            let m = random_mask(&mut seeded(seed), h, w);
            let se = 2 * r + 1;
            prop_assert!(m.is_subset_of(&dilate_mask(&m, se)));
            let c = close_mask(&m, se);
            prop_assert!(m.is_subset_of(&c));
            prop_assert_eq!(close_mask(&c, se), c);
            Ok(())
        },
    )
}

pub fn mask_scale_invariant() -> Check {
    prop(
        "mask scale",
        CASES,
        (2usize..9, 2usize..9, 2usize..9, -8i32..=8, any::<u64>()),
        |(h, w, dim, k, seed)| {
            let g = anisotropic_grid(&mut seeded(seed), h, w, dim);
            let alpha = 2f32.powi(k);
            let scaled = PatchFeatureGrid::new(h, w, dim, g.data().iter().map(|x| x * alpha).collect(), "s").unwrap();
            let policy = MaskPolicy::default();
            let a = fit_pca_direction(std::slice::from_ref(&g), &policy).unwrap();
            let b = fit_pca_direction(std::slice::from_ref(&scaled), &policy).unwrap();
            prop_assert_eq!(patch_mask(&g, &a).unwrap(), patch_mask(&scaled, &b).unwrap());
            prop_assert_eq!(compute_mask(&g, None, &policy).unwrap(), compute_mask(&scaled, None, &policy).unwrap());
            Ok(())
        },
    )
}

pub fn masking_test_depends_on_mask_only() -> Check {
    prop(
        "masking test",
        CASES,
        (1usize..13, 1usize..13, 0.1f64..=1.0, 0.1f64..=1.0, 0.1f64..=1.0, any::<u64>()),
        |(h, w, cf, cmin, gmax, seed)| {
            let m = random_mask(&mut seeded(seed), h, w);
            let policy = MaskPolicy {
                center_fraction: cf,
                center_fg_min: cmin,
                global_fg_max: gmax,
                ..MaskPolicy::default()
            };
            let rebuilt = PatchMask::new(h, w, m.bits().to_vec()).unwrap();
            let a = masking_test(&m, &policy);
            prop_assert_eq!(a, masking_test(&m, &policy));
            prop_assert_eq!(a, masking_test(&rebuilt, &policy));
            Ok(())
        },
    )
}

// ---- batched ----

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, same_shape: bool) -> Vec<PatchFeatureGrid> {
    let (h0, w0) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    (0..n)
        .map(|_| {
            let (h, w) = if same_shape { (h0, w0) } else { (rng.gen_range(1..=4), rng.gen_range(1..=4)) };
            random_grid(rng, h, w, dim, false)
        })
        .collect()
}

fn batched_cfg(alpha: f64) -> BatchedConfig {
    BatchedConfig {
        alpha,
        score: ScoreConfig::default(),
    }
}

pub fn batched_permutation_equivariance() -> Check {
    prop(
        "batched permutation",
        CASES,
        (2usize..6, 1usize..7, 0.001f64..0.5, any::<u64>()),
        |(n, dim, alpha, seed)| {
            let mut rng = seeded(seed);
            let grids = random_batch(&mut rng, n, dim, false);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<PatchFeatureGrid> = perm.iter().map(|&i| grids[i].clone()).collect();
            let base = batched_run(&grids, &batched_cfg(alpha), None).unwrap();
            let moved = batched_run(&permuted, &batched_cfg(alpha), None).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(moved[k].score, base[i].score);
                prop_assert!(moved[k].distances.values() == base[i].distances.values());
                prop_assert!(moved[k].map.values() == base[i].map.values());
            }
            Ok(())
        },
    )
}

pub fn batched_tail_bounds() -> Check {
    prop(
        "batched tail bounds",
        CASES,
        (2usize..6, 1usize..7, 0.001f64..0.8, any::<u64>()),
        |(n, dim, alpha, seed)| {
            let mut rng = seeded(seed);
            let grids = random_batch(&mut rng, n, dim, false);
            let j = rng.gen_range(0..n);
            let got = mutual_patch_scores(&grids, j, &batched_cfg(alpha), None).unwrap();
            let others: Vec<Vec<f64>> = (0..n).filter(|&k| k != j).flat_map(|k| rows_f64(&grids[k])).collect();
            let m = tail_count(alpha, others.len());
            for (i, p) in rows_f64(&grids[j]).iter().enumerate() {
                let mut d: Vec<f64> = others.iter().map(|o| cos_dist(p, o)).collect();
                d.sort_by(f64::total_cmp);
                let v = got.values()[i];
                prop_assert!(v >= d[0] - 1e-12 && v <= d[m - 1] + 1e-12, "{} not in [{}, {}]", v, d[0], d[m - 1]);
            }
            Ok(())
        },
    )
}

/// The twin contributes exact matches, so the score cannot rise as long as
/// the tail grows by at most one element (`alpha * patches <= 1`).
pub fn batched_duplicate_never_increases() -> Check {
    prop(
        "batched duplicate",
        CASES,
        (2usize..6, 1usize..7, 0.01f64..=1.0, any::<u64>()),
        |(n, dim, alpha_frac, seed)| {
            let mut rng = seeded(seed);
            let grids = random_batch(&mut rng, n, dim, true);
            let patches = grids[0].n_patches() as f64;
            let cfg = batched_cfg(alpha_frac / patches);
            let j = rng.gen_range(0..n);
            let before = batched_run(&grids, &cfg, None).unwrap();
            let mut with_twin = grids.clone();
            with_twin.push(grids[j].clone());
            let after = batched_run(&with_twin, &cfg, None).unwrap();
            prop_assert!(after[j].score <= before[j].score + 1e-12, "{} > {}", after[j].score, before[j].score);
            prop_assert_eq!(after[j].score, after[n].score);
            Ok(())
        },
    )
}

pub fn batched_single_tail_is_nn() -> Check {
    prop("batched m=1", CASES, (2usize..6, 1usize..7, any::<u64>()), |(n, dim, seed)| {
        let mut rng = seeded(seed);
        let grids = random_batch(&mut rng, n, dim, false);
        let j = rng.gen_range(0..n);
        let got = mutual_patch_scores(&grids, j, &batched_cfg(1e-9), None).unwrap();
        let others: Vec<PatchFeatureGrid> = (0..n).filter(|&k| k != j).map(|k| grids[k].clone()).collect();
        let bank = bank_of(&others);
        for (i, p) in rows_f64(&grids[j]).iter().enumerate() {
            let d = nn_distance(p, &bank).unwrap();
            prop_assert!((got.values()[i] - d).abs() <= 1e-12);
        }
        Ok(())
    })
}

// ---- eval ----

fn scores_and_labels(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let s = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 16.0).collect();
    let mut l: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    l[0] = true;
    l[n - 1] = false;
    (s, l)
}

pub fn auroc_matches_pairs() -> Check {
    prop("auroc pairs", CASES, (2usize..=200, 1u32..300, any::<u64>()), |(n, levels, seed)| {
        let (s, l) = scores_and_labels(&mut seeded(seed), n, levels);
        prop_assert!((auroc(&s, &l).unwrap() - pair_auroc(&s, &l)).abs() <= 1e-12);
        Ok(())
    })
}

pub fn auroc_negation() -> Check {
    prop("auroc negation", CASES, (2usize..=200, any::<u64>()), |(n, seed)| {
        let mut rng = seeded(seed);
        let mut s: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
        s.shuffle(&mut rng);
        let (_, l) = scores_and_labels(&mut rng, n, 2);
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

fn transform(x: f64) -> f64 {
    x.exp() + x * x * x
}

pub fn metrics_rank_invariant() -> Check {
    prop("rank invariance", CASES, (2usize..=120, 1u32..64, any::<u64>()), |(n, levels, seed)| {
        let mut rng = seeded(seed);
        let (s, l) = scores_and_labels(&mut rng, n, levels);
        let t: Vec<f64> = s.iter().map(|&x| transform(x)).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        prop_assert_eq!(f1_max(&s, &l).unwrap(), f1_max(&t, &l).unwrap());
        prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());

        let (maps, gts) = random_pro_fixture(&mut rng);
        let tmaps: Vec<AnomalyMap> = maps
            .iter()
            .map(|m| AnomalyMap::new(m.h(), m.w(), m.values().iter().map(|&x| transform(x)).collect()).unwrap())
            .collect();
        let limit = rng.gen_range(0.05..=1.0);
        let a = pro(&maps, &gts, limit, ProThresholds::Exact).unwrap();
        let b = pro(&tmaps, &gts, limit, ProThresholds::Exact).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        Ok(())
    })
}

pub fn pro_range_and_limit_monotone() -> Check {
    prop(
        "pro range",
        CASES,
        (0.01f64..=1.0, 0.01f64..=1.0, any::<bool>(), any::<u64>()),
        |(x, y, exact, seed)| {
            let (maps, gts) = random_pro_fixture(&mut seeded(seed));
            let mode = if exact { ProThresholds::Exact } else { ProThresholds::default() };
            let (lo, hi) = (x.min(y), x.max(y));
            let a = pro(&maps, &gts, lo, mode).unwrap();
            let b = pro(&maps, &gts, hi, mode).unwrap();
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            prop_assert!(a <= b + 1e-12, "{} > {}", a, b);
            Ok(())
        },
    )
}

pub const ALL: &[(&str, fn() -> Check)] = &[
    ("features: preprocess idempotent", preprocess_idempotent),
    ("features: grid shape", grid_shape_matches_image),
    ("features: zero rotation", zero_rotation_is_identity),
    ("features: feature file round trip", feature_file_round_trip),
    ("memory: monotone in bank", nn_monotone_in_bank),
    ("memory: row permutation", nn_row_permutation),
    ("memory: scale invariance", nn_scale_invariant),
    ("memory: range", nn_range),
    ("memory: coreset covering bound", coreset_covering_bound),
    ("scoring: order bound", aggregate_order_bound),
    ("scoring: cell permutation", aggregate_cell_permutation),
    ("scoring: map max", map_max_bounded),
    ("scoring: monotone", aggregate_monotone),
    ("scoring: fraction one", full_fraction_is_mean),
    ("masking: pca unit and maximal", pca_unit_and_maximal),
    ("masking: dilation and closing", dilation_and_closing),
    ("masking: scale invariance", mask_scale_invariant),
    ("masking: test depends on mask", masking_test_depends_on_mask_only),
    ("batched: permutation equivariance", batched_permutation_equivariance),
    ("batched: tail bounds", batched_tail_bounds),
    ("batched: duplicate", batched_duplicate_never_increases),
    ("batched: single tail is nn", batched_single_tail_is_nn),
    ("eval: auroc pairs", auroc_matches_pairs),
    ("eval: auroc negation", auroc_negation),
    ("eval: rank invariance", metrics_rank_invariant),
    ("eval: pro range and limit", pro_range_and_limit_monotone),
];
