//! Oracle and property checks shared by the test targets and the
//! acceptance report.
#![allow(dead_code)]

pub mod invariants;
pub mod oracles;

use patchbank::PatchFeatureGrid;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

/// Runs a property with a fixed RNG so failures reproduce.
pub fn prop<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Check {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize, nonneg: bool) -> PatchFeatureGrid {
    let lo = if nonneg { 0.0 } else { -1.0 };
    let data = (0..h * w * dim).map(|_| rng.gen_range(lo..1.0f32)).collect();
    PatchFeatureGrid::new(h, w, dim, data, "g").unwrap()
}

pub fn rows_f64(grid: &PatchFeatureGrid) -> Vec<Vec<f64>> {
    grid.patches().map(|p| p.iter().map(|&x| x as f64).collect()).collect()
}

/// `1 - cos(a, b)` clamped to `[0, 2]`, straight from the definition.
pub fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Pair-counting AUROC.
pub fn pair_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Connected components under 8-connectivity by union-find.
pub fn components(bits: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            for (dy, dx) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < h as i64 && nx >= 0 && nx < w as i64 && bits[ny as usize * w + nx as usize] {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..h * w {
        if bits[i] {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}
