//! Threshold-free detection metrics over image or pixel scores.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Indices sorted by descending score; ties keep input order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Integer key ordering finite scores from high to low; `-0.0` and `0.0`
/// share a key so they tie as they compare equal.
fn descending_key(s: f64) -> u64 {
    let s = if s == 0.0 { 0.0 } else { s };
    let b = s.to_bits();
    let ascending = if b >> 63 == 1 { !b } else { b | (1 << 63) };
    !ascending
}

/// Label counts per distinct score, highest score first.
#[derive(Debug, Clone, PartialEq)]
pub struct TieGroups {
    /// `(positives, negatives)` sharing one score.
    groups: Vec<(u64, u64)>,
    n_pos: u64,
    n_neg: u64,
}

impl TieGroups {
    pub fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        check(scores, labels)?;
        let mut pairs: Vec<(u64, bool)> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| (descending_key(s), l))
            .collect();
        pairs.sort_unstable_by_key(|p| p.0);
        let mut groups: Vec<(u64, u64)> = Vec::new();
        let mut prev = None;
        for (s, l) in pairs {
            if prev != Some(s) {
                groups.push((0, 0));
                prev = Some(s);
            }
            let g = groups.last_mut().unwrap();
            if l {
                g.0 += 1;
            } else {
                g.1 += 1;
            }
        }
        let n_pos = groups.iter().map(|g| g.0).sum();
        let n_neg = groups.iter().map(|g| g.1).sum();
        Ok(Self { groups, n_pos, n_neg })
    }

    /// Probability that a random positive outscores a random negative,
    /// ties counting one half.
    pub fn auroc(&self) -> Result<f64> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::UndefinedMetric(format!(
                "AUROC needs both classes ({} positive, {} negative)",
                self.n_pos, self.n_neg
            )));
        }
        // twice the Mann-Whitney U, in exact integers
        let mut neg_below = self.n_neg as u128;
        let mut twice_u: u128 = 0;
        for &(p, n) in &self.groups {
            neg_below -= n as u128;
            twice_u += p as u128 * (2 * neg_below + n as u128);
        }
        Ok(twice_u as f64 / (2.0 * self.n_pos as f64 * self.n_neg as f64))
    }

    /// Best F1 over thresholds at every distinct score (`score >= t`).
    pub fn f1_max(&self) -> Result<f64> {
        if self.n_pos == 0 {
            return Err(Error::UndefinedMetric("F1-max needs at least one positive".into()));
        }
        let (mut tp, mut fp, mut best) = (0u64, 0u64, 0.0f64);
        for &(p, n) in &self.groups {
            tp += p;
            fp += n;
            best = best.max(2.0 * tp as f64 / (tp + fp + self.n_pos) as f64);
        }
        Ok(best)
    }
}

/// Rank-based AUROC (Mann-Whitney U); ties count 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    TieGroups::new(scores, labels)?.auroc()
}

/// Best F1 over thresholds at every distinct score, predicting positive
/// for `score >= threshold`.
pub fn f1_max(scores: &[f64], labels: &[bool]) -> Result<f64> {
    TieGroups::new(scores, labels)?.f1_max()
}

fn require_positives(labels: &[bool], what: &str) -> Result<usize> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(format!("{what} needs at least one positive")));
    }
    Ok(n_pos)
}

/// Step-rule average precision in descending score order; tied scores are
/// ranked by input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = require_positives(labels, "average precision")?;
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in descending_order(scores).iter().enumerate() {
        if labels[i] {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}
