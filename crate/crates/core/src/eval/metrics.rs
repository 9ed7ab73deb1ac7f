//! Answer, coverage and ranking metrics plus robust summary statistics.

use std::collections::BTreeSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::enumerate::Path;

/// `(hit@1, set-F1)` of a ranked prediction against the gold set.
pub fn answer_metrics<S: AsRef<str>>(predicted: &[S], gold: &BTreeSet<String>) -> (f64, f64) {
    let Some(first) = predicted.first() else {
        return (0.0, 0.0);
    };
    let hit = if gold.contains(first.as_ref()) {
        1.0
    } else {
        0.0
    };
    let pred: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    let tp = pred.iter().filter(|p| gold.contains(**p)).count() as f64;
    if tp == 0.0 {
        return (hit, 0.0);
    }
    let precision = tp / pred.len() as f64;
    let recall = tp / gold.len() as f64;
    (hit, 2.0 * precision * recall / (precision + recall))
}

/// True when any retrieved path has the node and relation sequence of a
/// gold path.
pub fn covered(retrieved: &[Path], gold: &[Path]) -> bool {
    retrieved.iter().any(|r| gold.contains(r))
}

/// Mean of the defined per-question coverage flags.
pub fn coverage(flags: &[Option<bool>]) -> Option<f64> {
    let defined: Vec<f64> = flags
        .iter()
        .flatten()
        .map(|&c| if c { 1.0 } else { 0.0 })
        .collect();
    mean(&defined)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub map: f64,
    pub hit_at_k: f64,
}

/// Reciprocal rank of the first relevant item, average precision over the
/// relevant set, and hit@k. `None` when nothing is relevant.
pub fn rank_metrics<T: Eq + Hash>(
    ranked: &[T],
    relevant: &std::collections::HashSet<T>,
    k: usize,
) -> Option<RankMetrics> {
    if relevant.is_empty() {
        return None;
    }
    let mut first = None;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
            first.get_or_insert(i + 1);
        }
    }
    Some(RankMetrics {
        mrr: first.map_or(0.0, |r| 1.0 / r as f64),
        map: precision_sum / relevant.len() as f64,
        hit_at_k: match first {
            Some(r) if r <= k => 1.0,
            _ => 0.0,
        },
    })
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(xs: &[f64]) -> Option<f64> {
    let m = median(xs)?;
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianMad {
    pub median: f64,
    pub mad: f64,
}

impl MedianMad {
    pub fn of(xs: &[f64]) -> Option<Self> {
        Some(Self {
            median: median(xs)?,
            mad: mad(xs)?,
        })
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
