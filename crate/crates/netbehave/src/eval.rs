//! Clustering evaluation against ground truth.
//!
//! The adjusted Rand index compares two partitions of the same items: 1.0
//! means identical partitions (up to relabeling), values near 0 mean the
//! agreement is what random assignment would produce.

use std::collections::BTreeMap;

use crate::cluster::ClusterLabel;

/// Adjusted Rand index between two labelings of the same items.
///
/// Labels are opaque ids; only co-membership matters. When both partitions
/// are trivial in the same way (all items together, or all items apart) the
/// index is defined as 1.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;

    let mut contingency: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    for (&la, &lb) in a.iter().zip(b) {
        *contingency.entry((la, lb)).or_insert(0) += 1;
        *rows.entry(la).or_insert(0) += 1;
        *cols.entry(lb).or_insert(0) += 1;
    }
    let index: f64 = contingency.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = (sum_rows + sum_cols) / 2.0;
    if (max - expected).abs() < f64::EPSILON * max.max(1.0) {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Converts cluster labels into ARI-ready ids, giving every noise point its
/// own singleton id so noise is penalized rather than treated as one big
/// cluster.
pub fn labels_for_scoring(labels: &[ClusterLabel]) -> Vec<i64> {
    let mut next_noise = -1i64;
    labels
        .iter()
        .map(|&l| match l {
            ClusterLabel::Cluster(c) => c as i64,
            ClusterLabel::Noise => {
                let id = next_noise;
                next_noise -= 1;
                id
            }
        })
        .collect()
}
