use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One user's scored impressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub user_id: u32,
    /// `(score, label)` with label 0 or 1.
    pub pairs: Vec<(f64, u8)>,
}

impl ScoredGroup {
    pub fn new(user_id: u32, pairs: Vec<(f64, u8)>) -> Self {
        Self { user_id, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half. `None` when only one class is present.
pub fn auc(pairs: &[(f64, u8)]) -> Option<f64> {
    let pos = pairs.iter().filter(|p| p.1 != 0).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, u8)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the positive midrank sum keeps everything in integers.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u64;
        let tied_pos = sorted[i..j].iter().filter(|p| p.1 != 0).count() as u64;
        twice_rank_sum += twice_mid * tied_pos;
        i = j;
    }
    let pos = pos as u64;
    let twice_correct = twice_rank_sum - pos * (pos + 1);
    Some(twice_correct as f64 / (2 * pos * neg as u64) as f64)
}

/// Impression-weighted mean of per-user AUC over users whose AUC is defined.
pub fn gauc(groups: &[ScoredGroup]) -> Result<f64> {
    let mut order: Vec<&ScoredGroup> = groups.iter().collect();
    order.sort_by_key(|g| g.user_id);
    let mut num = 0.0;
    let mut den = 0usize;
    for g in order {
        if let Some(a) = auc(&g.pairs) {
            num += g.len() as f64 * a;
            den += g.len();
        }
    }
    if den == 0 {
        return Err(Error::MetricUndefined(
            "no user has both a click and a non-click".into(),
        ));
    }
    Ok(num / den as f64)
}

/// Buckets parallel `(user, score, label)` columns into per-user groups, sorted by user.
pub fn group_by_user(users: &[u32], scores: &[f64], labels: &[u8]) -> Vec<ScoredGroup> {
    let mut map: BTreeMap<u32, Vec<(f64, u8)>> = BTreeMap::new();
    for ((&u, &s), &l) in users.iter().zip(scores).zip(labels) {
        map.entry(u).or_default().push((s, l));
    }
    map.into_iter().map(|(u, p)| ScoredGroup::new(u, p)).collect()
}
