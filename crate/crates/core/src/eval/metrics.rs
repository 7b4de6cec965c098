use serde::{Deserialize, Serialize};

use crate::data::{PoiId, UserId};
use crate::error::{Error, Result};

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}

/// 1-based rank of `truth` under descending score, ties broken by ascending POI id.
pub fn rank_of(scores: &[f64], truth: PoiId) -> usize {
    let s = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < truth))
        .count()
}

/// The `k` best POIs under descending score, ties broken by ascending POI id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<PoiId> {
    let mut ids: Vec<PoiId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

pub fn recall_at_k(ranked: &[PoiId], truth: PoiId, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(if ranked.iter().take(k).any(|&p| p == truth) { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(ranked: &[PoiId], truth: PoiId, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(ranked
        .iter()
        .take(k)
        .position(|&p| p == truth)
        .map_or(0.0, |i| 1.0 / ((i + 2) as f64).log2()))
}

/// Recall and NDCG from a 1-based rank, without materializing the ranking.
pub fn metrics_from_rank(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: UserId,
    pub instances: usize,
    pub rate: f64,
    pub zero_shot: bool,
    pub metrics: Vec<AtK>,
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub instances: usize,
    pub zero_shot_users: usize,
    /// Means over all evaluated instances.
    pub metrics: Vec<AtK>,
    pub per_user: Vec<UserMetrics>,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Accumulates per-instance metrics for a fixed list of cutoffs.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    ks: Vec<usize>,
    recall: Vec<f64>,
    ndcg: Vec<f64>,
    count: usize,
}

impl MetricsAccumulator {
    pub fn new(ks: &[usize]) -> Result<Self> {
        if ks.is_empty() {
            return Err(Error::InvalidConfig("at least one cutoff K is required".into()));
        }
        for &k in ks {
            check_k(k)?;
        }
        Ok(MetricsAccumulator {
            ks: ks.to_vec(),
            recall: vec![0.0; ks.len()],
            ndcg: vec![0.0; ks.len()],
            count: 0,
        })
    }

    pub fn add_scores(&mut self, scores: &[f64], truth: PoiId) {
        let rank = rank_of(scores, truth);
        for (i, &k) in self.ks.iter().enumerate() {
            let (r, n) = metrics_from_rank(rank, k);
            self.recall[i] += r;
            self.ndcg[i] += n;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        for i in 0..self.ks.len() {
            self.recall[i] += other.recall[i];
            self.ndcg[i] += other.ndcg[i];
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn means(&self) -> Vec<AtK> {
        let n = self.count.max(1) as f64;
        self.ks
            .iter()
            .enumerate()
            .map(|(i, &k)| AtK {
                k,
                recall: self.recall[i] / n,
                ndcg: self.ndcg[i] / n,
            })
            .collect()
    }
}
