//! Ranking metrics over next-POI predictions: Acc@k and MRR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one evaluation instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    /// 1-based rank of the ground-truth POI in descending score order.
    pub rank: usize,
    /// Index of the trajectory this instance came from.
    pub trajectory: usize,
    /// Position of the predicted check-in within the trajectory.
    pub position: usize,
}

/// Which prefixes of each test trajectory become evaluation instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalGranularity {
    /// Every prefix of length >= 1 predicts the following check-in.
    Prefix,
    /// Only the final transition of each trajectory.
    LastOnly,
}

/// Rank of the ground truth under a deterministic tie rule: ties are ordered
/// by POI index, so equal-score POIs with a lower index rank ahead.
pub fn rank_of_truth(scores: &[f64], truth: usize) -> Result<usize> {
    if truth >= scores.len() {
        return Err(Error::Data(format!(
            "truth index {truth} out of range for {} scores",
            scores.len()
        )));
    }
    let s = scores[truth];
    let mut rank = 1;
    for (i, v) in scores.iter().enumerate() {
        if *v > s || (*v == s && i < truth) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Fraction of instances whose rank is at most k.
pub fn acc_at_k(records: &[PredictionRecord], k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Data("no prediction records".into()));
    }
    let hits = records.iter().filter(|r| r.rank <= k).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Data("no prediction records".into()));
    }
    let s: f64 = records.iter().map(|r| 1.0 / r.rank as f64).sum();
    Ok(s / records.len() as f64)
}
