//! Consistency scores, adaptive update/fusion weights, and the update and
//! deployment stages tying the memory, encoder, generator, and backbone
//! together.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{ModelPair, NextPoiScorer};
use crate::diffmath::forward::softmax;
use crate::error::{Error, Result};
use crate::keyenc::{KeyEncoder, KeyVector};
use crate::keygen::KeyGenerator;
use crate::memory::{topk_sparse, InterestMemory, UpdateOutcome, UserMemory};
use crate::retrieval::{sustained_interest, RrfConfig};
use crate::vocab::IndexedTrajectory;

/// Per-user consistency scores and the population mean over users that have
/// one. Users without trajectories in the update block fall back to the
/// mean, which neutralizes their adaptive deviation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsistencyTable {
    scores: BTreeMap<u32, f64>,
    mean: Option<f64>,
}

impl ConsistencyTable {
    pub fn insert(&mut self, user: u32, score: f64) {
        self.scores.insert(user, score);
    }

    pub fn set_mean(&mut self, mean: f64) {
        self.mean = Some(mean);
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean
    }

    pub fn get(&self, user: u32) -> Option<f64> {
        self.scores.get(&user).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u32, &f64)> {
        self.scores.iter()
    }

    /// `(s_u, s_mean)` with fallbacks: an unknown user inherits the mean; an
    /// empty table yields (0, 0), i.e. zero deviation everywhere.
    pub fn score_for(&self, user: u32) -> (f64, f64) {
        let mean = self.mean.unwrap_or(0.0);
        (self.get(user).unwrap_or(mean), mean)
    }

    /// CSV persistence (`user_id,score` rows plus a `mean` row).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("user_id,score\n");
        for (u, s) in &self.scores {
            out.push_str(&format!("{u},{s}\n"));
        }
        if let Some(m) = self.mean {
            out.push_str(&format!("mean,{m}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut table = ConsistencyTable::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let (left, right) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected two columns".into(),
            })?;
            let value: f64 = right.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad score {right:?}"),
            })?;
            if left == "mean" {
                table.mean = Some(value);
            } else {
                let user: u32 = left.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad user id {left:?}"),
                })?;
                table.scores.insert(user, value);
            }
        }
        Ok(table)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Base update weight.
    pub alpha_base: f64,
    /// Base fusion weight.
    pub beta_base: f64,
    /// Sensitivity of both weights to consistency deviation.
    pub gamma: f64,
    /// Similarity threshold for memory matching.
    pub delta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha_base: 0.5,
            beta_base: 0.5,
            gamma: 0.5,
            delta: 0.95,
        }
    }
}

/// Whether adaptive weights follow consistency scores or stay at their base
/// values (the fixed mode disables consistency adaptation everywhere).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Adaptive,
    Fixed,
}

/// How deployment turns the memory into a sustained-interest vector:
/// generated query keys with rank fusion, or plain nearest-entry value
/// lookup (the single-key ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Generative,
    SingleKey,
}

/// Sustained interest under the single-key ablation: the densified value of
/// the entry most similar to the query key.
pub fn nearest_entry_interest(
    mem: &UserMemory,
    key: &KeyVector,
    dim: usize,
) -> Result<Vec<f64>> {
    match mem.find_best_match(key)? {
        Some((idx, _)) => Ok(mem.entries()[idx].value.densify()),
        None => Ok(vec![0.0; dim]),
    }
}

/// `base + gamma * (s_u - s_mean)`, clamped into [0, 1] so the convex
/// combinations downstream stay convex.
pub fn adaptive_weight(base: f64, gamma: f64, s_u: f64, s_mean: f64) -> f64 {
    (base + gamma * (s_u - s_mean)).clamp(0.0, 1.0)
}

/// `(1 - beta) * sustained + beta * recent`; an all-zero sustained vector
/// (empty memory) passes the recent interests through unchanged.
pub fn fuse(sustained: &[f64], recent: &[f64], beta: f64) -> Result<Vec<f64>> {
    if sustained.len() != recent.len() {
        return Err(Error::Shape(format!(
            "fuse dimensions {} vs {}",
            sustained.len(),
            recent.len()
        )));
    }
    if sustained.iter().all(|v| *v == 0.0) {
        return Ok(recent.to_vec());
    }
    Ok(sustained
        .iter()
        .zip(recent)
        .map(|(s, r)| (1.0 - beta) * s + beta * r)
        .collect())
}

/// Group trajectories per user (ascending id), each user's list ordered
/// chronologically by last check-in (stable on ties).
fn group_by_user(trajs: &[IndexedTrajectory]) -> BTreeMap<u32, Vec<&IndexedTrajectory>> {
    let mut groups: BTreeMap<u32, Vec<&IndexedTrajectory>> = BTreeMap::new();
    for t in trajs {
        groups.entry(t.user).or_default().push(t);
    }
    for list in groups.values_mut() {
        list.sort_by_key(|t| t.last_timestamp());
    }
    groups
}

/// Cosine similarity between the concatenated collective and personalized
/// output distributions over each user's trajectories. Outputs are compared
/// on probability scale (softmax of the raw scores), the same scale the
/// fusion stage consumes; raw-logit cosines concentrate so tightly that the
/// score carries no signal. Users with no trajectories or a zero-norm
/// concatenation inherit the mean of the defined users.
pub fn consistency_scores(
    pair: &ModelPair,
    trajs: &[IndexedTrajectory],
) -> Result<ConsistencyTable> {
    let mut table = ConsistencyTable::default();
    let mut pending_mean: Vec<u32> = Vec::new();
    let mut defined: Vec<(u32, f64)> = Vec::new();
    for (user, list) in group_by_user(trajs) {
        let mut dot = 0.0;
        let mut norm_c = 0.0;
        let mut norm_p = 0.0;
        for t in list {
            let xc = softmax(&pair.collective.score_trajectory(t)?);
            let xp = softmax(&pair.personalized.score_trajectory(t)?);
            for (c, p) in xc.iter().zip(&xp) {
                dot += c * p;
                norm_c += c * c;
                norm_p += p * p;
            }
        }
        if norm_c == 0.0 || norm_p == 0.0 {
            pending_mean.push(user);
        } else {
            defined.push((user, dot / (norm_c.sqrt() * norm_p.sqrt())));
        }
    }
    if !defined.is_empty() {
        let mean = defined.iter().map(|(_, s)| s).sum::<f64>() / defined.len() as f64;
        table.set_mean(mean);
        for (u, s) in defined {
            table.insert(u, s);
        }
        for u in pending_mean {
            table.insert(u, mean);
        }
    }
    Ok(table)
}

/// Counters from one update stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub trajectories: usize,
    pub matched: usize,
    pub inserted: usize,
    pub evicted: usize,
}

/// The update stage: per-user consistency scores drive the adaptive update
/// weight; every trajectory's context key and top-K prediction distribution
/// is folded into that user's memory in chronological order.
pub fn update_stage(
    memory: &mut InterestMemory,
    pair: &ModelPair,
    trajs: &[IndexedTrajectory],
    encoder: &KeyEncoder,
    cfg: &FusionConfig,
    weight_mode: WeightMode,
) -> Result<(ConsistencyTable, UpdateStats)> {
    let table = consistency_scores(pair, trajs)?;
    let mut stats = UpdateStats::default();
    let top_k = memory.config().top_k;
    for (user, list) in group_by_user(trajs) {
        let (s_u, s_mean) = table.score_for(user);
        let alpha = match weight_mode {
            WeightMode::Adaptive => adaptive_weight(cfg.alpha_base, cfg.gamma, s_u, s_mean),
            WeightMode::Fixed => cfg.alpha_base,
        };
        for t in list {
            let key = encoder.encode_key(&t.records)?;
            let scores = pair.personalized.score_trajectory(t)?;
            let value = topk_sparse(&scores, top_k);
            let outcome =
                memory.apply_update(user, &key, &value, alpha, cfg.delta, t.last_timestamp())?;
            stats.trajectories += 1;
            match outcome {
                UpdateOutcome::Matched { .. } => stats.matched += 1,
                UpdateOutcome::Inserted => stats.inserted += 1,
                UpdateOutcome::Evicted { .. } => stats.evicted += 1,
            }
        }
    }
    Ok((table, stats))
}

/// Everything the deployment stage needs beyond the trajectory itself.
pub struct DeploymentContext<'a> {
    pub model: &'a dyn NextPoiScorer,
    pub encoder: &'a KeyEncoder,
    pub generator: Option<&'a KeyGenerator>,
    pub table: &'a ConsistencyTable,
    pub fusion: &'a FusionConfig,
    pub rrf: &'a RrfConfig,
    pub n_k: usize,
    pub retrieval: RetrievalMode,
    pub weights: WeightMode,
}

/// The deployment stage for one trajectory: encode the context key, expand
/// it into query keys, retrieve sustained interests, and fuse them with the
/// personalized model's (softmaxed) recent interests.
pub fn deployment_stage(
    user_memory: Option<&UserMemory>,
    t: &IndexedTrajectory,
    ctx: &DeploymentContext,
    seed: u64,
) -> Result<Vec<f64>> {
    let dim = ctx.model.num_pois();
    let recent = softmax(&ctx.model.score_trajectory(t)?);
    let sustained = match user_memory {
        None => vec![0.0; dim],
        Some(mem) if mem.is_empty() => vec![0.0; dim],
        Some(mem) => {
            let key = ctx.encoder.encode_key(&t.records)?;
            match ctx.retrieval {
                RetrievalMode::SingleKey => nearest_entry_interest(mem, &key, dim)?,
                RetrievalMode::Generative => {
                    let generator = ctx.generator.ok_or_else(|| {
                        Error::Config("generative retrieval needs a trained key generator".into())
                    })?;
                    let keys = generator.generate(&key, ctx.n_k, seed);
                    sustained_interest(mem, &keys, ctx.rrf, dim)?
                }
            }
        }
    };
    let (s_u, s_mean) = ctx.table.score_for(t.user);
    let beta = match ctx.weights {
        WeightMode::Adaptive => adaptive_weight(ctx.fusion.beta_base, ctx.fusion.gamma, s_u, s_mean),
        WeightMode::Fixed => ctx.fusion.beta_base,
    };
    fuse(&sustained, &recent, beta)
}
