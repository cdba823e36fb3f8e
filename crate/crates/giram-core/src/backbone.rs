//! The pluggable next-POI scorer interface, a reference recurrent backbone,
//! the collective/personalized model pair, and the training drivers for the
//! static / finetune / retrain protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::forward::{linear, lstm_forward, LstmWeights};
use crate::diffmath::{adam_step, AdamState, Graph, LstmVars, ParameterSet, Var};
use crate::error::{Error, Result};
use crate::rng::derive;
use crate::vocab::IndexedTrajectory;

/// Anything that can score the next POI after a trajectory. Scorers are
/// deterministic in eval mode and always emit the same output dimension.
pub trait NextPoiScorer {
    fn num_pois(&self) -> usize;

    /// Dense scores over all POIs for the next check-in after `t`.
    fn score_trajectory(&self, t: &IndexedTrajectory) -> Result<Vec<f64>>;

    /// Scores after every prefix of `t` (index i holds the scores after
    /// prefix length i+1), computed in one sequential pass.
    fn score_prefixes(&self, t: &IndexedTrajectory) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub base_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            embed_dim: 32,
            hidden_dim: 32,
            lr: 1e-3,
            batch_size: 32,
            base_epochs: 8,
            finetune_epochs: 10,
            seed: 0,
        }
    }
}

/// Recurrent reference model: POI embeddings through an LSTM, the final
/// hidden state concatenated with the user embedding, and a linear head over
/// the POI vocabulary. Trained with cross-entropy on every within-trajectory
/// next-step pair.
#[derive(Clone, Debug)]
pub struct ReferenceBackbone {
    cfg: BackboneConfig,
    n_pois: usize,
    n_users: usize,
    params: ParameterSet,
    freeze_user_embeddings: bool,
}

impl ReferenceBackbone {
    pub fn new(n_pois: usize, n_users: usize, cfg: BackboneConfig) -> Self {
        let mut params = ParameterSet::new(cfg.seed);
        params.init_matrix("poi_emb", n_pois, cfg.embed_dim);
        params.init_matrix("user_emb", n_users, cfg.embed_dim);
        params.init_matrix("lstm_w_ih", 4 * cfg.hidden_dim, cfg.embed_dim);
        params.init_matrix("lstm_w_hh", 4 * cfg.hidden_dim, cfg.hidden_dim);
        params.init_zeros("lstm_b", &[4 * cfg.hidden_dim]);
        params.init_matrix("head_w", n_pois, cfg.hidden_dim + cfg.embed_dim);
        params.init_zeros("head_b", &[n_pois]);
        ReferenceBackbone {
            cfg,
            n_pois,
            n_users,
            params,
            freeze_user_embeddings: false,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) {
        self.params = params;
    }

    pub fn user_embeddings_frozen(&self) -> bool {
        self.freeze_user_embeddings
    }

    pub fn set_freeze_user_embeddings(&mut self, freeze: bool) {
        self.freeze_user_embeddings = freeze;
    }

    fn validate(&self, t: &IndexedTrajectory) -> Result<()> {
        if t.records.is_empty() {
            return Err(Error::Data("cannot score an empty trajectory".into()));
        }
        if t.user as usize >= self.n_users {
            return Err(Error::Data(format!("unknown user id {}", t.user)));
        }
        for r in &t.records {
            if r.poi as usize >= self.n_pois {
                return Err(Error::Data(format!("unknown POI id {}", r.poi)));
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over all next-step pairs of `trajs` (eval mode).
    pub fn mean_loss(&self, trajs: &[IndexedTrajectory]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for t in trajs {
            self.validate(t)?;
            let step_scores = self.score_prefixes(t)?;
            for pos in 0..t.records.len() - 1 {
                let logits = &step_scores[pos];
                let target = t.records[pos + 1].poi as usize;
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                total += lse - logits[target];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("no next-step pairs to evaluate".into()));
        }
        Ok(total / count as f64)
    }

    /// One Adam-trained pass over the trajectories for `epochs` epochs.
    /// The salt keeps shuffle streams of different drivers apart.
    fn train_on(&mut self, trajs: &[IndexedTrajectory], epochs: usize, salt: u64) -> Result<()> {
        if trajs.is_empty() {
            return Err(Error::Data("cannot train on an empty block".into()));
        }
        for t in trajs {
            self.validate(t)?;
        }
        let usable: Vec<&IndexedTrajectory> =
            trajs.iter().filter(|t| t.records.len() >= 2).collect();
        if usable.is_empty() {
            return Err(Error::Data("no trajectory has a next-step pair".into()));
        }
        let mut adam = AdamState::new(self.cfg.lr);
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..usable.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive(self.cfg.seed, &[salt, epoch as u64]));
            order.shuffle(&mut rng);
            for batch in order.chunks(self.cfg.batch_size.max(1)) {
                let mut g = Graph::new();
                let poi_emb = g.param("poi_emb", &self.params)?;
                let user_emb = g.param("user_emb", &self.params)?;
                let lstm = LstmVars {
                    w_ih: g.param("lstm_w_ih", &self.params)?,
                    w_hh: g.param("lstm_w_hh", &self.params)?,
                    b: g.param("lstm_b", &self.params)?,
                };
                let head_w = g.param("head_w", &self.params)?;
                let head_b = g.param("head_b", &self.params)?;
                let mut losses: Vec<Var> = Vec::new();
                for &ti in batch {
                    let t = usable[ti];
                    let uemb = g.row(user_emb, t.user as usize)?;
                    let inputs: Vec<Var> = t
                        .records
                        .iter()
                        .map(|r| g.row(poi_emb, r.poi as usize))
                        .collect::<Result<_>>()?;
                    let hiddens = g.lstm_sequence(&lstm, &inputs)?;
                    for pos in 0..t.records.len() - 1 {
                        let hu = g.concat(&[hiddens[pos], uemb]);
                        let logits = g.linear(head_w, hu, head_b)?;
                        let target = t.records[pos + 1].poi as usize;
                        losses.push(g.cross_entropy_logits(logits, target)?);
                    }
                }
                let sum = g.add_n(&losses)?;
                let loss = g.scale(sum, 1.0 / losses.len() as f64);
                if !g.value(loss).item().is_finite() {
                    return Err(Error::Numeric("non-finite training loss".into()));
                }
                let mut grads = g.backward(loss)?;
                if self.freeze_user_embeddings {
                    grads.remove("user_emb");
                }
                adam_step(&mut self.params, &grads, &mut adam)?;
            }
        }
        Ok(())
    }
}

impl NextPoiScorer for ReferenceBackbone {
    fn num_pois(&self) -> usize {
        self.n_pois
    }

    fn score_trajectory(&self, t: &IndexedTrajectory) -> Result<Vec<f64>> {
        Ok(self.score_prefixes(t)?.pop().unwrap())
    }

    fn score_prefixes(&self, t: &IndexedTrajectory) -> Result<Vec<Vec<f64>>> {
        self.validate(t)?;
        let poi_emb = self.params.get("poi_emb").unwrap();
        let inputs: Vec<Vec<f64>> = t
            .records
            .iter()
            .map(|r| poi_emb.row(r.poi as usize).to_vec())
            .collect();
        let w = LstmWeights {
            w_ih: self.params.get("lstm_w_ih").unwrap(),
            w_hh: self.params.get("lstm_w_hh").unwrap(),
            b: self.params.get("lstm_b").unwrap(),
        };
        let hiddens = lstm_forward(&w, &inputs);
        let uemb = self.params.get("user_emb").unwrap().row(t.user as usize);
        let head_w = self.params.get("head_w").unwrap();
        let head_b = self.params.get("head_b").unwrap();
        Ok(hiddens
            .into_iter()
            .map(|h| {
                let mut hu = h;
                hu.extend_from_slice(uemb);
                linear(head_w, &hu, head_b)
            })
            .collect())
    }
}

/// Train a fresh model on the base block.
pub fn train_base(
    block: &[IndexedTrajectory],
    n_pois: usize,
    n_users: usize,
    cfg: &BackboneConfig,
) -> Result<ReferenceBackbone> {
    let mut model = ReferenceBackbone::new(n_pois, n_users, cfg.clone());
    model.train_on(block, cfg.base_epochs, 0)?;
    Ok(model)
}

/// Continue training a copy of `model` on `block` only.
pub fn finetune(
    model: &ReferenceBackbone,
    block: &[IndexedTrajectory],
    epochs: usize,
) -> Result<ReferenceBackbone> {
    let mut out = model.clone();
    if epochs == 0 {
        return Ok(out);
    }
    out.train_on(block, epochs, 1)?;
    Ok(out)
}

/// Collective (frozen user embeddings) and personalized (trainable user
/// embeddings) copies, finetuned identically on the same block.
#[derive(Clone, Debug)]
pub struct ModelPair {
    pub collective: ReferenceBackbone,
    pub personalized: ReferenceBackbone,
}

pub fn make_model_pair(
    model: &ReferenceBackbone,
    block: &[IndexedTrajectory],
    epochs: usize,
) -> Result<ModelPair> {
    let mut collective = model.clone();
    collective.set_freeze_user_embeddings(true);
    let mut personalized = model.clone();
    personalized.set_freeze_user_embeddings(false);
    if epochs > 0 {
        collective.train_on(block, epochs, 1)?;
        personalized.train_on(block, epochs, 1)?;
    }
    Ok(ModelPair {
        collective,
        personalized,
    })
}

/// Train a fresh model on the chronological concatenation of all blocks.
pub fn retrain_all(
    blocks: &[&[IndexedTrajectory]],
    n_pois: usize,
    n_users: usize,
    cfg: &BackboneConfig,
) -> Result<ReferenceBackbone> {
    let all: Vec<IndexedTrajectory> = blocks.iter().flat_map(|b| b.iter().cloned()).collect();
    if all.is_empty() {
        return Err(Error::Data("cannot retrain on an empty union".into()));
    }
    train_base(&all, n_pois, n_users, cfg)
}
