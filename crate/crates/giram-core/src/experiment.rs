//! The block-by-block continual loop: train the base model, then per block
//! update (per method), split the next block into validation and test halves,
//! evaluate on the test half, and emit reports and checkpoints.
//!
//! All component seeds are derived from the single `run.seed`, so one seed
//! pins the dataset, every training pass, and every generated key.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{
    finetune, make_model_pair, retrain_all, train_base, ModelPair, NextPoiScorer,
    ReferenceBackbone,
};
use crate::config::{DataSource, ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::eval::{acc_at_k, mrr, rank_of_truth, EvalGranularity, PredictionRecord};
use crate::fusion::{
    adaptive_weight, fuse, update_stage, ConsistencyTable, RetrievalMode, WeightMode,
};
use crate::ingest::{
    build_trajectories, filter_sparse, load_checkins, partition_blocks, split_val_test,
    CategoryMap, DataBlock, SECONDS_PER_DAY,
};
use crate::keyenc::{CoordMinMax, KeyEncoder};
use crate::keygen::{train_generator, KeyGenerator};
use crate::memory::InterestMemory;
use crate::retrieval::sustained_interest;
use crate::rng::derive;
use crate::synth::{category_map_rows, generate};
use crate::vocab::{index_trajectories, IndexedTrajectory, Vocabulary};

/// The ingested, filtered, partitioned, and indexed dataset.
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub cmap: CategoryMap,
    pub minmax: CoordMinMax,
    pub base: DataBlock,
    pub incremental: Vec<DataBlock>,
    pub base_trajs: Vec<IndexedTrajectory>,
    pub incr_trajs: Vec<Vec<IndexedTrajectory>>,
}

/// Load (or synthesize), filter, partition, bucket, and index everything.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (checkins, cmap) = match cfg.data.source {
        DataSource::Synth => {
            let mut spec = cfg.synth.clone();
            spec.seed = derive(cfg.run.seed, &[0x5d]);
            let events = generate(&spec)?;
            let cmap = CategoryMap::from_pairs(category_map_rows(&spec));
            (events, cmap)
        }
        DataSource::Csv => {
            let path = cfg.data.csv_path.as_ref().unwrap();
            let events = load_checkins(path)?;
            let cmap = match &cfg.data.category_map {
                Some(p) => CategoryMap::load(p)?,
                None => CategoryMap::identity(),
            };
            (events, cmap)
        }
    };
    let filtered = filter_sparse(&checkins, cfg.data.min_count);
    if filtered.is_empty() {
        return Err(Error::Data(
            "no check-ins survive the sparsity filter".into(),
        ));
    }
    let vocab = Vocabulary::build(&filtered, &cmap, cfg.grid.rows, cfg.grid.cols)?;
    let (mut base, mut incremental) = partition_blocks(&filtered, cfg.run.n_blocks)?;
    let interval = (cfg.data.interval_days * SECONDS_PER_DAY as f64) as i64;
    base.trajectories = build_trajectories(&base, interval);
    for b in incremental.iter_mut() {
        b.trajectories = build_trajectories(b, interval);
    }
    let minmax = CoordMinMax::fit(base.checkins.iter().map(|c| (c.lat, c.lon)))?;
    let base_trajs = index_trajectories(&base.trajectories, &vocab, &cmap)?;
    let incr_trajs = incremental
        .iter()
        .map(|b| index_trajectories(&b.trajectories, &vocab, &cmap))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        vocab,
        cmap,
        minmax,
        base,
        incremental,
        base_trajs,
        incr_trajs,
    })
}

/// Metric row for one evaluated block.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockMetrics {
    pub block: usize,
    pub acc5: f64,
    pub acc10: f64,
    pub acc20: f64,
    pub mrr: f64,
    pub n: usize,
}

impl BlockMetrics {
    fn from_records(block: usize, records: &[PredictionRecord]) -> Result<Self> {
        Ok(BlockMetrics {
            block,
            acc5: acc_at_k(records, 5)?,
            acc10: acc_at_k(records, 10)?,
            acc20: acc_at_k(records, 20)?,
            mrr: mrr(records)?,
            n: records.len(),
        })
    }
}

/// Per-block wall-clock and memory-size diagnostics. These go to a separate
/// profile file because they vary run to run; the metric reports stay
/// byte-identical under a fixed seed.
#[derive(Clone, Debug, Serialize)]
pub struct BlockProfile {
    pub block: usize,
    pub train_seconds: f64,
    pub update_seconds: f64,
    pub eval_seconds: f64,
    pub memory_bytes: u64,
    pub update_trajectories: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub per_block: Vec<BlockMetrics>,
    pub mean: BlockMetrics,
    #[serde(skip)]
    pub profiles: Vec<BlockProfile>,
}

impl RunResult {
    pub fn mean_acc5(&self) -> f64 {
        self.mean.acc5
    }

    pub fn mean_mrr(&self) -> f64 {
        self.mean.mrr
    }
}

fn mean_metrics(rows: &[BlockMetrics]) -> BlockMetrics {
    let n = rows.len().max(1) as f64;
    BlockMetrics {
        block: 0,
        acc5: rows.iter().map(|r| r.acc5).sum::<f64>() / n,
        acc10: rows.iter().map(|r| r.acc10).sum::<f64>() / n,
        acc20: rows.iter().map(|r| r.acc20).sum::<f64>() / n,
        mrr: rows.iter().map(|r| r.mrr).sum::<f64>() / n,
        n: rows.iter().map(|r| r.n).sum(),
    }
}

/// Evaluation instances of one trajectory under a granularity setting:
/// positions whose prefix predicts the following record.
fn eval_positions(len: usize, granularity: EvalGranularity) -> std::ops::Range<usize> {
    match granularity {
        EvalGranularity::Prefix => 1..len,
        EvalGranularity::LastOnly => (len - 1)..len,
    }
}

/// Evaluate a plain backbone scorer over test trajectories.
fn evaluate_backbone(
    model: &dyn NextPoiScorer,
    test: &[IndexedTrajectory],
    granularity: EvalGranularity,
) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (ti, t) in test.iter().enumerate() {
        let step_scores = model.score_prefixes(t)?;
        for pos in eval_positions(t.records.len(), granularity) {
            let truth = t.records[pos].poi as usize;
            let rank = rank_of_truth(&step_scores[pos - 1], truth)?;
            records.push(PredictionRecord {
                rank,
                trajectory: ti,
                position: pos,
            });
        }
    }
    Ok(records)
}

/// Everything the deployed recommender carries between blocks.
pub struct GiramState {
    pub memory: InterestMemory,
    pub table: ConsistencyTable,
    pub generator: Option<KeyGenerator>,
}

/// Evaluate the full fused recommender over test trajectories. Uses one
/// sequential pass per trajectory for prefix keys and prefix scores; the
/// per-instance result is identical to running the deployment stage on each
/// prefix (covered by a test).
#[allow(clippy::too_many_arguments)]
fn evaluate_giram(
    model: &ReferenceBackbone,
    encoder: &KeyEncoder,
    state: &GiramState,
    cfg: &ExperimentConfig,
    test: &[IndexedTrajectory],
    block_index: usize,
    granularity: EvalGranularity,
) -> Result<Vec<PredictionRecord>> {
    let dim = model.num_pois();
    let mut records = Vec::new();
    for (ti, t) in test.iter().enumerate() {
        let step_scores = model.score_prefixes(t)?;
        let prefix_keys = encoder.encode_prefix_keys(&t.records)?;
        let user_memory = state.memory.user(t.user);
        let (s_u, s_mean) = state.table.score_for(t.user);
        let beta = match cfg.giram.weights {
            WeightMode::Adaptive => {
                adaptive_weight(cfg.fusion.beta_base, cfg.fusion.gamma, s_u, s_mean)
            }
            WeightMode::Fixed => cfg.fusion.beta_base,
        };
        for pos in eval_positions(t.records.len(), granularity) {
            let recent = crate::diffmath::forward::softmax(&step_scores[pos - 1]);
            let sustained = match user_memory {
                Some(mem) if !mem.is_empty() => {
                    let key = &prefix_keys[pos - 1];
                    match cfg.giram.retrieval {
                        RetrievalMode::SingleKey => {
                            crate::fusion::nearest_entry_interest(mem, key, dim)?
                        }
                        RetrievalMode::Generative => {
                            let generator = state.generator.as_ref().ok_or_else(|| {
                                Error::Config("generative retrieval needs a generator".into())
                            })?;
                            let seed = derive(
                                cfg.run.seed,
                                &[block_index as u64, ti as u64, pos as u64],
                            );
                            let keys = generator.generate(key, cfg.keygen.n_k, seed);
                            sustained_interest(mem, &keys, &cfg.rrf, dim)?
                        }
                    }
                }
                _ => vec![0.0; dim],
            };
            let fused = fuse(&sustained, &recent, beta)?;
            let truth = t.records[pos].poi as usize;
            let rank = rank_of_truth(&fused, truth)?;
            records.push(PredictionRecord {
                rank,
                trajectory: ti,
                position: pos,
            });
        }
    }
    Ok(records)
}

fn block_phase<T>(block: usize, phase: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("block {block}, {phase}: {m}")),
        Error::Data(m) => Error::Data(format!("block {block}, {phase}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("block {block}, {phase}: {m}")),
        other => other,
    })
}

/// Run the full continual experiment and write reports under
/// `cfg.run.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data)
}

/// Run the continual loop on already prepared data (lets callers share one
/// dataset across methods).
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunResult> {
    let out_dir = &cfg.run.out_dir;
    std::fs::create_dir_all(out_dir)?;
    let config_hash = cfg.hash();
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;

    let n_pois = data.vocab.num_pois();
    let n_users = data.vocab.num_users();

    let mut backbone_cfg = cfg.backbone.clone();
    backbone_cfg.seed = derive(cfg.run.seed, &[0xbb]);
    let mut keygen_cfg = cfg.keygen.clone();
    keygen_cfg.seed = derive(cfg.run.seed, &[0x6e]);

    let encoder = KeyEncoder::new(
        cfg.keyenc.clone(),
        &data.vocab.grid,
        data.minmax,
        data.vocab.raw_categories.len(),
        data.vocab.derived_categories.len(),
        derive(cfg.run.seed, &[0x4b]),
    )?;

    if data.base_trajs.is_empty() {
        return Err(Error::Data("base block has no trajectories".into()));
    }
    let t_train = Instant::now();
    let mut model = train_base(&data.base_trajs, n_pois, n_users, &backbone_cfg)?;
    let base_train_seconds = t_train.elapsed().as_secs_f64();

    let mut state = GiramState {
        memory: InterestMemory::new(cfg.memory, cfg.keyenc.d_k, n_pois),
        table: ConsistencyTable::default(),
        generator: None,
    };

    let mut per_block = Vec::new();
    let mut profiles = vec![BlockProfile {
        block: 0,
        train_seconds: base_train_seconds,
        update_seconds: 0.0,
        eval_seconds: 0.0,
        memory_bytes: 0,
        update_trajectories: 0,
    }];

    let n = data.incremental.len();
    for j in 0..n - 1 {
        let update_block = &data.incremental[j];
        let update_trajs = &data.incr_trajs[j];
        let eval_block = &data.incremental[j + 1];
        let block_idx = update_block.index;

        let block_dir = out_dir.join(format!("block_{block_idx}"));
        let done_marker = block_dir.join("done");
        let resumable = cfg.run.resume
            && done_marker.exists()
            && std::fs::read_to_string(&done_marker).map(|h| h == config_hash).unwrap_or(false);

        let mut train_seconds = 0.0;
        let mut update_seconds = 0.0;
        if resumable {
            block_phase(block_idx, "resume", restore_block(&block_dir, &mut model, &mut state, cfg))?;
        } else {
            match cfg.run.method {
                Method::Static => {}
                Method::Finetune => {
                    if !update_trajs.is_empty() {
                        let t = Instant::now();
                        model = block_phase(
                            block_idx,
                            "finetune",
                            finetune(&model, update_trajs, backbone_cfg.finetune_epochs),
                        )?;
                        train_seconds = t.elapsed().as_secs_f64();
                    }
                }
                Method::Retrain => {
                    let t = Instant::now();
                    let mut all: Vec<&[IndexedTrajectory]> = vec![&data.base_trajs];
                    for b in &data.incr_trajs[..=j] {
                        all.push(b);
                    }
                    model = block_phase(
                        block_idx,
                        "retrain",
                        retrain_all(&all, n_pois, n_users, &backbone_cfg),
                    )?;
                    train_seconds = t.elapsed().as_secs_f64();
                }
                Method::Giram => {
                    let t = Instant::now();
                    let pair: ModelPair = block_phase(
                        block_idx,
                        "pair finetune",
                        make_model_pair(
                            &model,
                            update_trajs,
                            if update_trajs.is_empty() {
                                0
                            } else {
                                backbone_cfg.finetune_epochs
                            },
                        ),
                    )?;
                    train_seconds = t.elapsed().as_secs_f64();

                    let t = Instant::now();
                    let (table, _stats) = block_phase(
                        block_idx,
                        "memory update",
                        update_stage(
                            &mut state.memory,
                            &pair,
                            update_trajs,
                            &encoder,
                            &cfg.fusion,
                            cfg.giram.weights,
                        ),
                    )?;
                    update_seconds = t.elapsed().as_secs_f64();
                    if !table.is_empty() {
                        state.table = table;
                    }
                    model = pair.personalized;

                    if cfg.giram.retrieval == RetrievalMode::Generative && !update_trajs.is_empty()
                    {
                        let keys = update_trajs
                            .iter()
                            .map(|t| encoder.encode_key(&t.records))
                            .collect::<Result<Vec<_>>>()?;
                        let mut kg_cfg = keygen_cfg.clone();
                        kg_cfg.seed = derive(keygen_cfg.seed, &[block_idx as u64]);
                        state.generator = Some(block_phase(
                            block_idx,
                            "generator training",
                            train_generator(&keys, cfg.keyenc.d_k, &kg_cfg),
                        )?);
                    }
                }
            }
            block_phase(
                block_idx,
                "checkpoint",
                checkpoint_block(&block_dir, &model, &state, cfg, &config_hash),
            )?;
        }

        // Split the NEXT block; the validation half is reserved, the test
        // half is scored.
        let (_val, test) = block_phase(
            eval_block.index,
            "val/test split",
            split_val_test(eval_block, derive(cfg.run.seed, &[0x57, eval_block.index as u64])),
        )?;
        let test_idx: Vec<IndexedTrajectory> = {
            let mut out = Vec::with_capacity(test.len());
            for t in &test {
                out.push(block_phase(
                    eval_block.index,
                    "indexing",
                    crate::vocab::index_trajectory(t, &data.vocab, &data.cmap),
                )?);
            }
            out
        };

        let t = Instant::now();
        let records = match cfg.run.method {
            Method::Giram => block_phase(
                eval_block.index,
                "evaluation",
                evaluate_giram(
                    &model,
                    &encoder,
                    &state,
                    cfg,
                    &test_idx,
                    eval_block.index,
                    cfg.run.eval,
                ),
            )?,
            _ => block_phase(
                eval_block.index,
                "evaluation",
                evaluate_backbone(&model, &test_idx, cfg.run.eval),
            )?,
        };
        let eval_seconds = t.elapsed().as_secs_f64();
        per_block.push(block_phase(
            eval_block.index,
            "metrics",
            BlockMetrics::from_records(eval_block.index, &records),
        )?);

        let memory_bytes = block_dir
            .join("memory.bin")
            .metadata()
            .map(|m| m.len())
            .unwrap_or(0);
        profiles.push(BlockProfile {
            block: block_idx,
            train_seconds,
            update_seconds,
            eval_seconds,
            memory_bytes,
            update_trajectories: update_trajs.len(),
        });
    }

    let result = RunResult {
        method: cfg.run.method.name().to_string(),
        seed: cfg.run.seed,
        mean: mean_metrics(&per_block),
        per_block,
        profiles,
    };
    write_reports(out_dir, &result)?;
    Ok(result)
}

fn checkpoint_block(
    dir: &Path,
    model: &ReferenceBackbone,
    state: &GiramState,
    cfg: &ExperimentConfig,
    config_hash: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    model.params().save(&dir.join("model.ckpt"))?;
    state.memory.save(&dir.join("memory.bin"))?;
    state.table.save_csv(&dir.join("consistency.csv"))?;
    if let Some(generator) = &state.generator {
        generator.params().save(&dir.join("keygen.ckpt"))?;
    }
    let _ = cfg;
    std::fs::write(dir.join("done"), config_hash)?;
    Ok(())
}

fn restore_block(
    dir: &Path,
    model: &mut ReferenceBackbone,
    state: &mut GiramState,
    cfg: &ExperimentConfig,
) -> Result<()> {
    model.set_params(crate::diffmath::ParameterSet::load(&dir.join("model.ckpt"))?);
    state.memory = InterestMemory::load(&dir.join("memory.bin"))?;
    state.table = ConsistencyTable::load_csv(&dir.join("consistency.csv"))?;
    let kg_path = dir.join("keygen.ckpt");
    if kg_path.exists() {
        let mut generator = KeyGenerator::new(
            cfg.keyenc.d_k,
            cfg.keygen.latent_dim,
            cfg.keygen.hidden_dim,
            0,
        );
        generator.set_params(crate::diffmath::ParameterSet::load(&kg_path)?);
        state.generator = Some(generator);
    }
    Ok(())
}

fn format_metric(v: f64) -> String {
    format!("{v:.6}")
}

/// Write metrics.csv, summary.json, report.txt, and profile.csv.
pub fn write_reports(out_dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("block,method,acc5,acc10,acc20,mrr,n\n");
    for row in &result.per_block {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.block,
            result.method,
            format_metric(row.acc5),
            format_metric(row.acc10),
            format_metric(row.acc20),
            format_metric(row.mrr),
            row.n
        ));
    }
    csv.push_str(&format!(
        "mean,{},{},{},{},{},{}\n",
        result.method,
        format_metric(result.mean.acc5),
        format_metric(result.mean.acc10),
        format_metric(result.mean.acc20),
        format_metric(result.mean.mrr),
        result.mean.n
    ));
    std::fs::write(out_dir.join("metrics.csv"), &csv)?;

    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(result).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;

    std::fs::write(out_dir.join("report.txt"), render_table(result))?;

    let mut profile = String::from(
        "block,train_seconds,update_seconds,eval_seconds,memory_bytes,update_trajectories\n",
    );
    for p in &result.profiles {
        profile.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{},{}\n",
            p.block,
            p.train_seconds,
            p.update_seconds,
            p.eval_seconds,
            p.memory_bytes,
            p.update_trajectories
        ));
    }
    std::fs::write(out_dir.join("profile.csv"), profile)?;
    Ok(())
}

/// Pretty per-block table: one column per evaluated block plus the mean.
pub fn render_table(result: &RunResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("method: {}  seed: {}\n", result.method, result.seed));
    let mut header = String::from("metric  ");
    for row in &result.per_block {
        header.push_str(&format!("T{:<9}", row.block));
    }
    header.push_str("Mean\n");
    out.push_str(&header);
    for (name, get) in [
        ("Acc@5 ", (|m: &BlockMetrics| m.acc5) as fn(&BlockMetrics) -> f64),
        ("Acc@10", |m| m.acc10),
        ("Acc@20", |m| m.acc20),
        ("MRR   ", |m| m.mrr),
    ] {
        out.push_str(name);
        out.push_str("  ");
        for row in &result.per_block {
            out.push_str(&format!("{:<10.4}", get(row)));
        }
        out.push_str(&format!("{:.4}\n", get(&result.mean)));
    }
    out.push_str(&format!("instances: {}\n", result.mean.n));
    out
}

/// Re-render reports from a metrics.csv written by [`write_reports`].
pub fn report_from_dir(out_dir: &Path) -> Result<RunResult> {
    let path = out_dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_metrics_csv(&text)
}

/// Parse the metrics report back into a [`RunResult`] (no profile rows).
pub fn parse_metrics_csv(text: &str) -> Result<RunResult> {
    let mut per_block = Vec::new();
    let mut mean: Option<BlockMetrics> = None;
    let mut method = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "block,method,acc5,acc10,acc20,mrr,n" {
                return Err(Error::Parse {
                    line: 1,
                    msg: "unexpected metrics header".into(),
                });
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 7 columns, got {}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number {s:?}"),
            })
        };
        method = parts[1].to_string();
        let row = BlockMetrics {
            block: if parts[0] == "mean" {
                0
            } else {
                parts[0].parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad block {:?}", parts[0]),
                })?
            },
            acc5: parse(parts[2])?,
            acc10: parse(parts[3])?,
            acc20: parse(parts[4])?,
            mrr: parse(parts[5])?,
            n: parts[6].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad count {:?}", parts[6]),
            })?,
        };
        if parts[0] == "mean" {
            mean = Some(row);
        } else {
            per_block.push(row);
        }
    }
    let mean = mean.ok_or_else(|| Error::Data("metrics.csv has no mean row".into()))?;
    Ok(RunResult {
        method,
        seed: 0,
        per_block,
        mean,
        profiles: Vec::new(),
    })
}
