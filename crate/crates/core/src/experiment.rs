//! Run configuration and the end-to-end pipelines behind the command line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::decode::{caption_image, BeamConfig, DecodeError};
use crate::interpret::{interpret, Interpretation, NodeReport, Probe, DEFAULT_PICK, DEFAULT_POOL};
use crate::metrics::{evaluate, CorpusStats, EvalReport, MetricError, Sentence};
use crate::microworld::{build_vocab, generate, load_dataset, DataError, Dataset, Splits, WorldSpec, MIN_WORD_FREQ};
use crate::scene_graph::MaskMode;
use crate::training::{scst_step, xe_step, Adam, LogRecord, RlConfig, RlItem, TrainError, TrainLog, XeConfig, XeItem};
use crate::ttn::{Model, ModelConfig, TtnError};
use crate::vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] TtnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Data(_) => "data",
            ExperimentError::Train(_) => "training",
            ExperimentError::Decode(_) => "decode",
            ExperimentError::Checkpoint(_) => "checkpoint",
            ExperimentError::Metric(_) => "metric",
            ExperimentError::Model(_) => "model",
            ExperimentError::Io(_) => "io",
            ExperimentError::Json(_) => "json",
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

/// Model hyperparameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub d: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub num_theme_nodes: usize,
    pub dropout: f64,
    pub mask_mode: MaskMode,
    pub use_relations: bool,
    pub group_embeddings: bool,
    pub share_relation_embeddings: bool,
    pub tie_output: bool,
}

impl ModelSpec {
    fn from_config(c: &ModelConfig) -> Self {
        ModelSpec {
            d: c.d,
            heads: c.heads,
            d_ffn: c.d_ffn,
            enc_layers: c.enc_layers,
            dec_layers: c.dec_layers,
            num_theme_nodes: c.num_theme_nodes,
            dropout: c.dropout,
            mask_mode: c.mask_mode,
            use_relations: c.use_relations,
            group_embeddings: c.group_embeddings,
            share_relation_embeddings: c.share_relation_embeddings,
            tie_output: c.tie_output,
        }
    }

    pub fn resolve(&self, vocab_size: usize, relation_vocab_size: usize, d_o: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            d_ffn: self.d_ffn,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            num_theme_nodes: self.num_theme_nodes,
            vocab_size,
            relation_vocab_size,
            d_o,
            dropout: self.dropout,
            mask_mode: self.mask_mode,
            use_relations: self.use_relations,
            group_embeddings: self.group_embeddings,
            share_relation_embeddings: self.share_relation_embeddings,
            tie_output: self.tie_output,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

/// Full description of a run. Loaded as JSON over the chosen preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelSpec,
    pub xe: XeConfig,
    pub rl: RlConfig,
    pub beam: BeamConfig,
    /// Dataset files; when absent the micro-world is generated from `world`.
    pub data: Option<DataPaths>,
    pub world: WorldSpec,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Evaluate on at most this many examples.
    pub eval_limit: Option<usize>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let model = match preset {
            Preset::Desk => ModelConfig::desk(0, 0, 0),
            Preset::Paper => ModelConfig::paper(0, 0, 0),
        };
        let (xe, rl) = match preset {
            Preset::Desk => (XeConfig::default(), RlConfig::default()),
            Preset::Paper => (
                XeConfig { warmup_steps: 1000, total_steps: 10_000, ..Default::default() },
                RlConfig { warmup_steps: 4000, total_steps: 40_000, ..Default::default() },
            ),
        };
        RunConfig {
            preset,
            model: ModelSpec::from_config(&model),
            xe,
            rl,
            beam: BeamConfig::default(),
            data: None,
            world: WorldSpec::default(),
            seed: 0,
            output_dir: None,
            checkpoint_every: 500,
            eval_limit: None,
        }
    }

    /// Parses JSON, layering it over the preset it names. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &user else {
            return Err(ExperimentError::Config("top level must be an object".into()));
        };
        let preset: Preset = match map.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| ExperimentError::Config(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, user);
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.xe.validate()?;
        self.rl.validate()?;
        if self.beam.beam_size == 0 || self.beam.length_penalty < 0.0 {
            return Err(ExperimentError::Config("beam_size must be >= 1 and length_penalty >= 0".into()));
        }
        if let Some(d) = &self.data {
            for p in [&d.train, &d.dev, &d.test] {
                if !p.exists() {
                    return Err(ExperimentError::Config(format!("data file {} does not exist", p.display())));
                }
            }
        } else {
            self.world.validate()?;
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Data splits plus the vocabulary built on the training split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub vocab: Vocab,
    pub relation_tokens: Vec<usize>,
}

impl Prepared {
    pub fn model_config(&self, spec: &ModelSpec) -> ModelConfig {
        spec.resolve(self.vocab.len(), self.relation_tokens.len(), self.splits.train.feature_dim)
    }

    pub fn new_model(&self, spec: &ModelSpec, seed: u64) -> Result<Model<f32>> {
        Ok(Model::new(self.model_config(spec), self.relation_tokens.clone(), seed)?)
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let splits = match &cfg.data {
        Some(d) => Splits { train: load_dataset(&d.train)?, dev: load_dataset(&d.dev)?, test: load_dataset(&d.test)? },
        None => generate(&cfg.world)?,
    };
    Ok(prepare_splits(splits))
}

pub fn prepare_splits(splits: Splits) -> Prepared {
    let vocab = build_vocab(&splits.train, MIN_WORD_FREQ);
    let relation_tokens = splits.train.relation_vocab.iter().map(|r| vocab.id(r)).collect();
    Prepared { splits, vocab, relation_tokens }
}

/// Deterministic example order: a fresh permutation per epoch, derived from the seed.
struct Schedule {
    seed: u64,
    n: usize,
    perms: HashMap<u64, Vec<usize>>,
}

impl Schedule {
    fn new(seed: u64, n: usize) -> Self {
        Schedule { seed, n, perms: HashMap::new() }
    }

    /// `(example, epoch)` pairs of the 1-based `step`.
    fn batch(&mut self, step: u64, batch_size: usize) -> Vec<(usize, u64)> {
        let start = (step - 1) * batch_size as u64;
        (start..start + batch_size as u64)
            .map(|q| {
                let epoch = q / self.n as u64;
                let (n, seed) = (self.n, self.seed);
                let perm = self.perms.entry(epoch).or_insert_with(|| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch)));
                    p
                });
                (perm[(q % n as u64) as usize], epoch)
            })
            .collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Where a run writes its files. `None` keeps everything in memory.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let p = path.into();
        fs::create_dir_all(&p)?;
        Ok(RunDir(p))
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// A fresh training state for `cfg`.
pub fn initial_state(prep: &Prepared, cfg: &RunConfig) -> Result<Checkpoint> {
    Ok(Checkpoint {
        run: serde_json::to_value(cfg)?,
        model: prep.new_model(&cfg.model, cfg.seed)?,
        vocab: prep.vocab.clone(),
        optimizer: None,
        xe_steps: 0,
        rl_steps: 0,
    })
}

fn check_resume(prep: &Prepared, cfg: &RunConfig, state: &Checkpoint) -> Result<()> {
    if state.vocab != prep.vocab {
        return Err(ExperimentError::Config("checkpoint vocabulary differs from the dataset vocabulary".into()));
    }
    if state.model.config != prep.model_config(&cfg.model) {
        return Err(ExperimentError::Config("checkpoint model config differs from the run config".into()));
    }
    Ok(())
}

/// Cross-entropy phase up to `cfg.xe.total_steps` (or `stop_after`), resuming from `state`.
pub fn train_xe(prep: &Prepared, cfg: &RunConfig, mut state: Checkpoint, out: Option<&RunDir>, stop_after: Option<u64>) -> Result<Checkpoint> {
    check_resume(prep, cfg, &state)?;
    if state.rl_steps > 0 {
        return Err(ExperimentError::Config("cannot resume cross-entropy training from an RL checkpoint".into()));
    }
    let train = &prep.splits.train.examples;
    if train.is_empty() {
        return Err(ExperimentError::Config("empty training split".into()));
    }
    let framed: Vec<Vec<Vec<usize>>> =
        train.iter().map(|e| e.captions.iter().map(|c| prep.vocab.encode(c)).collect()).collect();
    let mut schedule = Schedule::new(cfg.seed, train.len());
    let mut opt = state.optimizer.take().unwrap_or_else(|| Adam::new(cfg.xe.adam_betas));
    let mut log = out.map(|d| TrainLog::create(&d.join("train.jsonl"))).transpose()?;
    let last = stop_after.map_or(cfg.xe.total_steps, |s| s.min(cfg.xe.total_steps));
    for step in state.xe_steps + 1..=last {
        let picks = schedule.batch(step, cfg.xe.batch_size);
        let batch: Vec<XeItem> = picks
            .iter()
            .map(|&(i, epoch)| {
                let caps = &framed[i];
                XeItem { graph: &train[i].scene_graph, tokens: &caps[(epoch as usize) % caps.len()] }
            })
            .collect();
        let stats = xe_step(&mut state.model, &mut opt, &batch, &cfg.xe, step, mix(cfg.seed ^ 0xD0, step))?;
        state.xe_steps = step;
        if let Some(log) = log.as_mut() {
            log.write(&LogRecord::xe(step, &stats))?;
        }
        if step % 100 == 0 {
            log::info!("xe step {step}: loss {:.4} (l0 {:.4} l1 {:.4} l2 {:.4})", stats.loss, stats.l0, stats.l1, stats.l2);
        }
        if let Some(d) = out.filter(|_| cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            log.as_mut().map(TrainLog::flush).transpose()?;
            state.optimizer = Some(opt.clone());
            state.save(&d.join("xe.ckpt"))?;
        }
    }
    state.optimizer = Some(opt);
    if let Some(d) = out {
        log.as_mut().map(TrainLog::flush).transpose()?;
        state.save(&d.join("xe.ckpt"))?;
    }
    Ok(state)
}

/// Self-critical phase up to `cfg.rl.total_steps` (or `stop_after`), starting from a cross-entropy state.
pub fn train_rl(prep: &Prepared, cfg: &RunConfig, mut state: Checkpoint, out: Option<&RunDir>, stop_after: Option<u64>) -> Result<Checkpoint> {
    check_resume(prep, cfg, &state)?;
    if state.xe_steps == 0 {
        return Err(ExperimentError::Config("the RL phase needs a cross-entropy checkpoint".into()));
    }
    let train = &prep.splits.train.examples;
    let references = prep.splits.train.references();
    let stats = CorpusStats::from_references(&references);
    let mut schedule = Schedule::new(mix(cfg.seed, 0x5C57), train.len());
    let mut opt = match state.optimizer.take() {
        Some(o) if state.rl_steps > 0 => o,
        _ => Adam::new(cfg.xe.adam_betas),
    };
    let mut log = out.map(|d| TrainLog::create(&d.join("train.jsonl"))).transpose()?;
    let last = stop_after.map_or(cfg.rl.total_steps, |s| s.min(cfg.rl.total_steps));
    for step in state.rl_steps + 1..=last {
        let batch: Vec<RlItem> = schedule
            .batch(step, cfg.rl.batch_size)
            .into_iter()
            .map(|(i, _)| RlItem { graph: &train[i].scene_graph, references: &references[i] })
            .collect();
        let s = scst_step(&mut state.model, &mut opt, &batch, &cfg.rl, &stats, &prep.vocab, step, mix(cfg.seed ^ 0xA1, step))?;
        state.rl_steps = step;
        if let Some(log) = log.as_mut() {
            log.write(&LogRecord::rl(step, &s))?;
        }
        if step % 100 == 0 {
            log::info!("rl step {step}: mean reward {:.4}", s.mean_reward);
        }
        if let Some(d) = out.filter(|_| cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            log.as_mut().map(TrainLog::flush).transpose()?;
            state.optimizer = Some(opt.clone());
            state.save(&d.join("rl.ckpt"))?;
        }
    }
    state.optimizer = Some(opt);
    if let Some(d) = out {
        log.as_mut().map(TrainLog::flush).transpose()?;
        state.save(&d.join("rl.ckpt"))?;
    }
    Ok(state)
}

/// One decoded caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub id: usize,
    pub caption: Vec<String>,
    pub score: f64,
}

/// Beam-search captions for the first `limit` examples of `data`.
pub fn generate_captions(models: &[&Model<f32>], vocab: &Vocab, data: &Dataset, beam: &BeamConfig, limit: Option<usize>) -> Result<Vec<Generated>> {
    let n = limit.unwrap_or(usize::MAX).min(data.examples.len());
    data.examples[..n]
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let h = caption_image(models, &e.scene_graph, beam)?;
            Ok(Generated { id, caption: vocab.decode(&h.tokens), score: h.score })
        })
        .collect()
}

/// Percentage of gold theme words that appear in the generated captions.
pub fn theme_word_recall(data: &Dataset, captions: &[Sentence]) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for (e, c) in data.examples.iter().zip(captions) {
        for theme in &e.themes {
            total += 1;
            hits += usize::from(c.iter().any(|w| w == theme));
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Metrics plus theme-word recall for one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(flatten)]
    pub report: EvalReport,
    pub theme_recall: f64,
}

pub fn evaluate_models(models: &[&Model<f32>], vocab: &Vocab, data: &Dataset, beam: &BeamConfig, limit: Option<usize>) -> Result<(Evaluation, Vec<Generated>)> {
    let generated = generate_captions(models, vocab, data, beam, limit)?;
    let captions: Vec<Sentence> = generated.iter().map(|g| g.caption.clone()).collect();
    let refs = &data.references()[..captions.len()];
    let report = evaluate(&captions, refs)?;
    let theme_recall = theme_word_recall(data, &captions);
    Ok((Evaluation { report, theme_recall }, generated))
}

/// Ensemble members must share a vocabulary.
pub fn check_vocabularies(checkpoints: &[Checkpoint]) -> Result<()> {
    match checkpoints.split_first() {
        None => Err(ExperimentError::Config("no checkpoints given".into())),
        Some((first, rest)) => match rest.iter().position(|c| c.vocab != first.vocab) {
            Some(i) => Err(ExperimentError::Config(format!("checkpoint {} has a different vocabulary than checkpoint 0", i + 1))),
            None => Ok(()),
        },
    }
}

/// Trains the XE phase with `cfg` and returns the final state and its dev evaluation.
pub fn train_and_eval(prep: &Prepared, cfg: &RunConfig, out: Option<&RunDir>) -> Result<(Checkpoint, Evaluation)> {
    if let Some(d) = out {
        write_json(&d.join("config.json"), cfg)?;
    }
    let state = train_xe(prep, cfg, initial_state(prep, cfg)?, out, None)?;
    let (eval, _) = evaluate_models(&[&state.model], &prep.vocab, &prep.splits.dev, &cfg.beam, cfg.eval_limit)?;
    if let Some(d) = out {
        write_json(&d.join("dev_eval.json"), &eval)?;
    }
    Ok((state, eval))
}

/// Rungs of the ablation ladder, each adding one component to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "T+O")]
    TransformerObjects,
    #[serde(rename = "+R")]
    Relations,
    #[serde(rename = "+V")]
    ThemeNodes,
    #[serde(rename = "+GE")]
    GroupEmbeddings,
    #[serde(rename = "+CR")]
    Reconstruction,
    #[serde(rename = "+TA")]
    Alignment,
}

impl Stage {
    pub const LADDER: [Stage; 6] = [
        Stage::TransformerObjects,
        Stage::Relations,
        Stage::ThemeNodes,
        Stage::GroupEmbeddings,
        Stage::Reconstruction,
        Stage::Alignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TransformerObjects => "T+O",
            Stage::Relations => "+R",
            Stage::ThemeNodes => "+V",
            Stage::GroupEmbeddings => "+GE",
            Stage::Reconstruction => "+CR",
            Stage::Alignment => "+TA",
        }
    }

    /// `full` with every component after this rung switched off.
    pub fn configure(self, full: &RunConfig) -> RunConfig {
        let mut c = full.clone();
        let rank = Stage::LADDER.iter().position(|&s| s == self).expect("stage on the ladder");
        if rank < 1 {
            c.model.use_relations = false;
        }
        if rank < 2 {
            c.model.num_theme_nodes = 0;
        }
        if rank < 3 {
            c.model.group_embeddings = false;
        }
        if rank < 4 {
            c.xe.lambda1 = 0.0;
        }
        if rank < 5 {
            c.xe.lambda2 = 0.0;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stage: Stage,
    pub seed: u64,
    pub dev: Evaluation,
}

/// Trains every requested rung for every seed, in ladder order.
pub fn ablate(prep: &Prepared, cfg: &RunConfig, stages: &[Stage], seeds: &[u64], out: Option<&RunDir>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &stage in stages {
        for &seed in seeds {
            let mut c = stage.configure(cfg);
            c.seed = seed;
            let dir = out.map(|d| RunDir::create(d.join(&format!("{}-seed{seed}", stage.name().trim_start_matches('+'))))).transpose()?;
            let (_, dev) = train_and_eval(prep, &c, dir.as_ref())?;
            log::info!("ablation {} seed {seed}: CIDEr-D {:.4}", stage.name(), dev.report.cider_d);
            rows.push(AblationRow { stage, seed, dev });
        }
    }
    if let Some(d) = out {
        write_json(&d.join("ablation.json"), &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theme_nodes: usize,
    pub seed: u64,
    pub bleu4: f64,
    pub cider_d: f64,
}

/// One full-model run per theme-node count, all with `cfg.seed`.
pub fn sweep(prep: &Prepared, cfg: &RunConfig, counts: &[usize], out: Option<&RunDir>) -> Result<Vec<SweepRow>> {
    let mut seen = std::collections::HashSet::new();
    if let Some(c) = counts.iter().find(|&&c| !seen.insert(c)) {
        return Err(ExperimentError::Config(format!("theme count {c} listed twice")));
    }
    let mut rows = Vec::new();
    for &count in counts {
        let mut c = cfg.clone();
        c.model.num_theme_nodes = count;
        if count == 0 {
            c.xe.lambda1 = 0.0;
            c.xe.lambda2 = 0.0;
        }
        let dir = out.map(|d| RunDir::create(d.join(&format!("themes{count}-seed{}", cfg.seed)))).transpose()?;
        let (_, dev) = train_and_eval(prep, &c, dir.as_ref())?;
        rows.push(SweepRow { theme_nodes: count, seed: cfg.seed, bleu4: dev.report.bleu[3], cider_d: dev.report.cider_d });
    }
    if let Some(d) = out {
        write_json(&d.join("sweep.json"), &rows)?;
    }
    Ok(rows)
}

/// Closeness tables over the first `limit` examples of `data`, using each example's first caption.
pub fn interpret_dataset(model: &Model<f32>, vocab: &Vocab, data: &Dataset, limit: Option<usize>, probe: Probe) -> Result<Interpretation> {
    let n = limit.unwrap_or(usize::MAX).min(data.examples.len());
    let framed: Vec<Vec<usize>> = data.examples[..n].iter().map(|e| vocab.encode(&e.captions[0])).collect();
    let items = data.examples[..n].iter().zip(&framed).map(|(e, t)| (&e.scene_graph, t.as_slice()));
    Ok(interpret(model, vocab, items, probe)?)
}

pub fn interpretation_report(interp: &Interpretation) -> Vec<NodeReport> {
    interp.report(DEFAULT_POOL, DEFAULT_PICK)
}

/// Summary written next to the final checkpoint of `train`.
pub fn summary(state: &Checkpoint, dev: &Evaluation) -> Value {
    json!({ "xe_steps": state.xe_steps, "rl_steps": state.rl_steps, "dev": dev })
}
