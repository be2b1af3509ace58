//! Cross-entropy training with the three-term objective, then self-critical RL.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{next_token_distribution, sample_index};
use crate::metrics::{cider_single, CorpusStats, Sentence};
use crate::numerics::{Graph, NumericsError, Reduction, Scalar, Var};
use crate::scene_graph::SceneGraph;
use crate::ttn::{DecoderState, Model, Net, Task, TtnError};
use crate::vocab::{Vocab, BOS, EOS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] TtnError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite loss at step {step}: l0={l0} l1={l1} l2={l2}")]
    NonFinite { step: u64, l0: f64, l1: f64, l2: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XeConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub label_smoothing: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub adam_betas: (f64, f64),
    pub batch_size: usize,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for XeConfig {
    fn default() -> Self {
        XeConfig {
            lambda1: 0.5,
            lambda2: 10.0,
            label_smoothing: 0.2,
            lr: 1e-3,
            warmup_steps: 100,
            total_steps: 2000,
            adam_betas: (0.9, 0.999),
            batch_size: 8,
            grad_clip: None,
        }
    }
}

impl XeConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(TrainError::Config("loss weights must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Config("label smoothing must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(TrainError::Config("batch_size and total_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    CiderD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub k: usize,
    pub lr: f64,
    pub max_decode_len: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub reward: RewardKind,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { k: 5, lr: 8e-5, max_decode_len: 20, warmup_steps: 100, total_steps: 1000, batch_size: 4, reward: RewardKind::CiderD }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.k < 2 {
            return Err(TrainError::Config("k must be >= 2 for the leave-one-out baseline".into()));
        }
        if self.batch_size == 0 || self.max_decode_len == 0 {
            return Err(TrainError::Config("batch_size and max_decode_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at 1-based `step`: linear warmup to `base`, then linear decay to 0 at `total`.
pub fn lr_at(base: f64, step: u64, warmup: u64, total: u64) -> f64 {
    if warmup > 0 && step <= warmup {
        return base * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    base * (total - step) as f64 / (total - warmup).max(1) as f64
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub betas: (f64, f64),
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(betas: (f64, f64)) -> Self {
        Adam { betas, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every parameter that received a gradient.
    pub fn update<F: Scalar>(&mut self, model: &mut Model<F>, grads: &[Option<Vec<F>>], lr: f64) {
        self.step += 1;
        if self.m.len() != grads.len() {
            self.m = vec![Vec::new(); grads.len()];
            self.v = vec![Vec::new(); grads.len()];
        }
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if model.params.is_frozen(i) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != g.len() {
                *m = vec![0.0; g.len()];
                *v = vec![0.0; g.len()];
            }
            let p = model.params.tensor_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g[j].to_f64().unwrap_or(0.0);
                let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let delta = lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                p[j] -= F::from_f64_lossy(delta);
            }
        }
    }
}

fn clip<F: Scalar>(grads: &mut [Option<Vec<F>>], max_norm: f64) {
    let norm = grads.iter().flatten().flat_map(|g| g.iter()).map(|x| x.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = F::from_f64_lossy(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
}

/// Label-smoothed NLL averaged over target positions, from raw scores.
pub fn nll_loss<F: Scalar>(g: &mut Graph<F>, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var, NumericsError> {
    g.cross_entropy(logits, targets, smoothing, Reduction::Mean)
}

/// Mean over nodes of `|| a/|a| - b/|b| ||^2`.
pub fn alignment_loss<F: Scalar>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var, NumericsError> {
    if g.shape(a) != g.shape(b) {
        return Err(NumericsError::Shape { op: "alignment_loss", detail: format!("{:?} vs {:?}", g.shape(a), g.shape(b)) });
    }
    let rows = g.shape(a)[0].max(1);
    let na = g.l2_normalize(a);
    let nb = g.l2_normalize(b);
    let diff = g.sub(na, nb)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.scale(total, F::from_f64_lossy(1.0 / rows as f64)))
}

/// One training pair: an image and one framed reference caption.
#[derive(Clone, Copy, Debug)]
pub struct XeItem<'a> {
    pub graph: &'a SceneGraph,
    pub tokens: &'a [usize],
}

/// Loss components of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct XeStats {
    pub loss: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub lr: f64,
}

/// Builds `L = L0 + λ1 L1 + λ2 L2` averaged over `batch`; terms with zero weight are skipped.
pub fn xe_loss<F: Scalar>(
    g: &mut Graph<F>,
    net: &Net<'_, F>,
    batch: &[XeItem<'_>],
    cfg: &XeConfig,
) -> Result<(Var, XeStats), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut stats = XeStats::default();
    for item in batch {
        let cap = net.forward_captioning(g, item.graph, item.tokens)?;
        let l0 = nll_loss(g, cap.logits, &cap.targets, cfg.label_smoothing)?;
        stats.l0 += g.value(l0).item().to_f64().unwrap_or(f64::NAN);
        let mut total = l0;
        if cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0 {
            let rec = net.forward_reconstruction(g, item.tokens)?;
            if cfg.lambda1 > 0.0 {
                let l1 = nll_loss(g, rec.logits, &rec.targets, cfg.label_smoothing)?;
                stats.l1 += g.value(l1).item().to_f64().unwrap_or(f64::NAN);
                let w = g.scale(l1, F::from_f64_lossy(cfg.lambda1));
                total = g.add(total, w)?;
            }
            if cfg.lambda2 > 0.0 {
                let (Some(hv), Some(hc)) = (cap.enc.theme_states(g), rec.enc.theme_states(g)) else {
                    return Err(TrainError::Config("alignment loss needs theme nodes".into()));
                };
                let l2 = alignment_loss(g, hv, hc)?;
                stats.l2 += g.value(l2).item().to_f64().unwrap_or(f64::NAN);
                let w = g.scale(l2, F::from_f64_lossy(cfg.lambda2));
                total = g.add(total, w)?;
            }
        }
        terms.push(total);
    }
    let sum = g.add_all(&terms)?;
    let n = batch.len() as f64;
    let loss = g.scale(sum, F::from_f64_lossy(1.0 / n));
    stats.loss = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
    stats.l0 /= n;
    stats.l1 /= n;
    stats.l2 /= n;
    Ok((loss, stats))
}

/// One optimizer step on the combined objective. `step` is 1-based.
pub fn xe_step<F: Scalar>(
    model: &mut Model<F>,
    opt: &mut Adam,
    batch: &[XeItem<'_>],
    cfg: &XeConfig,
    step: u64,
    dropout_seed: u64,
) -> Result<XeStats, TrainError> {
    let mut g = Graph::training(dropout_seed);
    let (loss, mut stats, mut grads) = {
        let net = model.bind(&mut g, true);
        let (loss, stats) = xe_loss(&mut g, &net, batch, cfg)?;
        if !stats.loss.is_finite() {
            return Err(TrainError::NonFinite { step, l0: stats.l0, l1: stats.l1, l2: stats.l2 });
        }
        g.backward(loss)?;
        let grads = net.bound().grads(&g);
        (loss, stats, grads)
    };
    let _ = loss;
    if let Some(c) = cfg.grad_clip {
        clip(&mut grads, c);
    }
    stats.lr = lr_at(cfg.lr, step, cfg.warmup_steps, cfg.total_steps);
    opt.update(model, &grads, stats.lr);
    Ok(stats)
}

/// Leave-one-out baselines `b_k = mean_{j != k} r_j`.
pub fn scst_baselines(rewards: &[f64]) -> Vec<f64> {
    let k = rewards.len();
    if k < 2 {
        return vec![0.0; k];
    }
    (0..k)
        .map(|i| rewards.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r).sum::<f64>() / (k - 1) as f64)
        .collect()
}

/// `r_k - b_k` for every sample.
pub fn scst_advantages(rewards: &[f64]) -> Vec<f64> {
    rewards.iter().zip(scst_baselines(rewards)).map(|(r, b)| r - b).collect()
}

/// One image with its references, for the RL phase.
#[derive(Clone, Copy, Debug)]
pub struct RlItem<'a> {
    pub graph: &'a SceneGraph,
    pub references: &'a [Sentence],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScstStats {
    pub mean_reward: f64,
    pub loss: f64,
    pub lr: f64,
    /// False when every advantage was zero and the update was skipped.
    pub updated: bool,
}

/// A sampled caption with its accumulated `-log p` node.
struct Rollout {
    words: Sentence,
    neg_log_p: Var,
}

fn rollout<F: Scalar>(
    g: &mut Graph<F>,
    net: &Net<'_, F>,
    memory: &crate::ttn::Memory,
    vocab: &Vocab,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainError> {
    let mut state = DecoderState::default();
    let mut token = BOS;
    let mut tokens = Vec::new();
    let mut terms = Vec::new();
    while tokens.len() < max_len {
        let (next, logits) = net.decode_step(g, memory, &state, token)?;
        let probs = next_token_distribution(g.value(logits).data());
        token = sample_index(&probs, rng);
        terms.push(g.cross_entropy(logits, &[token], 0.0, Reduction::Sum)?);
        tokens.push(token);
        state = next;
        if token == EOS {
            break;
        }
    }
    let neg_log_p = g.add_all(&terms)?;
    Ok(Rollout { words: vocab.decode(&tokens), neg_log_p })
}

/// Reward of one sampled caption.
pub fn reward(kind: RewardKind, candidate: &[String], references: &[Sentence], stats: &CorpusStats) -> f64 {
    match kind {
        RewardKind::CiderD => cider_single(candidate, references, stats),
    }
}

/// One SCST update: `K` samples per image, loss `-(1/K) Σ (r_k - b_k) log p(S_k)`.
///
/// Sampling and the likelihoods use an evaluation graph, so dropout is off.
#[allow(clippy::too_many_arguments)]
pub fn scst_step<F: Scalar>(
    model: &mut Model<F>,
    opt: &mut Adam,
    batch: &[RlItem<'_>],
    cfg: &RlConfig,
    stats: &CorpusStats,
    vocab: &Vocab,
    step: u64,
    seed: u64,
) -> Result<ScstStats, TrainError> {
    scst_step_with(model, opt, batch, cfg, vocab, step, seed, |cand, refs| reward(cfg.reward, cand, refs, stats))
}

/// [`scst_step`] with an injected reward function.
#[allow(clippy::too_many_arguments)]
pub fn scst_step_with<F: Scalar>(
    model: &mut Model<F>,
    opt: &mut Adam,
    batch: &[RlItem<'_>],
    cfg: &RlConfig,
    vocab: &Vocab,
    step: u64,
    seed: u64,
    mut reward_fn: impl FnMut(&[String], &[Sentence]) -> f64,
) -> Result<ScstStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let net = model.bind(&mut g, true);
    let mut terms = Vec::new();
    let mut reward_sum = 0.0;
    let mut any_signal = false;
    for item in batch {
        let enc = net.encode_image(&mut g, item.graph)?;
        let memory = net.memory(&mut g, &enc, Task::Captioning)?;
        let mut rewards = Vec::with_capacity(cfg.k);
        let mut nodes = Vec::with_capacity(cfg.k);
        for _ in 0..cfg.k {
            let r = rollout(&mut g, &net, &memory, vocab, cfg.max_decode_len, &mut rng)?;
            rewards.push(reward_fn(&r.words, item.references));
            nodes.push(r.neg_log_p);
        }
        reward_sum += rewards.iter().sum::<f64>();
        for (adv, node) in scst_advantages(&rewards).into_iter().zip(nodes) {
            if adv != 0.0 {
                any_signal = true;
                terms.push(g.scale(node, F::from_f64_lossy(adv / cfg.k as f64)));
            }
        }
    }
    let n = batch.len() as f64;
    let mut out = ScstStats {
        mean_reward: reward_sum / (n * cfg.k as f64),
        lr: lr_at(cfg.lr, step, cfg.warmup_steps, cfg.total_steps),
        ..Default::default()
    };
    if !any_signal {
        return Ok(out);
    }
    let sum = g.add_all(&terms)?;
    let loss = g.scale(sum, F::from_f64_lossy(1.0 / n));
    out.loss = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
    if !out.loss.is_finite() {
        return Err(TrainError::NonFinite { step, l0: out.loss, l1: 0.0, l2: 0.0 });
    }
    g.backward(loss)?;
    let grads = net.bound().grads(&g);
    drop(net);
    opt.update(model, &grads, out.lr);
    out.updated = true;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Xe,
    Rl,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub l0: Option<f64>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub reward: Option<f64>,
    pub lr: f64,
}

impl LogRecord {
    pub fn xe(step: u64, s: &XeStats) -> Self {
        LogRecord { step, phase: Phase::Xe, loss: s.loss, l0: Some(s.l0), l1: Some(s.l1), l2: Some(s.l2), reward: None, lr: s.lr }
    }

    pub fn rl(step: u64, s: &ScstStats) -> Self {
        LogRecord { step, phase: Phase::Rl, loss: s.loss, l0: None, l1: None, l2: None, reward: Some(s.mean_reward), lr: s.lr }
    }
}

/// JSON-lines writer.
pub struct TrainLog {
    out: BufWriter<File>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        Ok(TrainLog { out: BufWriter::new(File::options().create(true).append(true).open(path)?) })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<(), TrainError> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }
}
