//! Beam search, greedy decoding and ancestral sampling over a step-wise model.

use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, Scalar};
use crate::scene_graph::SceneGraph;
use crate::ttn::{DecoderState, Memory, Model, Net, Task, TtnError};
use crate::vocab::{BOS, EOS, PAD};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("distribution {index} has length {got}, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] TtnError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPenalty {
    /// `log P / len^alpha`.
    #[default]
    Gnmt,
    /// `log P - alpha * len`.
    PerToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_len: usize,
    #[serde(default)]
    pub penalty: LengthPenalty,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { beam_size: 3, length_penalty: 0.1, max_len: 20, penalty: LengthPenalty::Gnmt }
    }
}

impl BeamConfig {
    /// Score of a hypothesis with total log-probability `log_p` over `len` tokens.
    pub fn score(&self, log_p: f64, len: usize) -> f64 {
        match self.penalty {
            LengthPenalty::Gnmt => log_p / (len.max(1) as f64).powf(self.length_penalty),
            LengthPenalty::PerToken => log_p - self.length_penalty * len as f64,
        }
    }

    /// Best score any extension of a live hypothesis could still reach.
    fn bound(&self, log_p: f64, len: usize) -> f64 {
        match self.penalty {
            LengthPenalty::Gnmt if self.length_penalty > 0.0 => self.score(log_p, self.max_len.max(len)),
            _ => self.score(log_p, len + 1),
        }
    }
}

/// A model that yields next-token distributions one token at a time.
pub trait StepModel {
    type State: Clone;

    /// State before any token has been fed.
    fn start(&mut self) -> Result<Self::State, DecodeError>;

    /// Feeds `token` and returns the new state and the distribution of the next token.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>), DecodeError>;
}

/// A generated sequence (BOS excluded, EOS included when finished).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

/// Arithmetic mean of probability rows.
pub fn average_distributions(dists: &[Vec<f64>]) -> Result<Vec<f64>, DecodeError> {
    let first = dists.first().ok_or(DecodeError::EmptyEnsemble)?;
    let mut out = vec![0.0; first.len()];
    for (i, d) in dists.iter().enumerate() {
        if d.len() != out.len() {
            return Err(DecodeError::LengthMismatch { index: i, expected: out.len(), got: d.len() });
        }
        for (o, &p) in out.iter_mut().zip(d) {
            *o += p;
        }
    }
    let n = dists.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Softmax of raw vocabulary scores in `f64`, never proposing PAD or BOS.
pub fn next_token_distribution<F: Scalar>(logits: &[F]) -> Vec<f64> {
    let mut p: Vec<f64> = logits.iter().map(|x| x.to_f64().unwrap_or(f64::NEG_INFINITY)).collect();
    for banned in [PAD, BOS] {
        if let Some(x) = p.get_mut(banned) {
            *x = f64::NEG_INFINITY;
        }
    }
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in &mut p {
        *x = (*x - max).exp();
        total += *x;
    }
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Candidate ordering: higher value first, then lexicographically smaller tokens, then shorter.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)).then_with(|| a.1.len().cmp(&b.1.len()))
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Beam search. Each step keeps the `beam_size` best expansions; those ending
/// in EOS move to the finished pool. Search ends when no live hypothesis can
/// beat the best finished one, nothing is live, or `max_len` tokens are reached.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &BeamConfig) -> Result<Hypothesis, DecodeError> {
    let beam = cfg.beam_size.max(1);
    let s0 = model.start()?;
    let (state, next) = model.step(&s0, BOS)?;
    let mut live = vec![Live { tokens: Vec::new(), log_prob: 0.0, state, next }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for len in 1..=cfg.max_len {
        let mut cands: Vec<(f64, Vec<usize>, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            for (tok, &p) in hyp.next.iter().enumerate() {
                if p > 0.0 {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    cands.push((hyp.log_prob + p.ln(), tokens, h));
                }
            }
        }
        cands.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(beam);
        let mut next_live = Vec::new();
        for (log_prob, tokens, h) in cands {
            if tokens.last() == Some(&EOS) {
                finished.push(Hypothesis { score: cfg.score(log_prob, len), tokens, log_prob, finished: true });
            } else if len < cfg.max_len {
                let (state, next) = model.step(&live[h].state, *tokens.last().expect("non-empty"))?;
                next_live.push(Live { tokens, log_prob, state, next });
            } else {
                next_live.push(Live { tokens, log_prob, state: live[h].state.clone(), next: Vec::new() });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        let best = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|l| cfg.bound(l.log_prob, len) <= best) {
            break;
        }
    }
    let pool: Vec<Hypothesis> = if finished.is_empty() {
        live.into_iter()
            .map(|l| Hypothesis { score: cfg.score(l.log_prob, l.tokens.len()), tokens: l.tokens, log_prob: l.log_prob, finished: false })
            .collect()
    } else {
        finished
    };
    Ok(pool.into_iter().min_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens))).expect("beam is never empty"))
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy<M: StepModel>(model: &mut M, max_len: usize) -> Result<Hypothesis, DecodeError> {
    let s0 = model.start()?;
    let (mut state, mut next) = model.step(&s0, BOS)?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let (tok, p) = next
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        tokens.push(tok);
        log_prob += p.ln();
        if tok == EOS {
            return Ok(Hypothesis { tokens, log_prob, score: log_prob, finished: true });
        }
        if tokens.len() < max_len {
            (state, next) = model.step(&state, tok)?;
        }
    }
    Ok(Hypothesis { tokens, log_prob, score: log_prob, finished: false })
}

/// Draws one index from `probs`.
pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(probs).expect("a normalized distribution").sample(rng)
}

/// `n` independent ancestral samples, each EOS- or length-terminated.
pub fn sample<M: StepModel>(model: &mut M, n: usize, max_len: usize, seed: u64) -> Result<Vec<Hypothesis>, DecodeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = model.start()?;
    let (root, first) = model.step(&s0, BOS)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut state, mut next) = (root.clone(), first.clone());
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        let mut finished = false;
        while tokens.len() < max_len {
            let tok = sample_index(&next, &mut rng);
            tokens.push(tok);
            log_prob += next[tok].ln();
            if tok == EOS {
                finished = true;
                break;
            }
            if tokens.len() < max_len {
                (state, next) = model.step(&state, tok)?;
            }
        }
        out.push(Hypothesis { tokens, log_prob, score: log_prob, finished });
    }
    Ok(out)
}

/// Per-step probability averaging over several models.
pub struct Ensemble<M> {
    pub members: Vec<M>,
}

impl<M: StepModel> StepModel for Ensemble<M> {
    type State = Vec<M::State>;

    fn start(&mut self) -> Result<Self::State, DecodeError> {
        if self.members.is_empty() {
            return Err(DecodeError::EmptyEnsemble);
        }
        self.members.iter_mut().map(StepModel::start).collect()
    }

    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>), DecodeError> {
        let mut states = Vec::with_capacity(self.members.len());
        let mut dists = Vec::with_capacity(self.members.len());
        for (m, s) in self.members.iter_mut().zip(state) {
            let (s, d) = m.step(s, token)?;
            states.push(s);
            dists.push(d);
        }
        Ok((states, average_distributions(&dists)?))
    }
}

/// Captioning decoder for one image over an evaluation graph.
pub struct ImageCaptioner<'m, F: Scalar> {
    graph: Graph<F>,
    net: Net<'m, F>,
    memory: Memory,
}

impl<'m, F: Scalar> ImageCaptioner<'m, F> {
    pub fn new(model: &'m Model<F>, sg: &SceneGraph) -> Result<Self, DecodeError> {
        let mut graph = Graph::new();
        let net = model.bind(&mut graph, false);
        let enc = net.encode_image(&mut graph, sg)?;
        let memory = net.memory(&mut graph, &enc, Task::Captioning)?;
        Ok(ImageCaptioner { graph, net, memory })
    }
}

impl<F: Scalar> StepModel for ImageCaptioner<'_, F> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState, DecodeError> {
        Ok(DecoderState::default())
    }

    fn step(&mut self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>), DecodeError> {
        let (next, logits) = self.net.decode_step(&mut self.graph, &self.memory, state, token)?;
        Ok((next, next_token_distribution(self.graph.value(logits).data())))
    }
}

/// Beam search for one image over one or more models sharing a vocabulary.
pub fn caption_image<F: Scalar>(models: &[&Model<F>], sg: &SceneGraph, cfg: &BeamConfig) -> Result<Hypothesis, DecodeError> {
    if models.is_empty() {
        return Err(DecodeError::EmptyEnsemble);
    }
    let members = models.iter().map(|m| ImageCaptioner::new(m, sg)).collect::<Result<Vec<_>, _>>()?;
    if members.len() == 1 {
        let mut single = members.into_iter().next().expect("one member");
        return beam_search(&mut single, cfg);
    }
    beam_search(&mut Ensemble { members }, cfg)
}
