use std::sync::Arc;

use crate::numerics::{Bound, Graph, ParamId, Scalar, Tensor, Var};
use crate::scene_graph::{build_mask, AttentionMask, SceneGraph};
use crate::vocab::BOS;

use super::{AttnIds, FfnIds, Linear, Model, NormIds, TtnError};

/// Which view the shared encoder is run on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    /// TTN-V: themes, objects and relations under the hard mask.
    Visual,
    /// TTN-L: themes and caption tokens, unmasked.
    Language,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Cross-attention sees every image-encoder state.
    Captioning,
    /// Cross-attention sees only the caption-encoder theme states.
    Reconstruction,
}

/// Encoder states with their block boundaries and per-layer, per-head attention weights.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub mode: EncoderMode,
    pub states: Var,
    pub num_themes: usize,
    pub num_objects: usize,
    pub num_relations: usize,
    pub num_tokens: usize,
    pub attention: Vec<Vec<Var>>,
}

impl EncoderOutput {
    fn block<F: Scalar>(&self, g: &mut Graph<F>, start: usize, len: usize) -> Option<Var> {
        (len > 0).then(|| g.slice_rows(self.states, start, len).expect("block within states"))
    }

    pub fn rows(&self) -> usize {
        self.num_themes + self.num_objects + self.num_relations + self.num_tokens
    }

    pub fn theme_states<F: Scalar>(&self, g: &mut Graph<F>) -> Option<Var> {
        self.block(g, 0, self.num_themes)
    }

    pub fn object_states<F: Scalar>(&self, g: &mut Graph<F>) -> Option<Var> {
        self.block(g, self.num_themes, self.num_objects)
    }

    pub fn relation_states<F: Scalar>(&self, g: &mut Graph<F>) -> Option<Var> {
        self.block(g, self.num_themes + self.num_objects, self.num_relations)
    }

    pub fn token_states<F: Scalar>(&self, g: &mut Graph<F>) -> Option<Var> {
        self.block(g, self.num_themes, self.num_tokens)
    }
}

/// Cross-attention keys and values for every decoder layer.
#[derive(Clone, Debug)]
pub struct Memory {
    pub task: Task,
    /// Number of visible encoder rows.
    pub rows: usize,
    kv: Vec<(Var, Var)>,
}

/// Self-attention cache for incremental decoding. Cloning forks a hypothesis.
#[derive(Clone, Debug, Default)]
pub struct DecoderState {
    pos: usize,
    cache: Vec<Option<(Var, Var)>>,
}

impl DecoderState {
    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

/// Teacher-forced output of one task.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `|target| x vocab` pre-softmax scores.
    pub logits: Var,
    pub targets: Vec<usize>,
    pub enc: EncoderOutput,
}

/// Sinusoidal encoding: row `p`, columns `2i, 2i+1` are `sin, cos` of `p / 10000^(2i/d)`.
pub fn positional_encoding<F: Scalar>(n: usize, d: usize) -> Tensor<F> {
    Tensor::from_fn(&[n, d], |k| {
        let (pos, col) = (k / d, k % d);
        let angle = pos as f64 / 10000f64.powf((col - col % 2) as f64 / d as f64);
        F::from_f64_lossy(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

fn causal_mask<F: Scalar>(n: usize) -> Arc<Tensor<F>> {
    Arc::new(Tensor::from_fn(&[n, n], |k| if k % n > k / n { F::neg_infinity() } else { F::zero() }))
}

/// A model bound to one graph.
pub struct Net<'m, F: Scalar> {
    pub model: &'m Model<F>,
    bound: Bound,
}

impl<'m, F: Scalar> Net<'m, F> {
    pub(super) fn new(model: &'m Model<F>, g: &mut Graph<F>, requires_grad: bool) -> Self {
        Net { model, bound: Bound::new(g, &model.params, requires_grad) }
    }

    /// Uses an existing binding, e.g. one made over a perturbed copy of the parameters.
    pub fn rebind(model: &'m Model<F>, bound: Bound) -> Self {
        Net { model, bound }
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.bound.get(id)
    }

    fn rate(&self) -> f64 {
        self.model.config.dropout
    }

    fn linear(&self, g: &mut Graph<F>, x: Var, l: Linear) -> Result<Var, TtnError> {
        let y = g.matmul(x, self.param(l.w))?;
        Ok(g.add_row(y, self.param(l.b))?)
    }

    fn norm(&self, g: &mut Graph<F>, x: Var, n: NormIds) -> Result<Var, TtnError> {
        Ok(g.layer_norm(x, self.param(n.gamma), self.param(n.beta))?)
    }

    fn ffn(&self, g: &mut Graph<F>, x: Var, f: FfnIds) -> Result<Var, TtnError> {
        let h = self.linear(g, x, f.inner)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.rate());
        self.linear(g, h, f.outer)
    }

    fn group(&self, i: usize) -> Var {
        self.param(self.model.layout.group[i])
    }

    /// Theme rows `Emb(v_i) + e_v`.
    fn theme_rows(&self, g: &mut Graph<F>) -> Result<Option<Var>, TtnError> {
        match self.model.layout.theme_bank {
            None => Ok(None),
            Some(id) => Ok(Some(g.add_row(self.param(id), self.group(0))?)),
        }
    }

    /// The image graph the encoder actually sees (relations dropped when disabled).
    fn effective<'s>(&self, sg: &'s SceneGraph) -> std::borrow::Cow<'s, SceneGraph> {
        if self.model.config.use_relations {
            std::borrow::Cow::Borrowed(sg)
        } else {
            std::borrow::Cow::Owned(SceneGraph { relations: Vec::new(), triplets: Vec::new(), ..sg.clone() })
        }
    }

    /// Hard mask for `sg` in this model's layout.
    pub fn image_mask(&self, sg: &SceneGraph) -> AttentionMask {
        let cfg = &self.model.config;
        build_mask(&self.effective(sg), cfg.num_theme_nodes, cfg.mask_mode)
    }

    /// `H0_ice` with rows `(themes, objects, relations)`.
    pub fn embed_image_inputs(&self, g: &mut Graph<F>, sg: &SceneGraph) -> Result<Var, TtnError> {
        let cfg = &self.model.config;
        let sg = self.effective(sg);
        let geometry = sg.geometry()?;
        let width = cfg.d_o + 5;
        let mut raw = Vec::with_capacity(sg.objects.len() * width);
        for (i, (o, p)) in sg.objects.iter().zip(&geometry).enumerate() {
            if o.feature.len() != cfg.d_o {
                return Err(TtnError::FeatureLength { object: i, expected: cfg.d_o, got: o.feature.len() });
            }
            raw.extend(o.feature.iter().chain(p.iter()).map(|&x| F::from_f64_lossy(x)));
        }
        let mut parts = Vec::new();
        if let Some(themes) = self.theme_rows(g)? {
            parts.push(themes);
        }
        if !sg.objects.is_empty() {
            let x = g.constant(Tensor::new(vec![sg.objects.len(), width], raw)?);
            let h = g.matmul_ex(x, self.param(self.model.layout.object_w), false, true)?;
            let h = g.add_row(h, self.param(self.model.layout.object_b))?;
            parts.push(g.add_row(h, self.group(1))?);
        }
        if !sg.relations.is_empty() {
            let (table, ids) = match self.model.layout.relation_emb {
                Some(t) => (t, sg.relations.iter().map(|r| r.label_id).collect::<Vec<_>>()),
                None => {
                    let ids = sg
                        .relations
                        .iter()
                        .map(|r| self.model.relation_tokens.get(r.label_id).copied().ok_or(TtnError::RelationToken(r.label_id)))
                        .collect::<Result<Vec<_>, _>>()?;
                    (self.model.layout.word_emb, ids)
                }
            };
            let e = g.embedding(self.param(table), &ids)?;
            parts.push(g.add_row(e, self.group(2))?);
        }
        let h = g.concat_rows(&parts)?;
        Ok(g.dropout(h, self.rate()))
    }

    /// `H0_cre` with rows `(themes, tokens)`; positions count caption tokens only.
    pub fn embed_caption_inputs(&self, g: &mut Graph<F>, tokens: &[usize]) -> Result<Var, TtnError> {
        let mut parts = Vec::new();
        if let Some(themes) = self.theme_rows(g)? {
            parts.push(themes);
        }
        if !tokens.is_empty() {
            let e = g.embedding(self.param(self.model.layout.word_emb), tokens)?;
            let pe = g.constant(positional_encoding(tokens.len(), self.model.config.d));
            let e = g.add(e, pe)?;
            parts.push(g.add_row(e, self.group(3))?);
        }
        let h = g.concat_rows(&parts)?;
        Ok(g.dropout(h, self.rate()))
    }

    /// Scaled dot-product attention over already projected `q, k, v`, split into heads.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        g: &mut Graph<F>,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Arc<Tensor<F>>>,
        out: Linear,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, TtnError> {
        let heads = self.model.config.heads;
        let dk = self.model.config.head_dim();
        let scale = F::from_f64_lossy(1.0 / (dk as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dk, dk)?, g.slice_cols(k, h * dk, dk)?, g.slice_cols(v, h * dk, dk)?)
            };
            let s = g.matmul_ex(qh, kh, false, true)?;
            let s = g.scale(s, scale);
            let s = match mask {
                Some(m) => g.masked_add(s, Arc::clone(m))?,
                None => s,
            };
            let a = g.softmax(s);
            if let Some(t) = trace.as_deref_mut() {
                t.push(a);
            }
            let a = g.dropout(a, self.rate());
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.linear(g, cat, out)
    }

    /// `MHA(Q, K, V)`, or `MMHA` when `mask` is given (same mask for every head).
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &self,
        g: &mut Graph<F>,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: Option<&Arc<Tensor<F>>>,
        ids: &AttnIds,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, TtnError> {
        let q = self.linear(g, q_in, ids.q)?;
        let k = self.linear(g, k_in, ids.k)?;
        let v = self.linear(g, v_in, ids.v)?;
        self.attend(g, q, k, v, mask, ids.o, trace)
    }

    /// Post-norm layer: `H' = LN(H + MMHA(H, H, H))`, `LN(H' + FFN(H'))`.
    pub fn encoder_layer(
        &self,
        g: &mut Graph<F>,
        h: Var,
        mask: Option<&Arc<Tensor<F>>>,
        layer: usize,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, TtnError> {
        let ids = self.model.layout.encoder[layer];
        let a = self.multi_head_attention(g, h, h, h, mask, &ids.attn, trace)?;
        let h1 = g.add(h, a)?;
        let h1 = self.norm(g, h1, ids.norm1)?;
        let f = self.ffn(g, h1, ids.ffn)?;
        let h2 = g.add(h1, f)?;
        self.norm(g, h2, ids.norm2)
    }

    /// Runs every encoder layer. TTN-V needs a mask and TTN-L must not have one.
    #[allow(clippy::too_many_arguments)]
    pub fn run_encoder(
        &self,
        g: &mut Graph<F>,
        input: Var,
        mode: EncoderMode,
        mask: Option<&Arc<Tensor<F>>>,
        num_objects: usize,
        num_relations: usize,
        num_tokens: usize,
    ) -> Result<EncoderOutput, TtnError> {
        match (mode, mask.is_some()) {
            (EncoderMode::Visual, false) => return Err(TtnError::ModeMask { mode, detail: "requires a mask" }),
            (EncoderMode::Language, true) => return Err(TtnError::ModeMask { mode, detail: "must not be masked" }),
            _ => {}
        }
        let valid = match mode {
            EncoderMode::Visual => num_tokens == 0,
            EncoderMode::Language => num_objects == 0 && num_relations == 0,
        };
        if !valid {
            return Err(TtnError::ModeMask { mode, detail: "received blocks of the other view" });
        }
        let num_themes = self.model.config.num_theme_nodes;
        let rows = num_themes + num_objects + num_relations + num_tokens;
        if g.shape(input) != [rows, self.model.config.d] {
            return Err(TtnError::ModeMask { mode, detail: "input rows do not match the block sizes" });
        }
        let mut h = input;
        let mut attention = Vec::with_capacity(self.model.config.enc_layers);
        for l in 0..self.model.config.enc_layers {
            let mut trace = Vec::new();
            h = self.encoder_layer(g, h, mask, l, Some(&mut trace))?;
            attention.push(trace);
        }
        Ok(EncoderOutput { mode, states: h, num_themes, num_objects, num_relations, num_tokens, attention })
    }

    /// TTN-V over a scene graph.
    pub fn encode_image(&self, g: &mut Graph<F>, sg: &SceneGraph) -> Result<EncoderOutput, TtnError> {
        let input = self.embed_image_inputs(g, sg)?;
        let mask = Arc::new(self.image_mask(sg).to_tensor::<F>());
        let nr = if self.model.config.use_relations { sg.relations.len() } else { 0 };
        self.run_encoder(g, input, EncoderMode::Visual, Some(&mask), sg.objects.len(), nr, 0)
    }

    /// TTN-L over a framed caption.
    pub fn encode_caption(&self, g: &mut Graph<F>, tokens: &[usize]) -> Result<EncoderOutput, TtnError> {
        let input = self.embed_caption_inputs(g, tokens)?;
        self.run_encoder(g, input, EncoderMode::Language, None, 0, 0, tokens.len())
    }

    /// Projects the states visible to `task` into per-layer cross-attention keys and values.
    pub fn memory(&self, g: &mut Graph<F>, enc: &EncoderOutput, task: Task) -> Result<Memory, TtnError> {
        let visible = match (task, enc.mode) {
            (Task::Captioning, EncoderMode::Visual) => enc.states,
            (Task::Reconstruction, EncoderMode::Language) => enc
                .theme_states(g)
                .ok_or(TtnError::Task { task, detail: "needs at least one theme node" })?,
            _ => return Err(TtnError::Task { task, detail: "got encoder output of the wrong view" }),
        };
        let rows = g.shape(visible)[0];
        let mut kv = Vec::with_capacity(self.model.layout.decoder.len());
        for ids in &self.model.layout.decoder {
            let k = self.linear(g, visible, ids.cross_attn.k)?;
            let v = self.linear(g, visible, ids.cross_attn.v)?;
            kv.push((k, v));
        }
        Ok(Memory { task, rows, kv })
    }

    fn decoder_inputs(&self, g: &mut Graph<F>, tokens: &[usize], start: usize) -> Result<Var, TtnError> {
        let e = g.embedding(self.param(self.model.layout.word_emb), tokens)?;
        let pe = positional_encoding::<F>(start + tokens.len(), self.model.config.d);
        let d = self.model.config.d;
        let pe = Tensor::new(vec![tokens.len(), d], pe.data()[start * d..].to_vec())?;
        let pe = g.constant(pe);
        let x = g.add(e, pe)?;
        Ok(g.dropout(x, self.rate()))
    }

    /// Teacher-forced decoder over a whole prefix; row `i` only sees prefix rows `<= i`.
    pub fn decode_prefix(&self, g: &mut Graph<F>, prefix: &[usize], memory: &Memory) -> Result<Var, TtnError> {
        let mut h = self.decoder_inputs(g, prefix, 0)?;
        let causal = causal_mask::<F>(prefix.len());
        for (ids, &(mk, mv)) in self.model.layout.decoder.iter().zip(&memory.kv) {
            let a = self.multi_head_attention(g, h, h, h, Some(&causal), &ids.self_attn, None)?;
            let s = g.add(h, a)?;
            let h1 = self.norm(g, s, ids.norm1)?;
            let q = self.linear(g, h1, ids.cross_attn.q)?;
            let c = self.attend(g, q, mk, mv, None, ids.cross_attn.o, None)?;
            let s = g.add(h1, c)?;
            let h2 = self.norm(g, s, ids.norm2)?;
            let f = self.ffn(g, h2, ids.ffn)?;
            let s = g.add(h2, f)?;
            h = self.norm(g, s, ids.norm3)?;
        }
        Ok(h)
    }

    /// Decoder states for `prefix` (which must start with BOS) over the keys visible to `task`.
    pub fn run_decoder(&self, g: &mut Graph<F>, prefix: &[usize], enc: &EncoderOutput, task: Task) -> Result<Var, TtnError> {
        if prefix.first() != Some(&BOS) {
            return Err(TtnError::Task { task, detail: "prefix must start with BOS" });
        }
        let memory = self.memory(g, enc, task)?;
        self.decode_prefix(g, prefix, &memory)
    }

    /// Feeds one token and returns the `1 x vocab` logits for the next position.
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        memory: &Memory,
        state: &DecoderState,
        token: usize,
    ) -> Result<(DecoderState, Var), TtnError> {
        let layers = &self.model.layout.decoder;
        let mut cache = if state.cache.is_empty() { vec![None; layers.len()] } else { state.cache.clone() };
        let mut h = self.decoder_inputs(g, &[token], state.pos)?;
        for (l, (ids, &(mk, mv))) in layers.iter().zip(&memory.kv).enumerate() {
            let q = self.linear(g, h, ids.self_attn.q)?;
            let k_new = self.linear(g, h, ids.self_attn.k)?;
            let v_new = self.linear(g, h, ids.self_attn.v)?;
            let (k, v) = match cache[l] {
                Some((k, v)) => (g.concat_rows(&[k, k_new])?, g.concat_rows(&[v, v_new])?),
                None => (k_new, v_new),
            };
            cache[l] = Some((k, v));
            let a = self.attend(g, q, k, v, None, ids.self_attn.o, None)?;
            let s = g.add(h, a)?;
            let h1 = self.norm(g, s, ids.norm1)?;
            let q = self.linear(g, h1, ids.cross_attn.q)?;
            let c = self.attend(g, q, mk, mv, None, ids.cross_attn.o, None)?;
            let s = g.add(h1, c)?;
            let h2 = self.norm(g, s, ids.norm2)?;
            let f = self.ffn(g, h2, ids.ffn)?;
            let s = g.add(h2, f)?;
            h = self.norm(g, s, ids.norm3)?;
        }
        let logits = self.vocab_logits(g, h)?;
        Ok((DecoderState { pos: state.pos + 1, cache }, logits))
    }

    /// `W_d H + b_d`.
    pub fn vocab_logits(&self, g: &mut Graph<F>, h: Var) -> Result<Var, TtnError> {
        let layout = &self.model.layout;
        let y = match layout.out_w {
            Some(w) => g.matmul(h, self.param(w))?,
            None => g.matmul_ex(h, self.param(layout.word_emb), false, true)?,
        };
        Ok(g.add_row(y, self.param(layout.out_b))?)
    }

    /// `Softmax(W_d H + b_d)`.
    pub fn project_vocab(&self, g: &mut Graph<F>, h: Var) -> Result<Var, TtnError> {
        let logits = self.vocab_logits(g, h)?;
        Ok(g.softmax(logits))
    }

    fn teacher_forced(&self, g: &mut Graph<F>, tokens: &[usize], enc: EncoderOutput, task: Task) -> Result<Forward, TtnError> {
        if tokens.len() < 2 {
            return Err(TtnError::Task { task, detail: "needs a framed caption of at least two tokens" });
        }
        let h = self.run_decoder(g, &tokens[..tokens.len() - 1], &enc, task)?;
        let logits = self.vocab_logits(g, h)?;
        Ok(Forward { logits, targets: tokens[1..].to_vec(), enc })
    }

    /// Image -> caption, teacher forced on the framed `tokens`.
    pub fn forward_captioning(&self, g: &mut Graph<F>, sg: &SceneGraph, tokens: &[usize]) -> Result<Forward, TtnError> {
        let enc = self.encode_image(g, sg)?;
        self.teacher_forced(g, tokens, enc, Task::Captioning)
    }

    /// Caption -> caption through the theme states only.
    pub fn forward_reconstruction(&self, g: &mut Graph<F>, tokens: &[usize]) -> Result<Forward, TtnError> {
        let enc = self.encode_caption(g, tokens)?;
        self.teacher_forced(g, tokens, enc, Task::Reconstruction)
    }
}
