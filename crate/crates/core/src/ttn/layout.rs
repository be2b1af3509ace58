use super::{Init, ModelConfig, TtnError};
use crate::numerics::ParamId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnIds {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnIds {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncLayerIds {
    pub attn: AttnIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecLayerIds {
    pub self_attn: AttnIds,
    pub norm1: NormIds,
    pub cross_attn: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

/// Where each named tensor lives in the parameter store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// `T x d`; absent when `T = 0`.
    pub theme_bank: Option<ParamId>,
    /// `e_v, e_o, e_r, e_s`, each `1 x d`.
    pub group: [ParamId; 4],
    pub word_emb: ParamId,
    pub relation_emb: Option<ParamId>,
    /// `W_o` stored as `d x (d_o + 5)`.
    pub object_w: ParamId,
    pub object_b: ParamId,
    pub encoder: Vec<EncLayerIds>,
    pub decoder: Vec<DecLayerIds>,
    /// `d x vocab`; absent when tied to the word table.
    pub out_w: Option<ParamId>,
    pub out_b: ParamId,
}

type Alloc<'a> = dyn FnMut(String, &[usize], Init) -> Result<ParamId, TtnError> + 'a;

fn linear(alloc: &mut Alloc<'_>, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear, TtnError> {
    Ok(Linear {
        w: alloc(format!("{name}.w"), &[fan_in, fan_out], Init::Xavier)?,
        b: alloc(format!("{name}.b"), &[1, fan_out], Init::Zeros)?,
    })
}

fn norm(alloc: &mut Alloc<'_>, name: &str, d: usize) -> Result<NormIds, TtnError> {
    Ok(NormIds { gamma: alloc(format!("{name}.gamma"), &[1, d], Init::Ones)?, beta: alloc(format!("{name}.beta"), &[1, d], Init::Zeros)? })
}

fn attn(alloc: &mut Alloc<'_>, name: &str, d: usize) -> Result<AttnIds, TtnError> {
    Ok(AttnIds {
        q: linear(alloc, &format!("{name}.q"), d, d)?,
        k: linear(alloc, &format!("{name}.k"), d, d)?,
        v: linear(alloc, &format!("{name}.v"), d, d)?,
        o: linear(alloc, &format!("{name}.o"), d, d)?,
    })
}

fn ffn(alloc: &mut Alloc<'_>, name: &str, d: usize, d_ffn: usize) -> Result<FfnIds, TtnError> {
    Ok(FfnIds { inner: linear(alloc, &format!("{name}.inner"), d, d_ffn)?, outer: linear(alloc, &format!("{name}.outer"), d_ffn, d)? })
}

impl Layout {
    /// Walks the parameter list in a fixed order, asking `alloc` for each id.
    pub(crate) fn build(cfg: &ModelConfig, alloc: &mut Alloc<'_>) -> Result<Self, TtnError> {
        let d = cfg.d;
        let theme_bank = match cfg.num_theme_nodes {
            0 => None,
            t => Some(alloc("theme_bank".into(), &[t, d], Init::Normal(1.0))?),
        };
        let mut group = Vec::new();
        for g in ["v", "o", "r", "s"] {
            group.push(alloc(format!("group.{g}"), &[1, d], Init::Normal(0.1))?);
        }
        let word_emb = alloc("word_emb".into(), &[cfg.vocab_size, d], Init::Normal(1.0))?;
        let relation_emb = if cfg.share_relation_embeddings || cfg.relation_vocab_size == 0 {
            None
        } else {
            Some(alloc("relation_emb".into(), &[cfg.relation_vocab_size, d], Init::Normal(1.0))?)
        };
        let object_w = alloc("object.w".into(), &[d, cfg.d_o + 5], Init::Xavier)?;
        let object_b = alloc("object.b".into(), &[1, d], Init::Zeros)?;
        let mut encoder = Vec::new();
        for l in 0..cfg.enc_layers {
            encoder.push(EncLayerIds {
                attn: attn(alloc, &format!("enc.{l}.attn"), d)?,
                norm1: norm(alloc, &format!("enc.{l}.norm1"), d)?,
                ffn: ffn(alloc, &format!("enc.{l}.ffn"), d, cfg.d_ffn)?,
                norm2: norm(alloc, &format!("enc.{l}.norm2"), d)?,
            });
        }
        let mut decoder = Vec::new();
        for l in 0..cfg.dec_layers {
            decoder.push(DecLayerIds {
                self_attn: attn(alloc, &format!("dec.{l}.self"), d)?,
                norm1: norm(alloc, &format!("dec.{l}.norm1"), d)?,
                cross_attn: attn(alloc, &format!("dec.{l}.cross"), d)?,
                norm2: norm(alloc, &format!("dec.{l}.norm2"), d)?,
                ffn: ffn(alloc, &format!("dec.{l}.ffn"), d, cfg.d_ffn)?,
                norm3: norm(alloc, &format!("dec.{l}.norm3"), d)?,
            });
        }
        let out_w = if cfg.tie_output { None } else { Some(alloc("out.w".into(), &[d, cfg.vocab_size], Init::Xavier)?) };
        let out_b = alloc("out.b".into(), &[1, cfg.vocab_size], Init::Zeros)?;
        Ok(Layout {
            theme_bank,
            group: group.try_into().expect("four group embeddings"),
            word_emb,
            relation_emb,
            object_w,
            object_b,
            encoder,
            decoder,
            out_w,
            out_b,
        })
    }
}
