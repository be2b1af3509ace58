use serde::{Deserialize, Serialize};

use super::TtnError;
use crate::scene_graph::MaskMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub num_theme_nodes: usize,
    pub vocab_size: usize,
    pub relation_vocab_size: usize,
    pub d_o: usize,
    pub dropout: f64,
    #[serde(default)]
    pub mask_mode: MaskMode,
    /// Feed relation nodes to the image encoder.
    #[serde(default = "yes")]
    pub use_relations: bool,
    /// Learn `e_v, e_o, e_r, e_s`; otherwise they stay frozen at zero.
    #[serde(default = "yes")]
    pub group_embeddings: bool,
    /// Relation labels look up the word embedding table.
    #[serde(default = "yes")]
    pub share_relation_embeddings: bool,
    /// Output projection reuses the word embedding table.
    #[serde(default)]
    pub tie_output: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Paper layer counts with desk-scale widths.
    pub fn desk(vocab_size: usize, relation_vocab_size: usize, d_o: usize) -> Self {
        ModelConfig {
            d: 128,
            heads: 4,
            d_ffn: 256,
            enc_layers: 3,
            dec_layers: 1,
            num_theme_nodes: 16,
            vocab_size,
            relation_vocab_size,
            d_o,
            dropout: 0.3,
            mask_mode: MaskMode::Literal,
            use_relations: true,
            group_embeddings: true,
            share_relation_embeddings: true,
            tie_output: false,
        }
    }

    pub fn paper(vocab_size: usize, relation_vocab_size: usize, d_o: usize) -> Self {
        ModelConfig { d: 1024, heads: 8, d_ffn: 2048, ..Self::desk(vocab_size, relation_vocab_size, d_o) }
    }

    pub fn validate(&self) -> Result<(), TtnError> {
        let bad = |m: &str| Err(TtnError::Config(m.to_string()));
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.d_ffn == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("d_ffn, enc_layers and dec_layers must be >= 1");
        }
        if self.vocab_size == 0 || self.d_o == 0 {
            return bad("vocab_size and d_o must be >= 1");
        }
        if self.use_relations && self.relation_vocab_size == 0 {
            return bad("relation_vocab_size must be >= 1 when relations are used");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}
