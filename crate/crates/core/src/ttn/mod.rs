//! Transformer with theme nodes.
//!
//! One encoder serves two views: TTN-V over `(themes, objects, relations)`
//! under the triplet hard mask, and TTN-L over `(themes, caption tokens)`
//! without a mask. A single decoder generates captions from either view.

mod config;
mod forward;
mod layout;

pub use config::ModelConfig;
pub use forward::{
    positional_encoding, DecoderState, EncoderMode, EncoderOutput, Forward, Memory, Net, Task,
};
pub use layout::{AttnIds, DecLayerIds, EncLayerIds, FfnIds, Layout, Linear, NormIds};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::numerics::{Graph, NumericsError, ParamStore, Scalar, Tensor};
use crate::scene_graph::GraphError;

#[derive(Debug, thiserror::Error)]
pub enum TtnError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("object {object} has feature length {got}, expected {expected}")]
    FeatureLength { object: usize, expected: usize, got: usize },
    #[error("{mode:?} encoder {detail}")]
    ModeMask { mode: EncoderMode, detail: &'static str },
    #[error("{task:?} decoding {detail}")]
    Task { task: Task, detail: &'static str },
    #[error("relation label {0} has no token id")]
    RelationToken(usize),
    #[error("missing or misshapen parameter {0}")]
    Param(String),
}

/// Model hyperparameters plus its parameters.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    pub layout: Layout,
    /// Word id of each relation label when relation nodes share the word table.
    pub relation_tokens: Vec<usize>,
}

impl<F: Scalar> Model<F> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, relation_tokens: Vec<usize>, seed: u64) -> Result<Self, TtnError> {
        config.validate()?;
        if config.share_relation_embeddings && relation_tokens.len() != config.relation_vocab_size {
            return Err(TtnError::Config(format!(
                "{} relation tokens for relation vocab {}",
                relation_tokens.len(),
                config.relation_vocab_size
            )));
        }
        if let Some(&bad) = relation_tokens.iter().find(|&&t| t >= config.vocab_size) {
            return Err(TtnError::RelationToken(bad));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut |name, shape, kind| {
            let t = init_tensor::<F>(shape, kind, &mut rng);
            Ok(params.insert(name, t))
        })?;
        let mut model = Model { config, params, layout, relation_tokens };
        if !model.config.group_embeddings {
            model.freeze_group_embeddings();
        }
        Ok(model)
    }

    /// Rebinds a layout over existing parameters (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, relation_tokens: Vec<usize>, params: ParamStore<F>) -> Result<Self, TtnError> {
        config.validate()?;
        let layout = Layout::build(&config, &mut |name, shape, _| {
            let id = params.id(&name).ok_or_else(|| TtnError::Param(name.clone()))?;
            if params.get(id).shape() != shape {
                return Err(TtnError::Param(name));
            }
            Ok(id)
        })?;
        let mut model = Model { config, params, layout, relation_tokens };
        if !model.config.group_embeddings {
            model.freeze_group_embeddings();
        }
        Ok(model)
    }

    /// Zeroes and freezes `e_v, e_o, e_r, e_s`.
    fn freeze_group_embeddings(&mut self) {
        for id in self.layout.group {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = F::zero());
            self.params.set_frozen(id, true);
        }
    }

    /// Binds every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>, requires_grad: bool) -> Net<'_, F> {
        Net::new(self, g, requires_grad)
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            relation_tokens: self.relation_tokens.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Glorot uniform over `[fan_in, fan_out]`.
    Xavier,
    Normal(f64),
    Zeros,
    Ones,
}

fn init_tensor<F: Scalar>(shape: &[usize], kind: Init, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = match kind {
        Init::Zeros => vec![F::zero(); n],
        Init::Ones => vec![F::one(); n],
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| F::from_f64_lossy(dist.sample(rng))).collect()
        }
        Init::Xavier => {
            let (fan_in, fan_out) = (shape[0] as f64, shape[shape.len() - 1] as f64);
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
            (0..n).map(|_| F::from_f64_lossy(dist.sample(rng))).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

#[cfg(test)]
mod tests;
