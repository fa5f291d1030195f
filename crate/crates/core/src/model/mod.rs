//! Speech-Transformer: convolutional front-end, post-norm encoder/decoder
//! stacks, and the three decoder variants.

mod config;
mod forward;
mod params;
mod pe;
mod persist;

pub use config::{
    DecoderConvSpec, FrontendSpec, ModelConfig, Variant, BOS_ID, EOS_ID, FIRST_TOKEN_ID, PAD_ID,
};
pub use forward::{
    attention, CapturedAttention, MatmulAudit, QuantHooks, QuantSource, Session, SessionStats, LAYER_NORM_EPS,
};
pub use params::{count_params, param_specs, Init, ParamSpec, ParamStore};
pub use pe::sinusoidal_pe;
pub use persist::{checkpoint_config, ATTR_CONFIG, ATTR_KIND};

use crate::error::Result;
use crate::numcore::Tensor;

/// A configuration and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Randomly initialised model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Full-precision teacher-forced logits `[L, vocab]`.
    pub fn logits(&self, features: &Tensor, decoder_input: &[u32]) -> Result<Tensor> {
        let mut s = Session::inference(self, QuantHooks::off());
        let y = s.forward(features, decoder_input)?;
        Ok(s.value(y).clone())
    }

    /// Encoder output `[T', d_model]`.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut s = Session::inference(self, QuantHooks::off());
        let y = s.encode(features)?;
        Ok(s.value(y).clone())
    }
}
