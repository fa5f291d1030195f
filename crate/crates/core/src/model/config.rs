use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
/// First id available for ordinary tokens.
pub const FIRST_TOKEN_ID: u32 = 3;

/// The three architectures compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Causal 1D convolutions over decoder embeddings, no positional encoding.
    ConvContext,
    /// Neither decoder convolutions nor positional encodings.
    Proposed,
    /// The proposed model plus sinusoidal encodings on decoder embeddings.
    ProposedPe,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ConvContext, Variant::Proposed, Variant::ProposedPe];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ConvContext => "conv-context",
            Variant::Proposed => "proposed",
            Variant::ProposedPe => "proposed-pe",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected conv-context, proposed or proposed-pe)")))
    }
}

/// 2D convolution blocks that downsample the spectrogram before the encoder.
/// Each block is conv (kernel×kernel, stride 1, same padding) → ReLU →
/// max-pool (pool×pool, stride pool).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSpec {
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for FrontendSpec {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 2,
            kernel: 3,
            pool: 2,
        }
    }
}

impl FrontendSpec {
    /// Overall reduction factor along each axis.
    pub fn reduction(&self) -> usize {
        self.pool.pow(self.blocks as u32)
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Extent of an axis after all blocks.
    pub fn reduced(&self, len: usize) -> usize {
        (0..self.blocks).fold(len, |l, _| l / self.pool)
    }
}

/// Causal 1D convolutions applied to decoder embeddings (conv-context only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConvSpec {
    pub blocks: usize,
    pub width: usize,
}

impl Default for DecoderConvSpec {
    fn default() -> Self {
        Self { blocks: 3, width: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub use_decoder_conv1d: bool,
    pub use_positional_encoding: bool,
    pub dropout: f64,
    #[serde(default)]
    pub frontend: FrontendSpec,
    #[serde(default)]
    pub decoder_conv: DecoderConvSpec,
}

impl ModelConfig {
    /// Transformer-Base sizing on 80-dim filterbanks with a 5k vocabulary.
    pub fn paper(variant: Variant) -> Self {
        Self {
            enc_layers: 6,
            dec_layers: 6,
            d_model: 512,
            heads: 8,
            d_ff: 2048,
            vocab_size: 5000,
            feature_dim: 80,
            use_decoder_conv1d: false,
            use_positional_encoding: false,
            dropout: 0.15,
            frontend: FrontendSpec::default(),
            decoder_conv: DecoderConvSpec::default(),
        }
        .with_variant(variant)
    }

    /// Desk-scale model for the synthetic task.
    pub fn toy(variant: Variant) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            vocab_size: 32,
            feature_dim: 16,
            use_decoder_conv1d: false,
            use_positional_encoding: false,
            dropout: 0.1,
            frontend: FrontendSpec {
                channels: 16,
                ..FrontendSpec::default()
            },
            decoder_conv: DecoderConvSpec::default(),
        }
        .with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.use_decoder_conv1d = variant == Variant::ConvContext;
        self.use_positional_encoding = variant == Variant::ProposedPe;
        self
    }

    /// The variant matching the flags, if any.
    pub fn variant(&self) -> Option<Variant> {
        match (self.use_decoder_conv1d, self.use_positional_encoding) {
            (true, false) => Some(Variant::ConvContext),
            (false, false) => Some(Variant::Proposed),
            (false, true) => Some(Variant::ProposedPe),
            (true, true) => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Shortest input the front-end accepts.
    pub fn min_frames(&self) -> usize {
        self.frontend.reduction()
    }

    /// Input of the projection after the front-end: channels × reduced frequency.
    pub fn frontend_proj_in(&self) -> usize {
        let c = if self.frontend.blocks == 0 { 1 } else { self.frontend.channels };
        c * self.frontend.reduced(self.feature_dim)
    }

    /// Structural checks that do not depend on the vocabulary layout.
    pub fn check_shapes(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.frontend.kernel == 0 || self.frontend.kernel.is_multiple_of(2) {
            return fail(format!("front-end kernel {} must be odd", self.frontend.kernel));
        }
        if self.frontend.pool == 0 || self.frontend.channels == 0 {
            return fail("front-end pool and channels must be positive".into());
        }
        if self.frontend.reduced(self.feature_dim) == 0 {
            return fail(format!(
                "feature_dim {} vanishes after {} pooling blocks",
                self.feature_dim, self.frontend.blocks
            ));
        }
        if self.use_decoder_conv1d && (self.decoder_conv.blocks == 0 || self.decoder_conv.width == 0) {
            return fail("decoder convolution needs at least one block of width ≥ 1".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        if self.vocab_size <= FIRST_TOKEN_ID as usize {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room beside PAD/BOS/EOS",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
