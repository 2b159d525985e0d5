//! Model assembly: configuration, the named parameter store, and builders
//! for the three architectures the study compares.
//!
//! * `SVG`: stochastic video generation with a learned prior. A frame
//!   encoder feeds three convolutional LSTMs: a posterior over z_t that sees
//!   h_t, a learned prior that sees h_{t-1}, and a two-cell frame predictor
//!   that consumes h_{t-1}, z_t, and any actions, then decodes to pixels.
//! * `LSTM`: the same predictor with the latent path removed (z_dim 0).
//! * `CNN`: a feed-forward encoder/decoder over a stacked window of frames,
//!   no recurrence.
//!
//! Capacity scales with two factors: K multiplies encoder/decoder widths,
//! M multiplies LSTM hidden widths.

pub mod rollout;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    init_convlstm, init_decoder, init_encoder, init_gaussian_head, ConvLstmDims, DecoderDims,
    EncoderDims, VarMap,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use rollout::{sample_rollout, train_rollout, RolloutOutput};

/// Base LSTM hidden width; scales with M.
pub const BASE_HIDDEN: usize = 32;
/// Base encoder bottleneck width; scales with K (kept in sync with the
/// encoder's own base widths).
pub const BASE_BOTTLENECK: usize = 32;
/// Spatial downsampling factor of the encoder.
pub const DOWN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Lstm,
    Svg,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Svg => "svg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Encoder/decoder width factor.
    pub k: usize,
    /// LSTM hidden width factor.
    pub m: usize,
    /// Latent channels per bottleneck site (SVG only; 0 degenerates to LSTM).
    pub z_dim: usize,
    /// Concatenate encoder skip maps into the decoder.
    pub skip: bool,
    pub context_len: usize,
    pub predict_len: usize,
    /// Frame height = width.
    pub frame_size: usize,
    /// Frame channels.
    pub channels: usize,
    /// 0 for action-free data.
    pub action_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Svg,
            k: 1,
            m: 1,
            z_dim: 8,
            skip: true,
            context_len: 5,
            predict_len: 10,
            frame_size: 32,
            channels: 1,
            action_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::config("capacity factors K and M must be >= 1".to_string()));
        }
        if self.context_len == 0 || self.predict_len == 0 {
            return Err(Error::config("context_len and predict_len must be >= 1".to_string()));
        }
        if self.frame_size % DOWN != 0 || self.frame_size == 0 {
            return Err(Error::config(format!(
                "frame_size {} must be a positive multiple of {DOWN}",
                self.frame_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be >= 1".to_string()));
        }
        if self.kind != ModelKind::Svg && self.z_dim != 0 {
            return Err(Error::config(format!(
                "z_dim must be 0 for {} models",
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// Encoder input channels: single frames for recurrent kinds, the whole
    /// stacked context window (plus tiled actions) for the CNN.
    pub fn encoder_cin(&self) -> usize {
        match self.kind {
            ModelKind::Cnn => self.channels * self.context_len + self.action_dim,
            _ => self.channels,
        }
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims::scaled(self.encoder_cin(), self.k)
    }

    /// Channels arriving at the decoder: LSTM hidden width for recurrent
    /// kinds, the encoder bottleneck for the CNN.
    pub fn g_channels(&self) -> usize {
        match self.kind {
            ModelKind::Cnn => BASE_BOTTLENECK * self.k,
            _ => BASE_HIDDEN * self.m,
        }
    }

    pub fn decoder_dims(&self) -> DecoderDims {
        DecoderDims::scaled(self.g_channels(), self.channels, self.k, self.skip)
    }

    pub fn hidden(&self) -> usize {
        BASE_HIDDEN * self.m
    }

    pub fn bottleneck_channels(&self) -> usize {
        BASE_BOTTLENECK * self.k
    }

    /// Bottleneck spatial side.
    pub fn bottleneck_hw(&self) -> usize {
        self.frame_size / DOWN
    }

    /// Predictor cell 1 input: h_{t-1} plus latent plus tiled actions.
    pub fn theta_cin(&self) -> usize {
        self.bottleneck_channels() + self.z_dim + self.action_dim
    }

    pub fn has_latent(&self) -> bool {
        self.kind == ModelKind::Svg && self.z_dim > 0
    }

    pub fn is_recurrent(&self) -> bool {
        self.kind != ModelKind::Cnn
    }
}

/// Named parameter tensors with container round-tripping.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    map: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore { map: BTreeMap::new() }
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> ParameterStore {
        ParameterStore { map }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("parameter '{name}' not found")))
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.map.get_mut(name) {
            Some(slot) => {
                if slot.shape() != t.shape() {
                    return Err(Error::dim(format!(
                        "parameter '{name}' shape {:?} cannot take {:?}",
                        slot.shape(),
                        t.shape()
                    )));
                }
                *slot = t;
                Ok(())
            }
            None => Err(Error::contract(format!("parameter '{name}' not found"))),
        }
    }

    pub fn map(&self) -> &BTreeMap<String, Tensor> {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar parameter count, optionally under a name prefix.
    pub fn param_count(&self, prefix: &str) -> usize {
        crate::layers::param_count(&self.map, prefix)
    }

    /// Binds every tensor as a trainable leaf (for optimization) or frozen
    /// constant (for sampling/eval, letting the graph collapse as it goes).
    pub fn bind(&self, trainable: bool) -> VarMap {
        VarMap::bind(&self.map, trainable)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_tensors(path, &self.map)
    }

    pub fn load(path: &Path) -> Result<ParameterStore> {
        Ok(ParameterStore { map: crate::io::read_tensors(path)? })
    }
}

/// Initializes all parameters for `cfg`. Parameter values depend only on
/// (name, seed), never on registration order or model kind.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    let rng = SeededRng::new(seed, "init");
    let mut store = BTreeMap::new();
    init_encoder(&mut store, "enc", &cfg.encoder_dims(), &rng);
    init_decoder(&mut store, "dec", &cfg.decoder_dims(), &rng);
    if cfg.is_recurrent() {
        let hidden = cfg.hidden();
        init_convlstm(
            &mut store,
            "theta.l0",
            &ConvLstmDims { cin: cfg.theta_cin(), hidden },
            &rng,
        );
        init_convlstm(&mut store, "theta.l1", &ConvLstmDims { cin: hidden, hidden }, &rng);
        if cfg.has_latent() {
            let bneck = cfg.bottleneck_channels();
            for net in ["phi", "psi"] {
                init_convlstm(
                    &mut store,
                    &format!("{net}.lstm"),
                    &ConvLstmDims { cin: bneck, hidden },
                    &rng,
                );
                init_gaussian_head(&mut store, &format!("{net}.head"), hidden, cfg.z_dim, &rng);
            }
        }
    }
    Ok(ParameterStore { map: store })
}
