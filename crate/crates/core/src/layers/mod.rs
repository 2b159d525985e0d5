//! Neural building blocks: frame encoder/decoder, convolutional LSTM cell,
//! Gaussian parameter heads, reparameterized sampling, and the KL term.
//!
//! Layers are free functions over a [`VarMap`] (name -> graph variable) plus a
//! name prefix, so one parameter set can serve trainable and frozen bindings
//! alike. Matching `init_*` functions register tensors under the same names;
//! initialization derives one RNG substream per parameter name, making values
//! independent of registration order.

pub mod convlstm;
pub mod decoder;
pub mod encoder;
pub mod gaussian;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::graph::Var;
use crate::tensor::Tensor;

pub use convlstm::{convlstm_step, init_convlstm, ConvLstmDims, ConvLstmState};
pub use decoder::{decoder_forward, init_decoder, DecoderDims};
pub use encoder::{encoder_forward, init_encoder, EncoderDims, EncoderOutput};
pub use gaussian::{
    gaussian_head, init_gaussian_head, kl_diag_gaussians, sample_reparameterized,
    sample_with_eps, GaussianParams, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};

/// Negative slope shared by every encoder/decoder activation.
pub const LRELU_ALPHA: f32 = 0.2;

/// Named graph variables backing a model's parameters.
pub struct VarMap {
    map: BTreeMap<String, Var>,
}

impl VarMap {
    /// Binds tensors as trainable leaves or frozen constants.
    pub fn bind(tensors: &BTreeMap<String, Tensor>, trainable: bool) -> VarMap {
        let map = tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { Var::leaf(t.clone()) } else { Var::constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        VarMap { map }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("parameter '{name}' not found")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Registers a conv layer: weight `<name>.w` [cout,cin,k,k] drawn from
/// N(0, 2/fan_in), bias `<name>.b` zeros.
pub fn init_conv(
    store: &mut BTreeMap<String, Tensor>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &SeededRng,
) {
    let std = (2.0f32 / (cin * k * k) as f32).sqrt();
    let mut sub = rng.derive(&format!("{name}.w"));
    store.insert(format!("{name}.w"), Tensor::randn(&[cout, cin, k, k], std, &mut sub));
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// Applies the conv registered under `name` (3x3, stride 1, pad 1).
pub fn conv3(vars: &VarMap, name: &str, x: &Var) -> Result<Var> {
    x.conv2d(vars.get(&format!("{name}.w"))?, vars.get(&format!("{name}.b"))?, 1, 1)
}

/// Total element count of parameters whose names start with `prefix`.
pub fn param_count(store: &BTreeMap<String, Tensor>, prefix: &str) -> usize {
    store
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, t)| t.len())
        .sum()
}
