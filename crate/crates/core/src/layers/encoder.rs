//! Frame encoder f_enc: three conv blocks (two 3x3 convs + leaky-relu each),
//! each followed by 2x2 max-pool, then one 3x3 conv to the bottleneck width.
//! Skip activations are captured before each pooling stage.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::graph::Var;
use crate::tensor::Tensor;

use super::{conv3, init_conv, VarMap, LRELU_ALPHA};

pub const STAGES: usize = 3;
const BASE_WIDTHS: [usize; STAGES] = [8, 16, 32];
const BASE_BOTTLENECK: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub cin: usize,
    pub widths: [usize; STAGES],
    pub bottleneck: usize,
}

impl EncoderDims {
    /// Base desk-scale widths multiplied by the capacity factor K.
    pub fn scaled(cin: usize, k: usize) -> EncoderDims {
        EncoderDims {
            cin,
            widths: BASE_WIDTHS.map(|w| w * k),
            bottleneck: BASE_BOTTLENECK * k,
        }
    }
}

pub struct EncoderOutput {
    /// [B, Cb, H/8, W/8]; houses h_t.
    pub bottleneck: Var,
    /// Pre-pool activations, highest resolution first; spatial sizes halve.
    pub skips: Vec<Var>,
}

pub fn init_encoder(
    store: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    dims: &EncoderDims,
    rng: &SeededRng,
) {
    let mut cin = dims.cin;
    for (s, &w) in dims.widths.iter().enumerate() {
        init_conv(store, &format!("{prefix}.b{s}.c0"), w, cin, 3, rng);
        init_conv(store, &format!("{prefix}.b{s}.c1"), w, w, 3, rng);
        cin = w;
    }
    init_conv(store, &format!("{prefix}.bottleneck"), dims.bottleneck, cin, 3, rng);
}

pub fn encoder_forward(
    vars: &VarMap,
    prefix: &str,
    frame_stack: &Var,
    dims: &EncoderDims,
) -> Result<EncoderOutput> {
    let s = frame_stack.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("encoder wants [B,C,H,W], got {s:?}")));
    }
    if s[1] != dims.cin {
        return Err(Error::dim(format!("encoder expects {} channels, got {}", dims.cin, s[1])));
    }
    let div = 1 << STAGES;
    if s[2] % div != 0 || s[3] % div != 0 {
        return Err(Error::config(format!(
            "encoder needs spatial dims divisible by {div}, got {}x{}",
            s[2], s[3]
        )));
    }
    let mut x = frame_stack.clone();
    let mut skips = Vec::with_capacity(STAGES);
    for stage in 0..STAGES {
        x = conv3(vars, &format!("{prefix}.b{stage}.c0"), &x)?.leaky_relu(LRELU_ALPHA);
        x = conv3(vars, &format!("{prefix}.b{stage}.c1"), &x)?.leaky_relu(LRELU_ALPHA);
        skips.push(x.clone());
        x = x.pool_max2()?;
    }
    let bottleneck = conv3(vars, &format!("{prefix}.bottleneck"), &x)?.leaky_relu(LRELU_ALPHA);
    Ok(EncoderOutput { bottleneck, skips })
}
