//! Frame decoder f_dec: mirror of the encoder. Head conv at bottleneck
//! resolution, then per stage: nearest-neighbor upsample, optional skip
//! concat, two 3x3 convs + leaky-relu. Final 3x3 conv + sigmoid keeps the
//! frame in (0,1).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::graph::{concat_channels, Var};
use crate::tensor::Tensor;

use super::encoder::STAGES;
use super::{conv3, init_conv, VarMap, LRELU_ALPHA};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    /// Channels of the decoder input g (LSTM hidden width or bottleneck).
    pub g_channels: usize,
    /// Mirrored encoder stage widths (lowest stage first, like the encoder).
    pub widths: [usize; STAGES],
    /// Output frame channels.
    pub cout: usize,
    /// Whether skip maps are concatenated before each stage's convs.
    pub skip: bool,
}

impl DecoderDims {
    pub fn scaled(g_channels: usize, cout: usize, k: usize, skip: bool) -> DecoderDims {
        DecoderDims {
            g_channels,
            widths: [8 * k, 16 * k, 32 * k],
            cout,
            skip,
        }
    }
}

pub fn init_decoder(
    store: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    dims: &DecoderDims,
    rng: &SeededRng,
) {
    let top = dims.widths[STAGES - 1];
    init_conv(store, &format!("{prefix}.head"), top, dims.g_channels, 3, rng);
    let mut prev = top;
    for s in (0..STAGES).rev() {
        let w = dims.widths[s];
        let cin = prev + if dims.skip { w } else { 0 };
        init_conv(store, &format!("{prefix}.s{s}.c0"), w, cin, 3, rng);
        init_conv(store, &format!("{prefix}.s{s}.c1"), w, w, 3, rng);
        prev = w;
    }
    init_conv(store, &format!("{prefix}.out"), dims.cout, prev, 3, rng);
}

pub fn decoder_forward(
    vars: &VarMap,
    prefix: &str,
    g: &Var,
    skips: Option<&[Var]>,
    dims: &DecoderDims,
) -> Result<Var> {
    let s = g.shape();
    if s.len() != 4 || s[1] != dims.g_channels {
        return Err(Error::dim(format!(
            "decoder wants [B,{},Hb,Wb], got {s:?}",
            dims.g_channels
        )));
    }
    match (dims.skip, skips) {
        (true, None) => {
            return Err(Error::contract("decoder configured with skips but none passed".to_string()))
        }
        (false, Some(_)) => {
            return Err(Error::contract("decoder configured without skips but skips passed".to_string()))
        }
        _ => {}
    }
    if let Some(sk) = skips {
        if sk.len() != STAGES {
            return Err(Error::dim(format!("expected {STAGES} skip maps, got {}", sk.len())));
        }
    }
    let mut x = conv3(vars, &format!("{prefix}.head"), g)?.leaky_relu(LRELU_ALPHA);
    for stage in (0..STAGES).rev() {
        x = x.upsample_nearest2()?;
        if let Some(sk) = skips {
            x = concat_channels(&[&x, &sk[stage]])?;
        }
        x = conv3(vars, &format!("{prefix}.s{stage}.c0"), &x)?.leaky_relu(LRELU_ALPHA);
        x = conv3(vars, &format!("{prefix}.s{stage}.c1"), &x)?.leaky_relu(LRELU_ALPHA);
    }
    Ok(conv3(vars, &format!("{prefix}.out"), &x)?.sigmoid())
}
