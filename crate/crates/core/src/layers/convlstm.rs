//! Convolutional LSTM cell. Gates come from one 3x3 conv over
//! concat(input, hidden), split four ways in i,f,o,g order:
//!   c' = sigmoid(f) .* c + sigmoid(i) .* tanh(g)
//!   h' = sigmoid(o) .* tanh(c')
//! The forget-gate bias initializes to +1 so early training favors memory.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::graph::{concat_channels, Var};
use crate::tensor::Tensor;

use super::VarMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLstmDims {
    pub cin: usize,
    pub hidden: usize,
}

#[derive(Clone)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmState {
    pub fn zeros(batch: usize, hidden: usize, h: usize, w: usize) -> ConvLstmState {
        ConvLstmState {
            hidden: Var::constant(Tensor::zeros(&[batch, hidden, h, w])),
            cell: Var::constant(Tensor::zeros(&[batch, hidden, h, w])),
        }
    }
}

pub fn init_convlstm(
    store: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    dims: &ConvLstmDims,
    rng: &SeededRng,
) {
    let cin = dims.cin + dims.hidden;
    let cout = 4 * dims.hidden;
    let std = (2.0f32 / (cin * 9) as f32).sqrt();
    let mut sub = rng.derive(&format!("{prefix}.w"));
    store.insert(format!("{prefix}.w"), Tensor::randn(&[cout, cin, 3, 3], std, &mut sub));
    let mut bias = vec![0.0f32; cout];
    bias[dims.hidden..2 * dims.hidden].fill(1.0); // forget gate
    store.insert(format!("{prefix}.b"), Tensor::new(&[cout], bias).expect("bias shape"));
}

pub fn convlstm_step(
    vars: &VarMap,
    prefix: &str,
    input: &Var,
    state: &ConvLstmState,
    dims: &ConvLstmDims,
) -> Result<ConvLstmState> {
    let is = input.shape();
    let hs = state.hidden.shape();
    if is.len() != 4 || is[1] != dims.cin {
        return Err(Error::dim(format!("lstm input wants [B,{},H,W], got {is:?}", dims.cin)));
    }
    if hs[1] != dims.hidden || hs[0] != is[0] || hs[2] != is[2] || hs[3] != is[3] {
        return Err(Error::dim(format!(
            "lstm state {hs:?} incompatible with input {is:?} (hidden {})",
            dims.hidden
        )));
    }
    let z = concat_channels(&[input, &state.hidden])?;
    let gates = z.conv2d(
        vars.get(&format!("{prefix}.w"))?,
        vars.get(&format!("{prefix}.b"))?,
        1,
        1,
    )?;
    let hn = dims.hidden;
    let i = gates.slice_channels(0, hn)?.sigmoid();
    let f = gates.slice_channels(hn, 2 * hn)?.sigmoid();
    let o = gates.slice_channels(2 * hn, 3 * hn)?.sigmoid();
    let g = gates.slice_channels(3 * hn, 4 * hn)?.tanh();
    let cell = f.mul(&state.cell)?.add(&i.mul(&g)?)?;
    let hidden = o.mul(&cell.tanh())?;
    Ok(ConvLstmState { hidden, cell })
}
