//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Var`] wraps a graph node holding the forward value and the op that
//! produced it. Node ids are allocated in creation order, which makes them a
//! topological order of the tape: backward walks ids descending and visits
//! each node exactly once.
//!
//! Ops whose inputs all have `needs_grad == false` collapse to parent-less
//! constants, so inference rollouts free intermediate values as soon as the
//! caller drops them instead of retaining the whole graph.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) value: Tensor,
    pub(crate) needs_grad: bool,
    pub(crate) op: Op,
}

#[derive(Clone)]
pub struct Var {
    pub(crate) node: Rc<Node>,
}

pub(crate) enum Op {
    Leaf,
    Const,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        stride: usize,
    },
    PoolMax2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        alpha: f32,
    },
    Softplus {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    Scale {
        x: Var,
        c: f32,
    },
    AddScalar {
        x: Var,
        c: f32,
    },
    ReduceSum {
        x: Var,
        axes: Vec<usize>,
    },
    ReduceMean {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        x: Var,
        from: usize,
        to: usize,
    },
    Reshape {
        x: Var,
    },
    Tile {
        x: Var,
        h: usize,
        w: usize,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<u32>,
        probs: Vec<f32>,
    },
}

fn collect_parents(op: Op, out: &mut Vec<Var>) {
    match op {
        Op::Leaf | Op::Const => {}
        Op::Conv2d { x, w, b, .. } => {
            out.push(x);
            out.push(w);
            out.push(b);
        }
        Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
            out.push(a);
            out.push(b);
        }
        Op::Concat { parts } => out.extend(parts),
        Op::PoolMax2 { x, .. }
        | Op::Upsample2 { x }
        | Op::Sigmoid { x }
        | Op::Tanh { x }
        | Op::Relu { x }
        | Op::LeakyRelu { x, .. }
        | Op::Softplus { x }
        | Op::Exp { x }
        | Op::Abs { x }
        | Op::Clamp { x, .. }
        | Op::Scale { x, .. }
        | Op::AddScalar { x, .. }
        | Op::ReduceSum { x, .. }
        | Op::ReduceMean { x, .. }
        | Op::Slice { x, .. }
        | Op::Reshape { x }
        | Op::Tile { x, .. } => out.push(x),
        Op::SoftmaxCe { logits, .. } => out.push(logits),
    }
}

// Deep rollout graphs would otherwise drop via Rc recursion and can overrun
// the stack; drain parents onto an explicit worklist instead.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack = Vec::new();
        collect_parents(std::mem::replace(&mut self.op, Op::Const), &mut stack);
        while let Some(var) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(var.node) {
                collect_parents(std::mem::replace(&mut node.op, Op::Const), &mut stack);
            }
        }
    }
}

impl Var {
    fn make(value: Tensor, needs_grad: bool, op: Op) -> Var {
        Var {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value,
                needs_grad,
                op,
            }),
        }
    }

    /// A gradient target (parameter or differentiable input).
    pub fn leaf(value: Tensor) -> Var {
        Var::make(value, true, Op::Leaf)
    }

    /// A value gradients never reach (data, noise draws, frozen weights).
    pub fn constant(value: Tensor) -> Var {
        Var::make(value, false, Op::Const)
    }

    pub fn value(&self) -> &Tensor {
        &self.node.value
    }

    pub fn shape(&self) -> &[usize] {
        self.node.value.shape()
    }

    pub fn needs_grad(&self) -> bool {
        self.node.needs_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Wraps an op result, collapsing to a constant when no input wants
    /// gradients (drops parent links, letting inference free memory early).
    fn from_op(value: Tensor, any_parent_needs: bool, op: Op) -> Var {
        if any_parent_needs {
            Var::make(value, true, op)
        } else {
            Var::make(value, false, Op::Const)
        }
    }

    // -- convolution and friends ------------------------------------------

    pub fn conv2d(&self, w: &Var, b: &Var, pad: usize, stride: usize) -> Result<Var> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(format!("conv2d wants 4-d input/kernel, got {xs:?} / {ws:?}")));
        }
        let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::dim(format!("conv2d channels: input {cin}, kernel {wcin}")));
        }
        if b.shape() != [cout] {
            return Err(Error::dim(format!("conv2d bias shape {:?}, want [{cout}]", b.shape())));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("conv2d kernel dims must be odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be >= 1".to_string()));
        }
        let hout = kernels::conv_out_size(h, kh, pad, stride)
            .ok_or_else(|| Error::config(format!("conv2d output height not integral (h={h} k={kh} pad={pad} stride={stride})")))?;
        let wout = kernels::conv_out_size(wd, kw, pad, stride)
            .ok_or_else(|| Error::config(format!("conv2d output width not integral (w={wd} k={kw} pad={pad} stride={stride})")))?;
        let mut out = vec![0.0f32; bsz * cout * hout * wout];
        kernels::conv2d_f32(
            self.value().data(),
            bsz,
            cin,
            h,
            wd,
            w.value().data(),
            cout,
            kh,
            kw,
            b.value().data(),
            pad,
            stride,
            &mut out,
        );
        let value = Tensor::new(&[bsz, cout, hout, wout], out)?;
        let needs = self.needs_grad() || w.needs_grad() || b.needs_grad();
        Ok(Var::from_op(
            value,
            needs,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                pad,
                stride,
            },
        ))
    }

    pub fn pool_max2(&self) -> Result<Var> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("pool_max2 wants 4-d input, got {s:?}")));
        }
        let (bsz, ch, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!("pool_max2 needs even spatial dims, got {h}x{w}")));
        }
        let mut out = vec![0.0f32; bsz * ch * (h / 2) * (w / 2)];
        let needs = self.needs_grad();
        let mut argmax = if needs { Some(Vec::with_capacity(out.len())) } else { None };
        kernels::pool_max2_ref(self.value().data(), bsz, ch, h, w, &mut out, argmax.as_mut());
        let value = Tensor::new(&[bsz, ch, h / 2, w / 2], out)?;
        Ok(Var::from_op(
            value,
            needs,
            Op::PoolMax2 {
                x: self.clone(),
                argmax: argmax.unwrap_or_default(),
            },
        ))
    }

    pub fn upsample_nearest2(&self) -> Result<Var> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("upsample wants 4-d input, got {s:?}")));
        }
        let (bsz, ch, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![0.0f32; bsz * ch * 4 * h * w];
        kernels::upsample2_ref(self.value().data(), bsz, ch, h, w, &mut out);
        let value = Tensor::new(&[bsz, ch, 2 * h, 2 * w], out)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::Upsample2 { x: self.clone() }))
    }

    // -- elementwise -------------------------------------------------------

    fn binary(
        &self,
        other: &Var,
        f: impl Fn(f32, f32) -> f32,
        op: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var> {
        let (a, b) = (self.value(), other.value());
        let value = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        } else if b.len() == 1 {
            let y = b.data()[0];
            Tensor::new(a.shape(), a.data().iter().map(|&x| f(x, y)).collect())?
        } else if a.len() == 1 {
            let x = a.data()[0];
            Tensor::new(b.shape(), b.data().iter().map(|&y| f(x, y)).collect())?
        } else {
            return Err(Error::dim(format!(
                "elementwise shapes {:?} vs {:?} (need equal or scalar)",
                a.shape(),
                b.shape()
            )));
        };
        let needs = self.needs_grad() || other.needs_grad();
        Ok(Var::from_op(value, needs, op(self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn unary(&self, f: impl Fn(f32) -> f32, op: impl FnOnce(Var) -> Op) -> Var {
        let data = self.value().data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(), data).expect("unary keeps shape");
        Var::from_op(value, self.needs_grad(), op(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(kernels::sigmoid_s, |x| Op::Sigmoid { x })
    }

    pub fn tanh(&self) -> Var {
        self.unary(f32::tanh, |x| Op::Tanh { x })
    }

    pub fn relu(&self) -> Var {
        self.unary(|v| v.max(0.0), |x| Op::Relu { x })
    }

    pub fn leaky_relu(&self, alpha: f32) -> Var {
        self.unary(|v| kernels::leaky_relu_s(v, alpha), |x| Op::LeakyRelu { x, alpha })
    }

    pub fn softplus(&self) -> Var {
        self.unary(kernels::softplus_s, |x| Op::Softplus { x })
    }

    pub fn exp(&self) -> Var {
        self.unary(f32::exp, |x| Op::Exp { x })
    }

    pub fn abs(&self) -> Var {
        self.unary(f32::abs, |x| Op::Abs { x })
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Var {
        self.unary(|v| v.clamp(lo, hi), |x| Op::Clamp { x, lo, hi })
    }

    pub fn scale(&self, c: f32) -> Var {
        self.unary(|v| v * c, |x| Op::Scale { x, c })
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        self.unary(|v| v + c, |x| Op::AddScalar { x, c })
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    // -- reductions --------------------------------------------------------

    fn check_axes(&self, axes: &[usize]) -> Result<Vec<usize>> {
        if axes.is_empty() {
            return Err(Error::dim("reduce with empty axis list".to_string()));
        }
        let rank = self.shape().len();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::dim(format!("duplicate reduce axes {axes:?}")));
        }
        if let Some(&bad) = sorted.iter().find(|&&a| a >= rank) {
            return Err(Error::dim(format!("reduce axis {bad} out of range for rank {rank}")));
        }
        Ok(sorted)
    }

    pub fn reduce_sum(&self, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes(axes)?;
        let oshape = kernels::reduced_shape(self.shape(), &axes);
        let mut out = vec![0.0f32; oshape.iter().product()];
        kernels::reduce_sum_ref(self.value().data(), self.shape(), &axes, &mut out);
        let value = Tensor::new(&oshape, out)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::ReduceSum { x: self.clone(), axes }))
    }

    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes(axes)?;
        let count = kernels::reduce_count(self.shape(), &axes);
        let oshape = kernels::reduced_shape(self.shape(), &axes);
        let mut out = vec![0.0f32; oshape.iter().product()];
        kernels::reduce_sum_ref(self.value().data(), self.shape(), &axes, &mut out);
        let inv = 1.0 / count as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(&oshape, out)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::ReduceMean { x: self.clone(), axes }))
    }

    pub fn sum_all(&self) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        if axes.is_empty() {
            // already scalar: reshape-as-identity keeps the graph connected
            return self.reshape(&[]);
        }
        self.reduce_sum(&axes)
    }

    pub fn mean_all(&self) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        if axes.is_empty() {
            return self.reshape(&[]);
        }
        self.reduce_mean(&axes)
    }

    // -- shape ops ---------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshaped(shape)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::Reshape { x: self.clone() }))
    }

    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Var> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("slice_channels wants 4-d input, got {s:?}")));
        }
        if from >= to || to > s[1] {
            return Err(Error::dim(format!("slice_channels {from}..{to} of {} channels", s[1])));
        }
        let (bsz, ch, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![0.0f32; bsz * (to - from) * h * w];
        kernels::slice_channels_ref(self.value().data(), bsz, ch, h * w, from, to, &mut out);
        let value = Tensor::new(&[bsz, to - from, h, w], out)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::Slice { x: self.clone(), from, to }))
    }

    /// [B,C] -> [B,C,h,w] constant-per-channel map.
    pub fn tile_spatial(&self, h: usize, w: usize) -> Result<Var> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::dim(format!("tile_spatial wants [B,C], got {s:?}")));
        }
        let (bsz, ch) = (s[0], s[1]);
        let mut out = vec![0.0f32; bsz * ch * h * w];
        kernels::tile_spatial_ref(self.value().data(), bsz, ch, h, w, &mut out);
        let value = Tensor::new(&[bsz, ch, h, w], out)?;
        Ok(Var::from_op(value, self.needs_grad(), Op::Tile { x: self.clone(), h, w }))
    }

    /// Mean NLL of `targets` under row-wise softmax of [B,C] logits.
    pub fn softmax_cross_entropy(&self, targets: &[u32]) -> Result<Var> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::dim(format!("softmax_ce wants [B,C] logits, got {s:?}")));
        }
        let (bsz, ch) = (s[0], s[1]);
        if targets.len() != bsz {
            return Err(Error::dim(format!("softmax_ce: {} targets for batch {}", targets.len(), bsz)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= ch)
        {
            return Err(Error::dim(format!("softmax_ce target {bad} out of {ch} classes")));
        }
        let mut probs = vec![0.0f32; bsz * ch];
        let loss = kernels::softmax_ce_ref(self.value().data(), bsz, ch, targets, &mut probs);
        Ok(Var::from_op(
            Tensor::scalar(loss),
            self.needs_grad(),
            Op::SoftmaxCe {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    // -- backward ----------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss; returns gradients for every
    /// reachable leaf.
    pub fn backward(&self) -> Result<Gradients> {
        if !self.needs_grad() {
            return Err(Error::MissingGrad(
                "backward from a detached value (no leaf reaches it)".to_string(),
            ));
        }
        if self.value().len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Gather reachable grad-needing nodes; ids are creation-ordered, so a
        // descending sort is a reverse topological order.
        let mut seen: HashMap<u64, Rc<Node>> = HashMap::new();
        let mut stack = vec![Rc::clone(&self.node)];
        while let Some(node) = stack.pop() {
            if seen.contains_key(&node.id) {
                continue;
            }
            let mut parents = Vec::new();
            visit_parents(&node.op, &mut parents);
            for p in parents {
                if p.node.needs_grad && !seen.contains_key(&p.node.id) {
                    stack.push(Rc::clone(&p.node));
                }
            }
            seen.insert(node.id, node);
        }
        let mut order: Vec<Rc<Node>> = seen.into_values().collect();
        order.sort_by(|a, b| b.id.cmp(&a.id));

        let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
        grads.insert(self.node.id, vec![1.0]);
        let mut out = Gradients { by_id: HashMap::new() };

        for node in order {
            let Some(g) = grads.remove(&node.id) else {
                continue; // no gradient flowed here
            };
            if matches!(node.op, Op::Leaf) {
                let t = Tensor::new(node.value.shape(), g)?;
                out.by_id.insert(node.id, t);
                continue;
            }
            node_backward(&node, &g, &mut grads)?;
        }
        Ok(out)
    }
}

fn visit_parents(op: &Op, out: &mut Vec<Var>) {
    match op {
        Op::Leaf | Op::Const => {}
        Op::Conv2d { x, w, b, .. } => {
            out.push(x.clone());
            out.push(w.clone());
            out.push(b.clone());
        }
        Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
            out.push(a.clone());
            out.push(b.clone());
        }
        Op::Concat { parts } => out.extend(parts.iter().cloned()),
        Op::PoolMax2 { x, .. }
        | Op::Upsample2 { x }
        | Op::Sigmoid { x }
        | Op::Tanh { x }
        | Op::Relu { x }
        | Op::LeakyRelu { x, .. }
        | Op::Softplus { x }
        | Op::Exp { x }
        | Op::Abs { x }
        | Op::Clamp { x, .. }
        | Op::Scale { x, .. }
        | Op::AddScalar { x, .. }
        | Op::ReduceSum { x, .. }
        | Op::ReduceMean { x, .. }
        | Op::Slice { x, .. }
        | Op::Reshape { x }
        | Op::Tile { x, .. } => out.push(x.clone()),
        Op::SoftmaxCe { logits, .. } => out.push(logits.clone()),
    }
}

/// Gradient buffer for `var`, created zeroed on first touch.
fn grad_buf<'a>(grads: &'a mut HashMap<u64, Vec<f32>>, var: &Var) -> &'a mut Vec<f32> {
    grads
        .entry(var.id())
        .or_insert_with(|| vec![0.0; var.value().len()])
}

/// Accumulates `g` into the (possibly scalar-broadcast) operand `var`.
fn accum_broadcast(
    grads: &mut HashMap<u64, Vec<f32>>,
    var: &Var,
    g: &[f32],
    factor: impl Fn(usize) -> f32,
) {
    if !var.needs_grad() {
        return;
    }
    let buf = grad_buf(grads, var);
    if buf.len() == g.len() {
        for (i, (dst, &gv)) in buf.iter_mut().zip(g.iter()).enumerate() {
            *dst += gv * factor(i);
        }
    } else {
        debug_assert_eq!(buf.len(), 1);
        let mut acc = 0.0;
        for (i, &gv) in g.iter().enumerate() {
            acc += gv * factor(i);
        }
        buf[0] += acc;
    }
}

/// Reads operand element i under scalar broadcast.
fn bval(t: &Tensor, i: usize) -> f32 {
    let d = t.data();
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

fn node_backward(node: &Node, g: &[f32], grads: &mut HashMap<u64, Vec<f32>>) -> Result<()> {
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Conv2d { x, w, b, pad, stride } => {
            let xs = x.shape();
            let ws = w.shape();
            let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
            let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
            // Buffers must be borrowed disjointly from the map; take them out.
            let mut dx = x.needs_grad().then(|| grads.remove(&x.id()).unwrap_or_else(|| vec![0.0; x.value().len()]));
            let mut dw = w.needs_grad().then(|| grads.remove(&w.id()).unwrap_or_else(|| vec![0.0; w.value().len()]));
            let mut db = b.needs_grad().then(|| grads.remove(&b.id()).unwrap_or_else(|| vec![0.0; b.value().len()]));
            kernels::conv2d_backward_f32(
                x.value().data(),
                bsz,
                cin,
                h,
                wd,
                w.value().data(),
                cout,
                kh,
                kw,
                *pad,
                *stride,
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if let Some(dx) = dx {
                grads.insert(x.id(), dx);
            }
            if let Some(dw) = dw {
                grads.insert(w.id(), dw);
            }
            if let Some(db) = db {
                grads.insert(b.id(), db);
            }
        }
        Op::PoolMax2 { x, argmax } => {
            if x.needs_grad() {
                let buf = grad_buf(grads, x);
                for (i, &am) in argmax.iter().enumerate() {
                    buf[am as usize] += g[i];
                }
            }
        }
        Op::Upsample2 { x } => {
            if x.needs_grad() {
                let s = x.shape();
                let (bsz, ch, h, w) = (s[0], s[1], s[2], s[3]);
                let buf = grad_buf(grads, x);
                kernels::upsample2_backward(g, bsz, ch, h, w, buf);
            }
        }
        Op::Add { a, b } => {
            accum_broadcast(grads, a, g, |_| 1.0);
            accum_broadcast(grads, b, g, |_| 1.0);
        }
        Op::Sub { a, b } => {
            accum_broadcast(grads, a, g, |_| 1.0);
            accum_broadcast(grads, b, g, |_| -1.0);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (a.value().clone(), b.value().clone());
            accum_broadcast(grads, a, g, |i| bval(&bv, i));
            accum_broadcast(grads, b, g, |i| bval(&av, i));
        }
        Op::Sigmoid { x } => {
            let y = node.value.data();
            accum_broadcast(grads, x, g, |i| y[i] * (1.0 - y[i]));
        }
        Op::Tanh { x } => {
            let y = node.value.data();
            accum_broadcast(grads, x, g, |i| 1.0 - y[i] * y[i]);
        }
        Op::Relu { x } => {
            let xv = x.value().clone();
            accum_broadcast(grads, x, g, |i| if xv.data()[i] > 0.0 { 1.0 } else { 0.0 });
        }
        Op::LeakyRelu { x, alpha } => {
            let xv = x.value().clone();
            let alpha = *alpha;
            accum_broadcast(grads, x, g, |i| if xv.data()[i] > 0.0 { 1.0 } else { alpha });
        }
        Op::Softplus { x } => {
            let xv = x.value().clone();
            accum_broadcast(grads, x, g, |i| kernels::sigmoid_s(xv.data()[i]));
        }
        Op::Exp { x } => {
            let y = node.value.data();
            accum_broadcast(grads, x, g, |i| y[i]);
        }
        Op::Abs { x } => {
            let xv = x.value().clone();
            accum_broadcast(grads, x, g, |i| {
                let v = xv.data()[i];
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
        }
        Op::Clamp { x, lo, hi } => {
            let xv = x.value().clone();
            let (lo, hi) = (*lo, *hi);
            accum_broadcast(grads, x, g, |i| {
                let v = xv.data()[i];
                if (lo..=hi).contains(&v) {
                    1.0
                } else {
                    0.0
                }
            });
        }
        Op::Scale { x, c } => {
            let c = *c;
            accum_broadcast(grads, x, g, |_| c);
        }
        Op::AddScalar { x, .. } => {
            accum_broadcast(grads, x, g, |_| 1.0);
        }
        Op::ReduceSum { x, axes } => {
            if x.needs_grad() {
                let shape = x.shape().to_vec();
                let buf = grad_buf(grads, x);
                kernels::reduce_backward(g, &shape, axes, 1.0, buf);
            }
        }
        Op::ReduceMean { x, axes } => {
            if x.needs_grad() {
                let shape = x.shape().to_vec();
                let scale = 1.0 / kernels::reduce_count(&shape, axes) as f32;
                let buf = grad_buf(grads, x);
                kernels::reduce_backward(g, &shape, axes, scale, buf);
            }
        }
        Op::Concat { parts } => {
            let s = node.value.shape();
            let (bsz, ctot, hw) = (s[0], s[1], s[2] * s[3]);
            let mut from = 0;
            for part in parts {
                let pc = part.shape()[1];
                if part.needs_grad() {
                    let buf = grad_buf(grads, part);
                    for bi in 0..bsz {
                        let src = &g[(bi * ctot + from) * hw..(bi * ctot + from + pc) * hw];
                        let dst = &mut buf[bi * pc * hw..(bi + 1) * pc * hw];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                }
                from += pc;
            }
        }
        Op::Slice { x, from, to } => {
            if x.needs_grad() {
                let s = x.shape();
                let (bsz, ch, hw) = (s[0], s[1], s[2] * s[3]);
                let cs = to - from;
                let buf = grad_buf(grads, x);
                for bi in 0..bsz {
                    let dst = &mut buf[(bi * ch + from) * hw..(bi * ch + to) * hw];
                    let src = &g[bi * cs * hw..(bi + 1) * cs * hw];
                    for (d, s) in dst.iter_mut().zip(src.iter()) {
                        *d += s;
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if x.needs_grad() {
                let buf = grad_buf(grads, x);
                for (d, s) in buf.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
        }
        Op::Tile { x, h, w } => {
            if x.needs_grad() {
                let hw = h * w;
                let buf = grad_buf(grads, x);
                for (bc, dst) in buf.iter_mut().enumerate() {
                    *dst += g[bc * hw..(bc + 1) * hw].iter().sum::<f32>();
                }
            }
        }
        Op::SoftmaxCe { logits, targets, probs } => {
            if logits.needs_grad() {
                let s = logits.shape();
                let (bsz, ch) = (s[0], s[1]);
                let scale = g[0] / bsz as f32;
                let buf = grad_buf(grads, logits);
                for bi in 0..bsz {
                    for j in 0..ch {
                        let onehot = if targets[bi] as usize == j { 1.0 } else { 0.0 };
                        buf[bi * ch + j] += scale * (probs[bi * ch + j] - onehot);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Concatenates [B,Ci,H,W] parts along the channel axis.
pub fn concat_channels(parts: &[&Var]) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::dim("concat_channels of zero parts".to_string()));
    }
    let first = parts[0].shape();
    if first.len() != 4 {
        return Err(Error::dim(format!("concat_channels wants 4-d parts, got {first:?}")));
    }
    let (bsz, h, w) = (first[0], first[2], first[3]);
    let mut ctot = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != 4 || s[0] != bsz || s[2] != h || s[3] != w {
            return Err(Error::dim(format!(
                "concat_channels part {:?} incompatible with {:?}",
                s, first
            )));
        }
        ctot += s[1];
    }
    let mut out = vec![0.0f32; bsz * ctot * h * w];
    let views: Vec<(&[f32], usize)> = parts.iter().map(|p| (p.value().data(), p.shape()[1])).collect();
    kernels::concat_channels_ref(&views, bsz, h * w, &mut out);
    let value = Tensor::new(&[bsz, ctot, h, w], out)?;
    let needs = parts.iter().any(|p| p.needs_grad());
    Ok(Var::from_op(
        value,
        needs,
        Op::Concat {
            parts: parts.iter().map(|p| (*p).clone()).collect(),
        },
    ))
}

/// Per-leaf gradients produced by one backward sweep.
pub struct Gradients {
    by_id: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, var: &Var) -> Option<&Tensor> {
        self.by_id.get(&var.id())
    }

    pub fn expect(&self, var: &Var, name: &str) -> Result<&Tensor> {
        self.by_id
            .get(&var.id())
            .ok_or_else(|| Error::MissingGrad(format!("no gradient reached leaf '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
