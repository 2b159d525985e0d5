//! Finite-difference gradient checking.
//!
//! Backward formulas are validated against central differences of the loss.
//! Differencing in f32 would drown real defects in rounding noise at usable
//! step sizes, so the recorded graph is replayed in f64: leaves upcast
//! exactly (or take perturbed override values) and every op re-evaluates
//! through the generic reference kernels.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::graph::{Node, Op, Var};
use crate::tensor::kernels;

/// Replays a recorded graph in f64 with optional per-leaf value overrides.
pub struct Replayer {
    nodes: Vec<Rc<Node>>,
}

impl Replayer {
    pub fn new(root: &Var) -> Replayer {
        let mut seen: HashMap<u64, Rc<Node>> = HashMap::new();
        let mut stack = vec![Rc::clone(&root.node)];
        while let Some(node) = stack.pop() {
            if seen.contains_key(&node.id) {
                continue;
            }
            for p in parents(&node.op) {
                if !seen.contains_key(&p.node.id) {
                    stack.push(Rc::clone(&p.node));
                }
            }
            seen.insert(node.id, node);
        }
        let mut nodes: Vec<Rc<Node>> = seen.into_values().collect();
        nodes.sort_by_key(|n| n.id);
        Replayer { nodes }
    }

    /// Evaluates the scalar root; `overrides` maps leaf id -> replacement data.
    pub fn eval(&self, overrides: &HashMap<u64, Vec<f64>>) -> Result<f64> {
        let mut vals: HashMap<u64, Vec<f64>> = HashMap::new();
        for node in &self.nodes {
            let v = eval_node(node, overrides, &vals)?;
            vals.insert(node.id, v);
        }
        let root = self.nodes.last().expect("replayer holds at least the root");
        let out = &vals[&root.id];
        if out.len() != 1 {
            return Err(Error::contract(format!(
                "replay root must be scalar, got {} elements",
                out.len()
            )));
        }
        Ok(out[0])
    }

    /// Central finite difference of the root w.r.t. every element of `wrt`.
    pub fn fd_gradient(&self, wrt: &Var, h: f64) -> Result<Vec<f64>> {
        let base: Vec<f64> = wrt.value().data().iter().map(|&v| v as f64).collect();
        let id = wrt.id();
        let mut out = Vec::with_capacity(base.len());
        let mut overrides = HashMap::new();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            overrides.insert(id, plus);
            let fp = self.eval(&overrides)?;
            let mut minus = base.clone();
            minus[i] -= h;
            overrides.insert(id, minus);
            let fm = self.eval(&overrides)?;
            out.push((fp - fm) / (2.0 * h));
        }
        Ok(out)
    }
}

fn parents(op: &Op) -> Vec<Var> {
    let mut out = Vec::new();
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
    out
}

fn get<'a>(vals: &'a HashMap<u64, Vec<f64>>, v: &Var) -> &'a [f64] {
    &vals[&v.id()]
}

fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        a.iter().map(|&x| f(x, b[0])).collect()
    } else {
        b.iter().map(|&y| f(a[0], y)).collect()
    }
}

fn eval_node(
    node: &Node,
    overrides: &HashMap<u64, Vec<f64>>,
    vals: &HashMap<u64, Vec<f64>>,
) -> Result<Vec<f64>> {
    let out = match &node.op {
        Op::Leaf | Op::Const => match overrides.get(&node.id) {
            Some(v) => {
                if v.len() != node.value.len() {
                    return Err(Error::contract(format!(
                        "override length {} != leaf length {}",
                        v.len(),
                        node.value.len()
                    )));
                }
                v.clone()
            }
            None => node.value.data().iter().map(|&v| v as f64).collect(),
        },
        Op::Conv2d { x, w, b, pad, stride } => {
            let xs = x.shape();
            let ws = w.shape();
            let os = node.value.shape();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::conv2d_ref(
                get(vals, x),
                xs[0],
                xs[1],
                xs[2],
                xs[3],
                get(vals, w),
                ws[0],
                ws[2],
                ws[3],
                get(vals, b),
                *pad,
                *stride,
                &mut out,
            );
            debug_assert_eq!(os.len(), 4);
            out
        }
        Op::PoolMax2 { x, .. } => {
            let s = x.shape();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::pool_max2_ref(get(vals, x), s[0], s[1], s[2], s[3], &mut out, None);
            out
        }
        Op::Upsample2 { x } => {
            let s = x.shape();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::upsample2_ref(get(vals, x), s[0], s[1], s[2], s[3], &mut out);
            out
        }
        Op::Add { a, b } => broadcast_zip(get(vals, a), get(vals, b), |x, y| x + y),
        Op::Sub { a, b } => broadcast_zip(get(vals, a), get(vals, b), |x, y| x - y),
        Op::Mul { a, b } => broadcast_zip(get(vals, a), get(vals, b), |x, y| x * y),
        Op::Sigmoid { x } => get(vals, x).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        Op::Tanh { x } => get(vals, x).iter().map(|&v| v.tanh()).collect(),
        Op::Relu { x } => get(vals, x).iter().map(|&v| v.max(0.0)).collect(),
        Op::LeakyRelu { x, alpha } => {
            let a = *alpha as f64;
            get(vals, x).iter().map(|&v| if v > 0.0 { v } else { a * v }).collect()
        }
        Op::Softplus { x } => get(vals, x)
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect(),
        Op::Exp { x } => get(vals, x).iter().map(|&v| v.exp()).collect(),
        Op::Abs { x } => get(vals, x).iter().map(|&v| v.abs()).collect(),
        Op::Clamp { x, lo, hi } => {
            let (lo, hi) = (*lo as f64, *hi as f64);
            get(vals, x).iter().map(|&v| v.clamp(lo, hi)).collect()
        }
        Op::Scale { x, c } => {
            let c = *c as f64;
            get(vals, x).iter().map(|&v| v * c).collect()
        }
        Op::AddScalar { x, c } => {
            let c = *c as f64;
            get(vals, x).iter().map(|&v| v + c).collect()
        }
        Op::ReduceSum { x, axes } => {
            let mut out = vec![0.0f64; node.value.len()];
            kernels::reduce_sum_ref(get(vals, x), x.shape(), axes, &mut out);
            out
        }
        Op::ReduceMean { x, axes } => {
            let mut out = vec![0.0f64; node.value.len()];
            kernels::reduce_sum_ref(get(vals, x), x.shape(), axes, &mut out);
            let inv = 1.0 / kernels::reduce_count(x.shape(), axes) as f64;
            out.iter_mut().for_each(|v| *v *= inv);
            out
        }
        Op::Concat { parts } => {
            let s = node.value.shape();
            let views: Vec<(&[f64], usize)> =
                parts.iter().map(|p| (get(vals, p), p.shape()[1])).collect();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::concat_channels_ref(&views, s[0], s[2] * s[3], &mut out);
            out
        }
        Op::Slice { x, from, to } => {
            let s = x.shape();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::slice_channels_ref(get(vals, x), s[0], s[1], s[2] * s[3], *from, *to, &mut out);
            out
        }
        Op::Reshape { x } => get(vals, x).to_vec(),
        Op::Tile { x, h, w } => {
            let s = x.shape();
            let mut out = vec![0.0f64; node.value.len()];
            kernels::tile_spatial_ref(get(vals, x), s[0], s[1], *h, *w, &mut out);
            out
        }
        Op::SoftmaxCe { logits, targets, .. } => {
            let s = logits.shape();
            let mut probs = vec![0.0f64; s[0] * s[1]];
            let loss = kernels::softmax_ce_ref(get(vals, logits), s[0], s[1], targets, &mut probs);
            vec![loss]
        }
    };
    Ok(out)
}

/// max_i |a_i - f_i| / max(|a_i|, |f_i|, floor)
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &f)| {
            let a = a as f64;
            (a - f).abs() / (a.abs().max(f.abs()).max(floor))
        })
        .fold(0.0, f64::max)
}

/// Checks every named leaf of `loss` against central differences.
/// Returns (name, max relative error) pairs.
pub fn check_gradients(
    loss: &Var,
    wrts: &[(&str, &Var)],
    h: f64,
    floor: f64,
) -> Result<Vec<(String, f64)>> {
    let grads = loss.backward()?;
    let rep = Replayer::new(loss);
    let mut out = Vec::with_capacity(wrts.len());
    for (name, var) in wrts {
        let fd = rep.fd_gradient(var, h)?;
        let zeros;
        let analytic: &[f32] = match grads.wrt(var) {
            Some(t) => t.data(),
            None => {
                zeros = vec![0.0f32; var.value().len()];
                &zeros
            }
        };
        out.push((name.to_string(), max_rel_err(analytic, &fd, floor)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::graph::concat_channels;
    use crate::tensor::Tensor;

    const H: f64 = 1e-3;
    const FLOOR: f64 = 1e-3;
    const TOL: f64 = 1e-4;

    fn rand(shape: &[usize], rng: &mut SeededRng, lo: f64, hi: f64) -> Var {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(lo, hi) as f32).collect();
        Var::leaf(Tensor::new(shape, data).unwrap())
    }

    fn assert_ok(loss: &Var, wrts: &[(&str, &Var)]) {
        for (name, err) in check_gradients(loss, wrts, H, FLOOR).unwrap() {
            assert!(err < TOL, "{name}: max rel err {err:.3e} >= {TOL:.0e}");
        }
    }

    #[test]
    fn conv2d_grads() {
        let mut rng = SeededRng::new(11, "gc");
        let x = rand(&[2, 3, 4, 4], &mut rng, -1.0, 1.0);
        let w = rand(&[2, 3, 3, 3], &mut rng, -0.5, 0.5);
        let b = rand(&[2], &mut rng, -0.5, 0.5);
        let loss = x.conv2d(&w, &b, 1, 1).unwrap().mul(&x.conv2d(&w, &b, 1, 1).unwrap()).unwrap().sum_all().unwrap();
        assert_ok(&loss, &[("x", &x), ("w", &w), ("b", &b)]);
    }

    #[test]
    fn conv2d_strided_grads() {
        let mut rng = SeededRng::new(12, "gc");
        let x = rand(&[1, 2, 5, 5], &mut rng, -1.0, 1.0);
        let w = rand(&[3, 2, 3, 3], &mut rng, -0.5, 0.5);
        let b = rand(&[3], &mut rng, -0.5, 0.5);
        let y = x.conv2d(&w, &b, 1, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        let loss = y.mul(&y).unwrap().sum_all().unwrap();
        assert_ok(&loss, &[("x", &x), ("w", &w), ("b", &b)]);
    }

    #[test]
    fn pool_and_upsample_grads() {
        // well-separated values keep window argmax stable under +-h
        let data: Vec<f32> = (0..32).map(|i| ((i * 13) % 32) as f32 * 0.3).collect();
        let x = Var::leaf(Tensor::new(&[1, 2, 4, 4], data).unwrap());
        let loss = x.pool_max2().unwrap().upsample_nearest2().unwrap().mul(&x).unwrap().sum_all().unwrap();
        assert_ok(&loss, &[("x", &x)]);
    }

    #[test]
    fn elementwise_grads() {
        let mut rng = SeededRng::new(13, "gc");
        let x = rand(&[3, 5], &mut rng, 0.2, 1.5); // positive, away from abs/relu kinks
        let y = rand(&[3, 5], &mut rng, -1.5, -0.2);
        let s = rand(&[], &mut rng, 0.5, 1.0);
        let t = x
            .sigmoid()
            .mul(&y.tanh())
            .unwrap()
            .add(&x.softplus().mul(&s).unwrap())
            .unwrap()
            .sub(&y.abs())
            .unwrap()
            .add(&x.exp().scale(0.1))
            .unwrap()
            .add_scalar(0.7);
        let loss = t.mean_all().unwrap();
        assert_ok(&loss, &[("x", &x), ("y", &y), ("s", &s)]);
    }

    #[test]
    fn kinked_grads_away_from_kinks() {
        let mut rng = SeededRng::new(14, "gc");
        // margins: relu/leaky at 0, clamp at +-0.8; keep 0.1 clearance
        let pos = rand(&[8], &mut rng, 0.1, 0.7);
        let neg = rand(&[8], &mut rng, -0.7, -0.1);
        let loss = pos
            .relu()
            .add(&neg.leaky_relu(0.2))
            .unwrap()
            .add(&pos.clamp(-0.8, 0.8))
            .unwrap()
            .mul(&neg.clamp(-0.8, 0.8))
            .unwrap()
            .sum_all()
            .unwrap();
        assert_ok(&loss, &[("pos", &pos), ("neg", &neg)]);
    }

    #[test]
    fn reduce_grads() {
        let mut rng = SeededRng::new(15, "gc");
        let x = rand(&[2, 3, 2, 2], &mut rng, -1.0, 1.0);
        let a = x.reduce_sum(&[2, 3]).unwrap(); // [2,3]
        let b = x.reduce_mean(&[0]).unwrap(); // [3,2,2]
        let loss = a
            .mul(&a)
            .unwrap()
            .sum_all()
            .unwrap()
            .add(&b.mul(&b).unwrap().sum_all().unwrap())
            .unwrap();
        assert_ok(&loss, &[("x", &x)]);
    }

    #[test]
    fn shape_op_grads() {
        let mut rng = SeededRng::new(16, "gc");
        let a = rand(&[2, 2, 2, 2], &mut rng, -1.0, 1.0);
        let b = rand(&[2, 1, 2, 2], &mut rng, -1.0, 1.0);
        let flat = rand(&[2, 3], &mut rng, -1.0, 1.0);
        let cat = concat_channels(&[&a, &b]).unwrap();
        let sl = cat.slice_channels(1, 3).unwrap();
        let tiled = flat.tile_spatial(2, 2).unwrap();
        let re = sl.reshape(&[2, 2, 2, 2]).unwrap();
        let loss = re.mul(&tiled.slice_channels(0, 2).unwrap()).unwrap().sum_all().unwrap();
        assert_ok(&loss, &[("a", &a), ("b", &b), ("flat", &flat)]);
    }

    #[test]
    fn softmax_ce_grads() {
        let mut rng = SeededRng::new(17, "gc");
        let logits = rand(&[4, 3], &mut rng, -1.0, 1.0);
        let loss = logits.softmax_cross_entropy(&[0, 2, 1, 1]).unwrap();
        assert_ok(&loss, &[("logits", &logits)]);
    }

    #[test]
    fn replay_matches_forward_without_overrides() {
        let mut rng = SeededRng::new(18, "gc");
        let x = rand(&[2, 2, 4, 4], &mut rng, -1.0, 1.0);
        let w = rand(&[2, 2, 3, 3], &mut rng, -0.5, 0.5);
        let b = rand(&[2], &mut rng, -0.1, 0.1);
        let loss = x
            .conv2d(&w, &b, 1, 1)
            .unwrap()
            .leaky_relu(0.2)
            .pool_max2()
            .unwrap()
            .sigmoid()
            .mean_all()
            .unwrap();
        let rep = Replayer::new(&loss);
        let v = rep.eval(&HashMap::new()).unwrap();
        let f32v = loss.value().item().unwrap() as f64;
        assert!((v - f32v).abs() < 1e-6, "replay {v} vs forward {f32v}");
    }
}
