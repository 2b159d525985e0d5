//! Frozen feature probes backing the perceptual metrics.
//!
//! Two small classifiers are trained once per dataset on label tasks derived
//! from rendered pixels (centroid quadrant per frame, net-displacement
//! quadrant per clip), then frozen. Metrics consume their penultimate
//! features: the frame probe feeds cosine distance, the video probe feeds
//! the Frechet distance. Training must clear a held-out accuracy floor on
//! both tasks or it fails with a calibration error; an unchecked probe never
//! reaches the metric layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::labels::{displacement, frame_label, video_label, NUM_CLASSES};
use crate::data::VideoBatch;
use crate::error::{Error, Result};
use crate::layers::{conv3, init_conv, VarMap, LRELU_ALPHA};
use crate::models::ParameterStore;
use crate::objective::{adam_step, AdamConfig, AdamState};
use crate::rng::SeededRng;
use crate::tensor::graph::Var;
use crate::tensor::Tensor;

/// Penultimate feature width of both probes.
pub const FEATURE_DIM: usize = 64;
/// Conv widths of the three blocks in each probe.
pub const PROBE_WIDTHS: [usize; 3] = [16, 32, 64];
/// Spatial pools per frame-probe block. The stack collapses 32px frames to
/// 1x1 before the global average pool; GAP over a wider map would average
/// away the absolute position the label task depends on.
pub const FRAME_POOLS: [usize; 3] = [1, 2, 2];
/// Clip length the video probe is trained on.
pub const CLIP_LEN: usize = 16;
/// Shortest clip the video probe accepts: three valid temporal convs.
pub const MIN_CLIP_LEN: usize = 7;

const FRAME_CHUNK: usize = 128;
const CLIP_CHUNK: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub frame_steps: usize,
    pub video_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub min_accuracy: f64,
    pub holdout_frames: usize,
    pub holdout_clips: usize,
}

impl Default for ProbeTrainConfig {
    fn default() -> ProbeTrainConfig {
        ProbeTrainConfig {
            frame_steps: 600,
            video_steps: 700,
            batch: 32,
            lr: 1e-3,
            min_accuracy: 0.8,
            holdout_frames: 512,
            holdout_clips: 128,
        }
    }
}

/// Sidecar recorded next to the checkpoint; class labels and held-out
/// accuracy travel with the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub feature_dim: usize,
    pub classes: usize,
    pub channels: usize,
    pub frame_size: usize,
    pub dataset: String,
    pub dataset_seed: u64,
    pub frame_task: String,
    pub video_task: String,
    pub frame_accuracy: f64,
    pub video_accuracy: f64,
}

pub struct ProbeNetworks {
    frame: ParameterStore,
    video: ParameterStore,
    meta: ProbeMeta,
}

fn init_frame_probe(channels: usize, rng: &SeededRng) -> ParameterStore {
    let mut map = std::collections::BTreeMap::new();
    let mut cin = channels;
    for (i, &w) in PROBE_WIDTHS.iter().enumerate() {
        init_conv(&mut map, &format!("fp.b{i}"), w, cin, 3, rng);
        cin = w;
    }
    init_conv(&mut map, "fp.head", NUM_CLASSES, FEATURE_DIM, 1, rng);
    ParameterStore::from_map(map)
}

fn init_video_probe(channels: usize, rng: &SeededRng) -> ParameterStore {
    let mut map = std::collections::BTreeMap::new();
    let mut cin = channels;
    for (i, &w) in PROBE_WIDTHS.iter().enumerate() {
        // Three temporal taps share one fan-in of cin*3*3*3.
        let std = (2.0f32 / (cin * 27) as f32).sqrt();
        for tap in ["wm", "w0", "wp"] {
            let name = format!("vp.b{i}.{tap}");
            let mut sub = rng.derive(&name);
            map.insert(name, Tensor::randn(&[w, cin, 3, 3], std, &mut sub));
        }
        map.insert(format!("vp.b{i}.b"), Tensor::zeros(&[w]));
        cin = w;
    }
    init_conv(&mut map, "vp.head", NUM_CLASSES, FEATURE_DIM, 1, rng);
    ParameterStore::from_map(map)
}

/// Frame trunk: three conv blocks with spatial pooling, then global average
/// pooling down to [B, FEATURE_DIM].
fn frame_trunk(vars: &VarMap, x: &Var) -> Result<Var> {
    let mut h = x.clone();
    for i in 0..PROBE_WIDTHS.len() {
        h = conv3(vars, &format!("fp.b{i}"), &h)?.leaky_relu(LRELU_ALPHA);
        for _ in 0..FRAME_POOLS[i] {
            let (ph, pw) = (h.shape()[2], h.shape()[3]);
            if ph >= 2 && pw >= 2 && ph % 2 == 0 && pw % 2 == 0 {
                h = h.pool_max2()?;
            }
        }
    }
    h.reduce_mean(&[2, 3])
}

/// Video trunk: three 3x3x3 conv blocks, valid in time, pooled in space,
/// then a global pool over the remaining frames.
fn video_trunk(vars: &VarMap, frames: &[Var]) -> Result<Var> {
    if frames.len() < MIN_CLIP_LEN {
        return Err(Error::config(format!(
            "video probe needs >= {MIN_CLIP_LEN} frames, got {}",
            frames.len()
        )));
    }
    let mut fs: Vec<Var> = frames.to_vec();
    for i in 0..PROBE_WIDTHS.len() {
        let wm = vars.get(&format!("vp.b{i}.wm"))?;
        let w0 = vars.get(&format!("vp.b{i}.w0"))?;
        let wp = vars.get(&format!("vp.b{i}.wp"))?;
        let b = vars.get(&format!("vp.b{i}.b"))?;
        let zero_b = Var::constant(Tensor::zeros(&[PROBE_WIDTHS[i]]));
        let mut next = Vec::with_capacity(fs.len() - 2);
        for d in 1..fs.len() - 1 {
            let y = fs[d - 1]
                .conv2d(wm, &zero_b, 1, 1)?
                .add(&fs[d].conv2d(w0, b, 1, 1)?)?
                .add(&fs[d + 1].conv2d(wp, &zero_b, 1, 1)?)?;
            next.push(y.leaky_relu(LRELU_ALPHA).pool_max2()?);
        }
        fs = next;
    }
    let mut acc = fs[0].reduce_mean(&[2, 3])?;
    for f in &fs[1..] {
        acc = acc.add(&f.reduce_mean(&[2, 3])?)?;
    }
    Ok(acc.scale(1.0 / fs.len() as f32))
}

/// Linear head over pooled features: 1x1 conv on [B, F, 1, 1].
fn probe_head(vars: &VarMap, prefix: &str, feats: &Var) -> Result<Var> {
    let b = feats.shape()[0];
    let w = vars.get(&format!("{prefix}.head.w"))?;
    let bias = vars.get(&format!("{prefix}.head.b"))?;
    feats
        .reshape(&[b, FEATURE_DIM, 1, 1])?
        .conv2d(w, bias, 0, 1)?
        .reshape(&[b, NUM_CLASSES])
}

/// Copy frame (b, t) slices of a batch into one [N, C, H, W] tensor.
fn stack_frames(v: &VideoBatch, picks: &[(usize, usize)]) -> Result<Tensor> {
    let (c, h, w) = (v.channels(), v.height(), v.width());
    let stride = c * h * w;
    let data = v.frames().data();
    let mut out = Vec::with_capacity(picks.len() * stride);
    for &(b, t) in picks {
        let off = (b * v.time() + t) * stride;
        out.extend_from_slice(&data[off..off + stride]);
    }
    Tensor::new(&[picks.len(), c, h, w], out)
}

/// Copy clips (b, t0..t0+len) into per-timestep tensors [N, C, H, W] and
/// return them with the per-clip displacement labels.
fn stack_clips(
    v: &VideoBatch,
    picks: &[(usize, usize)],
    len: usize,
) -> Result<(Vec<Tensor>, Vec<u32>)> {
    let (c, h, w) = (v.channels(), v.height(), v.width());
    let stride = c * h * w;
    let data = v.frames().data();
    let mut steps = Vec::with_capacity(len);
    for dt in 0..len {
        let mut out = Vec::with_capacity(picks.len() * stride);
        for &(b, t0) in picks {
            let off = (b * v.time() + t0 + dt) * stride;
            out.extend_from_slice(&data[off..off + stride]);
        }
        steps.push(Tensor::new(&[picks.len(), c, h, w], out)?);
    }
    let labels = picks
        .iter()
        .map(|&(b, t0)| {
            let off = (b * v.time() + t0) * stride;
            video_label(&data[off..off + len * stride], len, h, w) as u32
        })
        .collect();
    Ok((steps, labels))
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

/// Deterministic held-out picks: frames row-major, clips strided over start
/// offsets so labels vary.
fn holdout_frame_picks(v: &VideoBatch, cap: usize) -> Vec<(usize, usize)> {
    let mut picks = Vec::new();
    'outer: for b in 0..v.batch() {
        for t in 0..v.time() {
            picks.push((b, t));
            if picks.len() >= cap {
                break 'outer;
            }
        }
    }
    picks
}

/// Clips whose net displacement hugs a quadrant axis carry no learnable
/// direction signal, so the direction task is defined on clips at least this
/// far from both axes. Falls back to every clip if none clear the margin.
const CLIP_MARGIN: f64 = 2.0;

fn clear_clip_pool(v: &VideoBatch, len: usize) -> Vec<(usize, usize)> {
    let (h, w) = (v.height(), v.width());
    let stride = v.channels() * h * w;
    let data = v.frames().data();
    let starts = v.time() - len + 1;
    let mut pool = Vec::new();
    for b in 0..v.batch() {
        for t0 in 0..starts {
            let off = (b * v.time() + t0) * stride;
            if let Some((dx, dy)) = displacement(&data[off..off + len * stride], len, h, w) {
                if dx.abs() >= CLIP_MARGIN && dy.abs() >= CLIP_MARGIN {
                    pool.push((b, t0));
                }
            }
        }
    }
    if pool.is_empty() {
        pool = (0..v.batch())
            .flat_map(|b| (0..starts).map(move |t0| (b, t0)))
            .collect();
    }
    pool
}

fn holdout_clip_picks(pool: &[(usize, usize)], cap: usize) -> Vec<(usize, usize)> {
    let n = cap.min(pool.len());
    let step = (pool.len() / n).max(1);
    (0..n).map(|i| pool[i * step]).collect()
}

fn frame_accuracy(store: &ParameterStore, v: &VideoBatch, cap: usize) -> Result<f64> {
    let picks = holdout_frame_picks(v, cap);
    let (h, w) = (v.height(), v.width());
    let stride = v.channels() * h * w;
    let data = v.frames().data();
    let mut hits = 0usize;
    for chunk in picks.chunks(FRAME_CHUNK) {
        let x = Var::constant(stack_frames(v, chunk)?);
        let vars = store.bind(false);
        let logits = probe_head(&vars, "fp", &frame_trunk(&vars, &x)?)?;
        for (pred, &(b, t)) in argmax_rows(logits.value()).iter().zip(chunk) {
            let off = (b * v.time() + t) * stride;
            if *pred == frame_label(&data[off..off + stride], h, w) as usize {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / picks.len() as f64)
}

fn video_accuracy(store: &ParameterStore, v: &VideoBatch, cap: usize) -> Result<f64> {
    let picks = holdout_clip_picks(&clear_clip_pool(v, CLIP_LEN), cap);
    let mut hits = 0usize;
    for chunk in picks.chunks(CLIP_CHUNK) {
        let (steps, labels) = stack_clips(v, chunk, CLIP_LEN)?;
        let frames: Vec<Var> = steps.into_iter().map(Var::constant).collect();
        let vars = store.bind(false);
        let logits = probe_head(&vars, "vp", &video_trunk(&vars, &frames)?)?;
        for (pred, &want) in argmax_rows(logits.value()).iter().zip(&labels) {
            if *pred == want as usize {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / picks.len() as f64)
}

/// Train both probes on the train split, gate on held-out accuracy, freeze.
pub fn train_probes(
    train: &VideoBatch,
    holdout: &VideoBatch,
    dataset: &str,
    dataset_seed: u64,
    cfg: &ProbeTrainConfig,
    seed: u64,
) -> Result<ProbeNetworks> {
    if train.time() < CLIP_LEN || holdout.time() < CLIP_LEN {
        return Err(Error::config(format!(
            "probe training needs >= {CLIP_LEN} frames per video, got {} / {}",
            train.time(),
            holdout.time()
        )));
    }
    if train.height() != holdout.height() || train.channels() != holdout.channels() {
        return Err(Error::contract("probe splits disagree on frame shape".to_string()));
    }
    let root = SeededRng::new(seed, "probes");
    let adam = AdamConfig::with_lr(cfg.lr as f32);

    let mut frame_store = init_frame_probe(train.channels(), &root.derive("frame-init"));
    let (h, w) = (train.height(), train.width());
    let stride = train.channels() * h * w;
    let data = train.frames().data();
    let frng = root.derive("frame");
    let mut state = AdamState::new();
    for step in 0..cfg.frame_steps {
        let mut srng = frng.derive_indexed("step", step as u64);
        let picks: Vec<(usize, usize)> = (0..cfg.batch)
            .map(|_| (srng.index(train.batch()), srng.index(train.time())))
            .collect();
        let x = Var::constant(stack_frames(train, &picks)?);
        let targets: Vec<u32> = picks
            .iter()
            .map(|&(b, t)| {
                let off = (b * train.time() + t) * stride;
                frame_label(&data[off..off + stride], h, w) as u32
            })
            .collect();
        let vars = frame_store.bind(true);
        let logits = probe_head(&vars, "fp", &frame_trunk(&vars, &x)?)?;
        let loss = logits.softmax_cross_entropy(&targets)?;
        let grads = loss.backward()?;
        adam_step(&mut frame_store, &vars, &grads, &mut state, &adam)?;
    }

    let mut video_store = init_video_probe(train.channels(), &root.derive("video-init"));
    let vrng = root.derive("video");
    let mut state = AdamState::new();
    let pool = clear_clip_pool(train, CLIP_LEN);
    let clip_batch = cfg.batch.min(8).max(2);
    for step in 0..cfg.video_steps {
        let mut srng = vrng.derive_indexed("step", step as u64);
        let picks: Vec<(usize, usize)> = (0..clip_batch)
            .map(|_| pool[srng.index(pool.len())])
            .collect();
        let (steps, targets) = stack_clips(train, &picks, CLIP_LEN)?;
        let frames: Vec<Var> = steps.into_iter().map(Var::constant).collect();
        let vars = video_store.bind(true);
        let logits = probe_head(&vars, "vp", &video_trunk(&vars, &frames)?)?;
        let loss = logits.softmax_cross_entropy(&targets)?;
        let grads = loss.backward()?;
        adam_step(&mut video_store, &vars, &grads, &mut state, &adam)?;
    }

    let frame_acc = frame_accuracy(&frame_store, holdout, cfg.holdout_frames)?;
    let video_acc = video_accuracy(&video_store, holdout, cfg.holdout_clips)?;
    if frame_acc < cfg.min_accuracy || video_acc < cfg.min_accuracy {
        return Err(Error::Calibration(format!(
            "probe held-out accuracy below {:.2}: frame {:.3} (centroid quadrant), \
             video {:.3} (displacement quadrant) on dataset {dataset}",
            cfg.min_accuracy, frame_acc, video_acc
        )));
    }
    Ok(ProbeNetworks {
        frame: frame_store,
        video: video_store,
        meta: ProbeMeta {
            feature_dim: FEATURE_DIM,
            classes: NUM_CLASSES,
            channels: train.channels(),
            frame_size: train.height(),
            dataset: dataset.to_string(),
            dataset_seed,
            frame_task: "centroid-quadrant".to_string(),
            video_task: "displacement-quadrant".to_string(),
            frame_accuracy: frame_acc,
            video_accuracy: video_acc,
        },
    })
}

impl ProbeNetworks {
    pub fn meta(&self) -> &ProbeMeta {
        &self.meta
    }

    /// Penultimate features for a stack of frames [N, C, H, W].
    pub fn frame_features(&self, frames: &Tensor) -> Result<Tensor> {
        let shape = frames.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.meta.channels {
            return Err(Error::dim(format!(
                "frame features expect [N, {}, H, W], got {shape:?}",
                self.meta.channels
            )));
        }
        let n = shape[0];
        let stride: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(n * FEATURE_DIM);
        let vars = self.frame.bind(false);
        for chunk_start in (0..n).step_by(FRAME_CHUNK) {
            let m = FRAME_CHUNK.min(n - chunk_start);
            let off = chunk_start * stride;
            let x = Var::constant(Tensor::new(
                &[m, shape[1], shape[2], shape[3]],
                frames.data()[off..off + m * stride].to_vec(),
            )?);
            let feats = frame_trunk(&vars, &x)?;
            out.extend_from_slice(feats.value().data());
        }
        Tensor::new(&[n, FEATURE_DIM], out)
    }

    /// Penultimate features for whole clips; needs >= MIN_CLIP_LEN frames.
    pub fn video_features(&self, clips: &VideoBatch) -> Result<Tensor> {
        if clips.time() < MIN_CLIP_LEN {
            return Err(Error::config(format!(
                "video features need >= {MIN_CLIP_LEN} frames, got {}",
                clips.time()
            )));
        }
        if clips.channels() != self.meta.channels {
            return Err(Error::dim("clip channels disagree with probe".to_string()));
        }
        let n = clips.batch();
        let mut out = Vec::with_capacity(n * FEATURE_DIM);
        let vars = self.video.bind(false);
        for chunk_start in (0..n).step_by(CLIP_CHUNK) {
            let m = CLIP_CHUNK.min(n - chunk_start);
            let idx: Vec<usize> = (chunk_start..chunk_start + m).collect();
            let sub = clips.gather(&idx)?;
            let frames: Vec<Var> = (0..sub.time())
                .map(|t| sub.frames_at(t).map(Var::constant))
                .collect::<Result<_>>()?;
            let feats = video_trunk(&vars, &frames)?;
            out.extend_from_slice(feats.value().data());
        }
        Tensor::new(&[n, FEATURE_DIM], out)
    }

    /// Checkpoint: one weight container plus a JSON sidecar with the meta.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut merged = self.frame.map().clone();
        for (k, v) in self.video.map() {
            merged.insert(k.clone(), v.clone());
        }
        ParameterStore::from_map(merged).save(path)?;
        let side = path.with_extension("json");
        std::fs::write(&side, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ProbeNetworks> {
        let merged = ParameterStore::load(path)?;
        let side = path.with_extension("json");
        let meta: ProbeMeta = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
        if meta.feature_dim != FEATURE_DIM || meta.classes != NUM_CLASSES {
            return Err(Error::format(format!(
                "probe sidecar advertises feature dim {} / {} classes",
                meta.feature_dim, meta.classes
            )));
        }
        let mut frame = std::collections::BTreeMap::new();
        let mut video = std::collections::BTreeMap::new();
        for (k, v) in merged.map() {
            if k.starts_with("fp.") {
                frame.insert(k.clone(), v.clone());
            } else if k.starts_with("vp.") {
                video.insert(k.clone(), v.clone());
            } else {
                return Err(Error::format(format!("unexpected probe parameter {k}")));
            }
        }
        if frame.is_empty() || video.is_empty() {
            return Err(Error::format("probe checkpoint missing a network".to_string()));
        }
        Ok(ProbeNetworks {
            frame: ParameterStore::from_map(frame),
            video: ParameterStore::from_map(video),
            meta,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Randomly initialized probes for metric plumbing tests.
    pub(crate) fn untrained(channels: usize, dataset: &str, seed: u64) -> ProbeNetworks {
        let rng = SeededRng::new(5, "probe-test");
        ProbeNetworks {
            frame: init_frame_probe(channels, &rng.derive("f")),
            video: init_video_probe(channels, &rng.derive("v")),
            meta: ProbeMeta {
                feature_dim: FEATURE_DIM,
                classes: NUM_CLASSES,
                channels,
                frame_size: 32,
                dataset: dataset.to_string(),
                dataset_seed: seed,
                frame_task: "centroid-quadrant".to_string(),
                video_task: "displacement-quadrant".to_string(),
                frame_accuracy: 0.0,
                video_accuracy: 0.0,
            },
        }
    }
}
