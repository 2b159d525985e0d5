//! Synthetic video generators for three regimes — deterministic bouncing,
//! stochastic action-free bouncing, and action-conditioned pushing with a
//! stochastic contact response — plus dataset containers and probe labels.
//!
//! Every video is a pure function of (spec, seed, split, video index): each
//! video derives its own RNG substream, so generation can parallelize across
//! videos while staying bit-reproducible, and train/test splits never share
//! draws (disjoint index ranges).

pub mod bounce;
pub mod labels;
pub mod push;
pub mod render;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use bounce::gen_bounce;
pub use push::{gen_push_action, simulate_push};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    BounceDet,
    BounceStoch,
    PushAction,
}

impl DataKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataKind::BounceDet => "bounce-det",
            DataKind::BounceStoch => "bounce-stoch",
            DataKind::PushAction => "push-action",
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            DataKind::PushAction => 2,
            _ => 0,
        }
    }
}

/// Test videos draw from indices starting here so the two splits can never
/// share a substream no matter how large the train set grows.
const TEST_INDEX_OFFSET: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn base_index(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => TEST_INDEX_OFFSET,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetSpec {
    pub kind: DataKind,
    /// Frame height = width.
    pub size: usize,
    /// Frames per video.
    pub t: usize,
    /// Videos in this set.
    pub count: usize,
    /// Shape half-side in pixels.
    pub radius: f64,
    /// Per-step velocity-resample probability (bounce-stoch).
    pub stoch_p: f64,
    /// Std of the arm slip noise in pixels/step (push-action).
    pub slip_sigma: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radius <= 0.0 || self.radius >= self.size as f64 / 2.0 {
            return Err(Error::config(format!(
                "radius {} must lie in (0, {})",
                self.radius,
                self.size as f64 / 2.0
            )));
        }
        if !(0.0..=1.0).contains(&self.stoch_p) {
            return Err(Error::config(format!("stoch_p {} outside [0,1]", self.stoch_p)));
        }
        if self.slip_sigma < 0.0 {
            return Err(Error::config("slip_sigma must be >= 0".to_string()));
        }
        if self.t == 0 || self.count == 0 {
            return Err(Error::config("t and count must be >= 1".to_string()));
        }
        if self.size % 8 != 0 {
            return Err(Error::config(format!(
                "frame size {} must be divisible by 8 (encoder has 3 pooling stages)",
                self.size
            )));
        }
        Ok(())
    }
}

/// Builds the default spec for a kind (32x32 grayscale, T=30).
pub fn default_spec(kind: DataKind, seed: u64) -> DatasetSpec {
    DatasetSpec {
        kind,
        size: 32,
        t: 30,
        count: 5000,
        radius: 3.0,
        stoch_p: match kind {
            DataKind::BounceStoch => 0.1,
            _ => 0.0,
        },
        slip_sigma: match kind {
            DataKind::PushAction => 0.3,
            _ => 0.0,
        },
        seed,
    }
}

/// Frames x_1..x_T for a batch of videos: [B,T,C,H,W], values in [0,1].
#[derive(Clone, Debug)]
pub struct VideoBatch {
    frames: Tensor,
}

impl VideoBatch {
    pub fn new(frames: Tensor) -> Result<VideoBatch> {
        if frames.shape().len() != 5 {
            return Err(Error::dim(format!(
                "VideoBatch wants [B,T,C,H,W], got {:?}",
                frames.shape()
            )));
        }
        if let Some(&v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("frame value {v} outside [0,1]")));
        }
        Ok(VideoBatch { frames })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn batch(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn time(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[4]
    }

    /// All videos' frame at step `t`: [B,C,H,W].
    pub fn frames_at(&self, t: usize) -> Result<Tensor> {
        let s = self.frames.shape();
        if t >= s[1] {
            return Err(Error::dim(format!("frame index {t} out of {} steps", s[1])));
        }
        let (b, tt, chw) = (s[0], s[1], s[2] * s[3] * s[4]);
        let src = self.frames.data();
        let mut out = Vec::with_capacity(b * chw);
        for bi in 0..b {
            let from = (bi * tt + t) * chw;
            out.extend_from_slice(&src[from..from + chw]);
        }
        Tensor::new(&[b, s[2], s[3], s[4]], out)
    }

    /// Sub-batch along the video axis in the order given.
    pub fn gather(&self, idx: &[usize]) -> Result<VideoBatch> {
        let s = self.frames.shape();
        let tchw = s[1] * s[2] * s[3] * s[4];
        let src = self.frames.data();
        let mut out = Vec::with_capacity(idx.len() * tchw);
        for &bi in idx {
            if bi >= s[0] {
                return Err(Error::dim(format!("video index {bi} out of {}", s[0])));
            }
            out.extend_from_slice(&src[bi * tchw..(bi + 1) * tchw]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        Ok(VideoBatch {
            frames: Tensor::new(&shape, out)?,
        })
    }

    /// Contiguous time window [t0, t0+len).
    pub fn window(&self, t0: usize, len: usize) -> Result<VideoBatch> {
        let s = self.frames.shape();
        if t0 + len > s[1] {
            return Err(Error::dim(format!(
                "window {t0}..{} out of {} steps",
                t0 + len,
                s[1]
            )));
        }
        let chw = s[2] * s[3] * s[4];
        let src = self.frames.data();
        let mut out = Vec::with_capacity(s[0] * len * chw);
        for bi in 0..s[0] {
            let from = (bi * s[1] + t0) * chw;
            out.extend_from_slice(&src[from..from + len * chw]);
        }
        Ok(VideoBatch {
            frames: Tensor::new(&[s[0], len, s[2], s[3], s[4]], out)?,
        })
    }

    /// Stacks per-step predictions [B,C,H,W] into a batch (values validated).
    pub fn from_steps(steps: &[Tensor]) -> Result<VideoBatch> {
        if steps.is_empty() {
            return Err(Error::dim("from_steps with no frames".to_string()));
        }
        let s0 = steps[0].shape().to_vec();
        if s0.len() != 4 {
            return Err(Error::dim(format!("step frames must be [B,C,H,W], got {s0:?}")));
        }
        let (b, chw) = (s0[0], s0[1] * s0[2] * s0[3]);
        let t = steps.len();
        let mut out = vec![0.0f32; b * t * chw];
        for (ti, st) in steps.iter().enumerate() {
            if st.shape() != s0 {
                return Err(Error::dim("step frames must share one shape".to_string()));
            }
            let src = st.data();
            for bi in 0..b {
                out[(bi * t + ti) * chw..(bi * t + ti + 1) * chw]
                    .copy_from_slice(&src[bi * chw..(bi + 1) * chw]);
            }
        }
        VideoBatch::new(Tensor::new(&[b, t, s0[1], s0[2], s0[3]], out)?)
    }
}

/// Commanded per-step velocity deltas in pixels/step: [B,T,action_dim].
/// Convention: actions[,t,] is the command that produces frame t from
/// frame t-1; step 0 is all zeros.
#[derive(Clone, Debug)]
pub struct ActionSequence {
    actions: Tensor,
}

impl ActionSequence {
    pub fn new(actions: Tensor) -> Result<ActionSequence> {
        if actions.shape().len() != 3 {
            return Err(Error::dim(format!(
                "ActionSequence wants [B,T,A], got {:?}",
                actions.shape()
            )));
        }
        actions.assert_finite("actions")?;
        Ok(ActionSequence { actions })
    }

    pub fn actions(&self) -> &Tensor {
        &self.actions
    }

    pub fn batch(&self) -> usize {
        self.actions.shape()[0]
    }

    pub fn time(&self) -> usize {
        self.actions.shape()[1]
    }

    pub fn action_dim(&self) -> usize {
        self.actions.shape()[2]
    }

    /// All videos' action at step `t`: [B,A].
    pub fn actions_at(&self, t: usize) -> Result<Tensor> {
        let s = self.actions.shape();
        if t >= s[1] {
            return Err(Error::dim(format!("action index {t} out of {} steps", s[1])));
        }
        let src = self.actions.data();
        let mut out = Vec::with_capacity(s[0] * s[2]);
        for bi in 0..s[0] {
            let from = (bi * s[1] + t) * s[2];
            out.extend_from_slice(&src[from..from + s[2]]);
        }
        Tensor::new(&[s[0], s[2]], out)
    }

    pub fn gather(&self, idx: &[usize]) -> Result<ActionSequence> {
        let s = self.actions.shape();
        let ta = s[1] * s[2];
        let src = self.actions.data();
        let mut out = Vec::with_capacity(idx.len() * ta);
        for &bi in idx {
            if bi >= s[0] {
                return Err(Error::dim(format!("video index {bi} out of {}", s[0])));
            }
            out.extend_from_slice(&src[bi * ta..(bi + 1) * ta]);
        }
        Ok(ActionSequence {
            actions: Tensor::new(&[idx.len(), s[1], s[2]], out)?,
        })
    }

    pub fn window(&self, t0: usize, len: usize) -> Result<ActionSequence> {
        let s = self.actions.shape();
        if t0 + len > s[1] {
            return Err(Error::dim(format!(
                "action window {t0}..{} out of {} steps",
                t0 + len,
                s[1]
            )));
        }
        let src = self.actions.data();
        let mut out = Vec::with_capacity(s[0] * len * s[2]);
        for bi in 0..s[0] {
            let from = (bi * s[1] + t0) * s[2];
            out.extend_from_slice(&src[from..from + len * s[2]]);
        }
        Ok(ActionSequence {
            actions: Tensor::new(&[s[0], len, s[2]], out)?,
        })
    }
}

/// Generates one split of a dataset; pure in (spec, split).
pub fn generate(spec: &DatasetSpec, split: Split) -> Result<(VideoBatch, Option<ActionSequence>)> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed, "data");
    let base = split.base_index();
    match spec.kind {
        DataKind::BounceDet | DataKind::BounceStoch => {
            let frames = gen_bounce(spec, &root, base)?;
            Ok((frames, None))
        }
        DataKind::PushAction => {
            let (frames, actions) = gen_push_action(spec, &root, base)?;
            Ok((frames, Some(actions)))
        }
    }
}

/// Writes frames (+ optional actions) as an MVPT container with a JSON
/// sidecar recording the spec.
pub fn save_dataset(
    path: &Path,
    spec: &DatasetSpec,
    videos: &VideoBatch,
    actions: Option<&ActionSequence>,
) -> Result<()> {
    let mut map = std::collections::BTreeMap::new();
    map.insert("frames".to_string(), videos.frames().clone());
    if let Some(a) = actions {
        map.insert("actions".to_string(), a.actions().clone());
    }
    crate::io::write_tensors(path, &map)?;
    crate::io::write_json(&path.with_extension("json"), spec)
}

pub fn load_dataset(path: &Path) -> Result<(VideoBatch, Option<ActionSequence>)> {
    let mut map = crate::io::read_tensors(path)?;
    let frames = map
        .remove("frames")
        .ok_or_else(|| Error::format("container has no 'frames' tensor".to_string()))?;
    let videos = VideoBatch::new(frames)?;
    let actions = match map.remove("actions") {
        Some(a) => Some(ActionSequence::new(a)?),
        None => None,
    };
    Ok((videos, actions))
}
