//! Evaluation harness: per-frame scores, best-of-S selection, and the
//! distributional video score.
//!
//! Everything here is a pure function of the sampled trajectories, the held
//! out targets, and a frozen probe checkpoint; re-running an evaluation on
//! the same inputs reproduces every number bitwise. Parallel scoring runs
//! over (video, sample) pairs and aggregates in fixed ascending order.

pub mod fvd;
pub mod probes;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::VideoBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use fvd::{fvd, FeatureSet, FVD_SHRINKAGE};
pub use probes::{
    train_probes, ProbeMeta, ProbeNetworks, ProbeTrainConfig, CLIP_LEN, FEATURE_DIM,
    MIN_CLIP_LEN,
};

/// PSNR saturates here; below this MSE two frames count as identical.
pub const PSNR_CAP: f64 = 50.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-5;
/// Uniform SSIM window edge.
pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 1e-4; // (0.01)^2
const SSIM_C2: f64 = 9e-4; // (0.03)^2
/// Norms below this make cosine distance meaningless; score is zero.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// S sampled futures per video: [S, B, T, C, H, W]. S = 1 holds the output
/// of a deterministic model.
pub struct TrajectorySet {
    samples: Tensor,
}

impl TrajectorySet {
    pub fn new(samples: Tensor) -> Result<TrajectorySet> {
        let shape = samples.shape();
        if shape.len() != 6 || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!(
                "trajectories must be [S, B, T, C, H, W] with no empty axis, got {shape:?}"
            )));
        }
        if samples.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract(
                "trajectory values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(TrajectorySet { samples })
    }

    /// Stack per-sample rollouts of identical shape.
    pub fn from_samples(samples: &[VideoBatch]) -> Result<TrajectorySet> {
        if samples.is_empty() {
            return Err(Error::dim("need at least one sample".to_string()));
        }
        let shape = samples[0].frames().shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * samples[0].frames().len());
        for s in samples {
            if s.frames().shape() != shape.as_slice() {
                return Err(Error::dim("samples disagree on shape".to_string()));
            }
            data.extend_from_slice(s.frames().data());
        }
        let mut full = vec![samples.len()];
        full.extend_from_slice(&shape);
        TrajectorySet::new(Tensor::new(&full, data)?)
    }

    pub fn s(&self) -> usize {
        self.samples.shape()[0]
    }
    pub fn videos(&self) -> usize {
        self.samples.shape()[1]
    }
    pub fn time(&self) -> usize {
        self.samples.shape()[2]
    }
    pub fn channels(&self) -> usize {
        self.samples.shape()[3]
    }
    pub fn height(&self) -> usize {
        self.samples.shape()[4]
    }
    pub fn width(&self) -> usize {
        self.samples.shape()[5]
    }

    fn frame_stride(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Frame (s, b, t) as a raw slice.
    pub fn frame(&self, s: usize, b: usize, t: usize) -> &[f32] {
        let stride = self.frame_stride();
        let off = ((s * self.videos() + b) * self.time() + t) * stride;
        &self.samples.data()[off..off + stride]
    }

    /// One sample as a video batch (copies the block).
    pub fn sample(&self, s: usize) -> Result<VideoBatch> {
        let block = self.videos() * self.time() * self.frame_stride();
        let off = s * block;
        VideoBatch::new(Tensor::new(
            &self.samples.shape()[1..],
            self.samples.data()[off..off + block].to_vec(),
        )?)
    }
}

fn frame_of(v: &VideoBatch, b: usize, t: usize) -> &[f32] {
    let stride = v.channels() * v.height() * v.width();
    let off = (b * v.time() + t) * stride;
    &v.frames().data()[off..off + stride]
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

fn psnr_slices(pred: &[f32], target: &[f32]) -> f64 {
    let m = mse(pred, target);
    if m < PSNR_MSE_FLOOR {
        PSNR_CAP
    } else {
        10.0 * (1.0 / m).log10()
    }
}

/// Peak signal-to-noise ratio in dB for unit-range frames.
pub fn psnr(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "psnr shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(psnr_slices(pred.data(), target.data()))
}

/// Window sums over an (h+1)x(w+1) integral image.
struct Integral {
    sums: Vec<f64>,
    w1: usize,
}

impl Integral {
    fn build(plane: &[f64], h: usize, w: usize) -> Integral {
        let w1 = w + 1;
        let mut sums = vec![0.0; (h + 1) * w1];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += plane[i * w + j];
                sums[(i + 1) * w1 + j + 1] = sums[i * w1 + j + 1] + row;
            }
        }
        Integral { sums, w1 }
    }

    /// Sum over rows i..i+k, cols j..j+k.
    fn window(&self, i: usize, j: usize, k: usize) -> f64 {
        let (a, b) = (i, j);
        let (c, d) = (i + k, j + k);
        self.sums[c * self.w1 + d] - self.sums[a * self.w1 + d] - self.sums[c * self.w1 + b]
            + self.sums[a * self.w1 + b]
    }
}

fn ssim_plane(x: &[f32], y: &[f32], h: usize, w: usize) -> f64 {
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let xy: Vec<f64> = xf.iter().zip(&yf).map(|(a, b)| a * b).collect();
    let xx: Vec<f64> = xf.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = yf.iter().map(|a| a * a).collect();
    let ix = Integral::build(&xf, h, w);
    let iy = Integral::build(&yf, h, w);
    let ixx = Integral::build(&xx, h, w);
    let iyy = Integral::build(&yy, h, w);
    let ixy = Integral::build(&xy, h, w);

    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..=(h - k) {
        for j in 0..=(w - k) {
            let mx = ix.window(i, j, k) / n;
            let my = iy.window(i, j, k) / n;
            let vx = ixx.window(i, j, k) / n - mx * mx;
            let vy = iyy.window(i, j, k) / n - my * my;
            let cxy = ixy.window(i, j, k) / n - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            acc += num / den;
            count += 1;
        }
    }
    acc / count as f64
}

/// Mean SSIM over all valid 7x7 windows of every channel plane.
pub fn ssim(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "ssim shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::dim("ssim needs at least [H, W]".to_string()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let planes = pred.len() / (h * w);
    let mut acc = 0.0;
    for p in 0..planes {
        let off = p * h * w;
        acc += ssim_plane(
            &pred.data()[off..off + h * w],
            &target.data()[off..off + h * w],
            h,
            w,
        );
    }
    Ok(acc / planes as f64)
}

/// Cosine similarity with a zero-vector guard.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMetric {
    Psnr,
    Ssim,
    Cosine,
}

/// Per-frame scores for every (sample, video, timestep).
pub fn frame_scores(
    ts: &TrajectorySet,
    target: &VideoBatch,
    metric: FrameMetric,
    probes: Option<&ProbeNetworks>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if ts.videos() != target.batch()
        || ts.time() != target.time()
        || ts.channels() != target.channels()
        || ts.height() != target.height()
        || ts.width() != target.width()
    {
        return Err(Error::dim(format!(
            "trajectories [{}x{}x{}x{}x{}x{}] do not match targets",
            ts.s(),
            ts.videos(),
            ts.time(),
            ts.channels(),
            ts.height(),
            ts.width()
        )));
    }
    let (s_n, b_n, t_n) = (ts.s(), ts.videos(), ts.time());
    match metric {
        FrameMetric::Psnr | FrameMetric::Ssim => {
            let shape = [ts.channels(), ts.height(), ts.width()];
            let pairs: Vec<(usize, usize)> = (0..s_n)
                .flat_map(|s| (0..b_n).map(move |b| (s, b)))
                .collect();
            let scored: Vec<Vec<f64>> = pairs
                .par_iter()
                .map(|&(s, b)| {
                    (0..t_n)
                        .map(|t| {
                            let p = ts.frame(s, b, t);
                            let g = frame_of(target, b, t);
                            match metric {
                                FrameMetric::Psnr => Ok(psnr_slices(p, g)),
                                FrameMetric::Ssim => {
                                    let pt = Tensor::new(&shape, p.to_vec())?;
                                    let gt = Tensor::new(&shape, g.to_vec())?;
                                    ssim(&pt, &gt)
                                }
                                FrameMetric::Cosine => unreachable!(),
                            }
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(scored
                .chunks(b_n)
                .map(|c| c.to_vec())
                .collect())
        }
        FrameMetric::Cosine => {
            let probes = probes.ok_or_else(|| {
                Error::contract("cosine distance needs a trained probe".to_string())
            })?;
            let flat = [
                b_n * t_n,
                target.channels(),
                target.height(),
                target.width(),
            ];
            let tgt_feats = probes.frame_features(&target.frames().reshaped(&flat)?)?;
            let mut out = Vec::with_capacity(s_n);
            for s in 0..s_n {
                let sample = ts.sample(s)?;
                let feats = probes.frame_features(&sample.frames().reshaped(&flat)?)?;
                let mut per_video = Vec::with_capacity(b_n);
                for b in 0..b_n {
                    let mut per_t = Vec::with_capacity(t_n);
                    for t in 0..t_n {
                        let off = (b * t_n + t) * FEATURE_DIM;
                        per_t.push(cosine(
                            &feats.data()[off..off + FEATURE_DIM],
                            &tgt_feats.data()[off..off + FEATURE_DIM],
                        ));
                    }
                    per_video.push(per_t);
                }
                out.push(per_video);
            }
            Ok(out)
        }
    }
}

/// Best-of-S selection for one metric over scores[s][b][t].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestOfS {
    /// Winning sample index per video; ties take the lowest index.
    pub chosen: Vec<usize>,
    /// Per-video curve of the winning sample.
    pub per_video: Vec<Vec<f64>>,
    /// Horizon mean of the winning sample, per video.
    pub video_means: Vec<f64>,
    /// Mean over videos per timestep.
    pub curve: Vec<f64>,
}

pub fn best_of_s(scores: &[Vec<Vec<f64>>]) -> Result<BestOfS> {
    if scores.is_empty() || scores[0].is_empty() || scores[0][0].is_empty() {
        return Err(Error::dim("best-of-s needs nonempty scores".to_string()));
    }
    let (s_n, b_n, t_n) = (scores.len(), scores[0].len(), scores[0][0].len());
    let mut chosen = Vec::with_capacity(b_n);
    let mut per_video = Vec::with_capacity(b_n);
    let mut video_means = Vec::with_capacity(b_n);
    for b in 0..b_n {
        let mut best = 0usize;
        let mut best_mean = f64::NEG_INFINITY;
        for s in 0..s_n {
            let mean = scores[s][b].iter().sum::<f64>() / t_n as f64;
            if mean > best_mean {
                best_mean = mean;
                best = s;
            }
        }
        chosen.push(best);
        per_video.push(scores[best][b].clone());
        video_means.push(best_mean);
    }
    let curve = (0..t_n)
        .map(|t| per_video.iter().map(|v| v[t]).sum::<f64>() / b_n as f64)
        .collect();
    Ok(BestOfS {
        chosen,
        per_video,
        video_means,
        curve,
    })
}

/// Trivial baseline: repeat the final context frame over the horizon.
pub fn copy_last_frame(context: &VideoBatch, horizon: usize) -> Result<VideoBatch> {
    if horizon == 0 {
        return Err(Error::config("horizon must be positive".to_string()));
    }
    let last = context.time() - 1;
    let stride = context.channels() * context.height() * context.width();
    let mut data = Vec::with_capacity(context.batch() * horizon * stride);
    for b in 0..context.batch() {
        let frame = frame_of(context, b, last);
        for _ in 0..horizon {
            data.extend_from_slice(frame);
        }
    }
    VideoBatch::new(Tensor::new(
        &[
            context.batch(),
            horizon,
            context.channels(),
            context.height(),
            context.width(),
        ],
        data,
    )?)
}

/// Tail window of (context followed by future), per video.
fn assemble_clips(context: &VideoBatch, future: &VideoBatch, win: usize) -> Result<VideoBatch> {
    let total = context.time() + future.time();
    let skip = total - win;
    let stride = context.channels() * context.height() * context.width();
    let mut data = Vec::with_capacity(context.batch() * win * stride);
    for b in 0..context.batch() {
        for t in skip..total {
            let frame = if t < context.time() {
                frame_of(context, b, t)
            } else {
                frame_of(future, b, t - context.time())
            };
            data.extend_from_slice(frame);
        }
    }
    VideoBatch::new(Tensor::new(
        &[
            context.batch(),
            win,
            context.channels(),
            context.height(),
            context.width(),
        ],
        data,
    )?)
}

fn feature_rows(feats: &Tensor) -> Vec<Vec<f32>> {
    feats
        .data()
        .chunks(FEATURE_DIM)
        .map(|c| c.to_vec())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCurves {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub cosine: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video: usize,
    pub chosen_psnr: usize,
    pub chosen_ssim: usize,
    pub chosen_cosine: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub s: usize,
    pub videos: usize,
    pub context: usize,
    pub horizon: usize,
    pub seed: u64,
    pub model: serde_json::Value,
    pub probe_dataset: String,
    pub probe_frame_accuracy: f64,
    pub probe_video_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub curves: MetricCurves,
    pub fvd: f64,
    pub per_video: Vec<VideoRecord>,
}

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Per-timestep curves, one row per prediction step (1-based).
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,psnr,ssim,cosine\n");
        for t in 0..self.meta.horizon {
            out.push_str(&format!(
                "{},{},{},{}\n",
                t + 1,
                self.curves.psnr[t],
                self.curves.ssim[t],
                self.curves.cosine[t]
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Full evaluation: best-of-S curves for the three frame metrics plus the
/// distributional score over all S samples.
pub fn evaluate_trajectories(
    ts: &TrajectorySet,
    target: &VideoBatch,
    context: &VideoBatch,
    probes: &ProbeNetworks,
    seed: u64,
    model: serde_json::Value,
) -> Result<MetricReport> {
    if context.batch() != target.batch() {
        return Err(Error::dim("context and target batch sizes differ".to_string()));
    }
    let horizon = ts.time();
    let win = (context.time() + horizon).min(CLIP_LEN);
    if win < MIN_CLIP_LEN {
        return Err(Error::config(format!(
            "context plus horizon gives {win} frames; the video probe needs \
             {MIN_CLIP_LEN}"
        )));
    }

    let psnr_sel = best_of_s(&frame_scores(ts, target, FrameMetric::Psnr, None)?)?;
    let ssim_sel = best_of_s(&frame_scores(ts, target, FrameMetric::Ssim, None)?)?;
    let cos_sel = best_of_s(&frame_scores(ts, target, FrameMetric::Cosine, Some(probes))?)?;

    let real_feats = probes.video_features(&assemble_clips(context, target, win)?)?;
    let mut gen_rows = Vec::with_capacity(ts.s() * ts.videos());
    for s in 0..ts.s() {
        let clips = assemble_clips(context, &ts.sample(s)?, win)?;
        gen_rows.extend(feature_rows(&probes.video_features(&clips)?));
    }
    let fvd_value = fvd(
        &FeatureSet::from_f32(&feature_rows(&real_feats))?,
        &FeatureSet::from_f32(&gen_rows)?,
    )?;

    let per_video = (0..ts.videos())
        .map(|b| VideoRecord {
            video: b,
            chosen_psnr: psnr_sel.chosen[b],
            chosen_ssim: ssim_sel.chosen[b],
            chosen_cosine: cos_sel.chosen[b],
            psnr: psnr_sel.video_means[b],
            ssim: ssim_sel.video_means[b],
            cosine: cos_sel.video_means[b],
        })
        .collect();

    Ok(MetricReport {
        meta: ReportMeta {
            s: ts.s(),
            videos: ts.videos(),
            context: context.time(),
            horizon,
            seed,
            model,
            probe_dataset: probes.meta().dataset.clone(),
            probe_frame_accuracy: probes.meta().frame_accuracy,
            probe_video_accuracy: probes.meta().video_accuracy,
        },
        curves: MetricCurves {
            psnr: psnr_sel.curve,
            ssim: ssim_sel.curve,
            cosine: cos_sel.curve,
        },
        fvd: fvd_value,
        per_video,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_spec, generate, DataKind, Split};
    use crate::rng::SeededRng;

    fn noisy_copy(t: &Tensor, amp: f32, rng: &mut SeededRng) -> Tensor {
        let data = t
            .data()
            .iter()
            .map(|&v| (v + rng.normal_f32(amp)).clamp(0.0, 1.0))
            .collect();
        Tensor::new(t.shape(), data).unwrap()
    }

    #[test]
    fn psnr_oracles() {
        let a = Tensor::full(&[1, 8, 8], 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);

        // Constant 0.1 error: MSE 0.01 maps to 20 dB.
        let b = Tensor::full(&[1, 8, 8], 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);

        let c = Tensor::full(&[1, 8, 8], 0.2);
        assert!(psnr(&a, &c).unwrap() < psnr(&a, &b).unwrap());

        let d = Tensor::full(&[1, 4, 4], 0.5);
        assert!(matches!(psnr(&a, &d), Err(Error::Dim(_))));
    }

    #[test]
    fn ssim_identity_is_exact() {
        let mut rng = SeededRng::new(1, "ssim");
        let x = Tensor::randn(&[1, 16, 16], 0.2, &mut rng);
        let x = Tensor::new(x.shape(), x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .unwrap();
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        let mut rng = SeededRng::new(2, "ssim");
        let mk = || {
            let t = Tensor::randn(&[1, 16, 16], 0.2, &mut rng.derive_indexed("p", 0));
            Tensor::new(t.shape(), t.data().iter().map(|v| (v + 0.5).clamp(0.0, 1.0)).collect())
                .unwrap()
        };
        let x = mk();
        let y = noisy_copy(&x, 0.1, &mut rng);

        // Direct per-window computation, no integral images.
        let (h, w, k) = (16usize, 16usize, SSIM_WINDOW);
        let n = (k * k) as f64;
        let (xd, yd) = (x.data(), y.data());
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..=(h - k) {
            for j in 0..=(w - k) {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..k {
                    for dj in 0..k {
                        let a = xd[(i + di) * w + j + dj] as f64;
                        let b = yd[(i + di) * w + j + dj] as f64;
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cxy = sxy / n - mx * my;
                acc += ((2.0 * mx * my + 1e-4) * (2.0 * cxy + 9e-4))
                    / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                count += 1;
            }
        }
        let want = acc / count as f64;
        let got = ssim(&x, &y).unwrap();
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        assert!(got < 1.0);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Tensor::full(&[1, 6, 6], 0.5);
        assert!(matches!(ssim(&a, &a), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_basics() {
        let a = vec![1.0f32, 2.0, 3.0];
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        let scaled: Vec<f32> = a.iter().map(|v| v * 3.0).collect();
        assert!((cosine(&a, &scaled) - 1.0).abs() < 1e-9);
        let zero = vec![0.0f32; 3];
        assert_eq!(cosine(&a, &zero), 0.0);
        let ortho = vec![2.0f32, -1.0, 0.0];
        assert!(cosine(&a, &ortho).abs() < 1e-9);
    }

    #[test]
    fn best_of_s_selects_and_breaks_ties() {
        // scores[s][b][t]: video 0 prefers s1; video 1 ties s0/s2 at 0.6.
        let scores = vec![
            vec![vec![0.1, 0.1], vec![0.6, 0.6]],
            vec![vec![0.9, 0.7], vec![0.2, 0.2]],
            vec![vec![0.5, 0.5], vec![0.6, 0.6]],
        ];
        let sel = best_of_s(&scores).unwrap();
        assert_eq!(sel.chosen, vec![1, 0]);
        assert_eq!(sel.per_video[0], vec![0.9, 0.7]);
        assert!((sel.video_means[0] - 0.8).abs() < 1e-12);
        assert!((sel.curve[0] - (0.9 + 0.6) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_select_independently() {
        // Target: a smooth gradient. Sample A adds a constant offset, which
        // costs PSNR but keeps structure. Sample B adds a small checkerboard,
        // which keeps PSNR but destroys local structure.
        let (h, w) = (16usize, 16usize);
        let target: Vec<f32> = (0..h * w).map(|i| (i / w) as f32 / 32.0 + 0.05).collect();
        let a: Vec<f32> = target.iter().map(|v| v + 0.08).collect();
        let b: Vec<f32> = target
            .iter()
            .enumerate()
            .map(|(i, v)| v + if (i / w + i % w) % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let mk = |d: Vec<f32>| Tensor::new(&[1, 1, 1, h, w], d).unwrap();
        let tgt = VideoBatch::new(mk(target)).unwrap();
        let samples = vec![
            VideoBatch::new(mk(a)).unwrap(),
            VideoBatch::new(mk(b)).unwrap(),
        ];
        let ts = TrajectorySet::from_samples(&samples).unwrap();

        let by_psnr = best_of_s(&frame_scores(&ts, &tgt, FrameMetric::Psnr, None).unwrap())
            .unwrap();
        let by_ssim = best_of_s(&frame_scores(&ts, &tgt, FrameMetric::Ssim, None).unwrap())
            .unwrap();
        assert_eq!(by_psnr.chosen, vec![1], "checkerboard wins psnr");
        assert_eq!(by_ssim.chosen, vec![0], "offset wins ssim");
    }

    #[test]
    fn cosine_scores_need_a_probe() {
        let v = Tensor::full(&[1, 1, 1, 8, 8], 0.5);
        let tgt = VideoBatch::new(v.clone()).unwrap();
        let ts = TrajectorySet::from_samples(&[VideoBatch::new(v).unwrap()]).unwrap();
        assert!(matches!(
            frame_scores(&ts, &tgt, FrameMetric::Cosine, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn copy_last_frame_repeats() {
        let spec = {
            let mut s = default_spec(DataKind::BounceDet, 3);
            s.count = 2;
            s.t = 6;
            s
        };
        let (v, _) = generate(&spec, Split::Train).unwrap();
        let base = copy_last_frame(&v, 4).unwrap();
        assert_eq!(base.time(), 4);
        for t in 0..4 {
            assert_eq!(frame_of(&base, 1, t), frame_of(&v, 1, 5));
        }
        assert!(matches!(copy_last_frame(&v, 0), Err(Error::Config(_))));
    }

    #[test]
    fn trajectory_set_contracts() {
        assert!(TrajectorySet::new(Tensor::full(&[2, 2, 2, 1, 8], 0.5)).is_err());
        assert!(TrajectorySet::new(Tensor::full(&[1, 1, 1, 1, 4, 4], 1.5)).is_err());
        let a = VideoBatch::new(Tensor::full(&[1, 2, 1, 8, 8], 0.5)).unwrap();
        let b = VideoBatch::new(Tensor::full(&[1, 3, 1, 8, 8], 0.5)).unwrap();
        assert!(TrajectorySet::from_samples(&[a.clone(), b]).is_err());
        let ts = TrajectorySet::from_samples(&[a.clone()]).unwrap();
        assert!(ts.sample(0).unwrap().frames().bitwise_eq(a.frames()));
    }

    #[test]
    fn evaluation_report_end_to_end() {
        let spec = {
            let mut s = default_spec(DataKind::BounceStoch, 21);
            s.count = 3;
            s.t = 12;
            s
        };
        let (v, _) = generate(&spec, Split::Test).unwrap();
        let context = v.window(0, 2).unwrap();
        let target = v.window(2, 10).unwrap();

        // Sample 0 is the ground truth; sample 1 is the frozen baseline.
        let injected = target.clone();
        let frozen = copy_last_frame(&context, 10).unwrap();
        let ts = TrajectorySet::from_samples(&[injected, frozen]).unwrap();

        let probes = probes::test_support::untrained(1, "bounce-stoch", 21);
        let report = evaluate_trajectories(
            &ts,
            &target,
            &context,
            &probes,
            21,
            serde_json::json!({"kind": "test"}),
        )
        .unwrap();

        assert_eq!(report.curves.psnr.len(), 10);
        assert_eq!(report.curves.ssim.len(), 10);
        assert_eq!(report.curves.cosine.len(), 10);
        // The injected ground truth wins every video and pins the cap while
        // the other sample keeps the distributional score positive.
        for r in &report.per_video {
            assert_eq!(r.chosen_psnr, 0);
        }
        for t in 0..10 {
            assert_eq!(report.curves.psnr[t], PSNR_CAP);
        }
        assert!(report.fvd > 0.0);

        let again = evaluate_trajectories(
            &ts,
            &target,
            &context,
            &probes,
            21,
            serde_json::json!({"kind": "test"}),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );

        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("report.json");
        let cpath = dir.path().join("curves.csv");
        report.write_json(&jpath).unwrap();
        report.write_curves_csv(&cpath).unwrap();
        let csv = std::fs::read_to_string(&cpath).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,psnr,ssim,cosine");
        assert_eq!(lines.count(), 10);
        let parsed: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(&jpath).unwrap()).unwrap();
        assert_eq!(parsed.meta.s, 2);
        assert_eq!(parsed.meta.horizon, 10);
    }
}
