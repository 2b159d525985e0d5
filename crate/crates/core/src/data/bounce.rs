//! Bouncing-square videos. A single anti-aliased square moves at constant
//! speed and reflects elastically off the frame walls. In the stochastic
//! variant each step redraws the heading with probability `stoch_p`,
//! preserving speed. The deterministic variant is the same simulation with
//! `stoch_p` forced to zero; the Bernoulli draw is consumed either way, so
//! the two agree bitwise when `stoch_p = 0`.

use std::f64::consts::TAU;

use rayon::prelude::*;

use super::render::{draw_square, reflect};
use super::{DataKind, DatasetSpec, VideoBatch};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Constant speed of the square in pixels per step.
pub const BOUNCE_SPEED: f64 = 2.0;

/// Simulates one video; returns its frames (T*H*W) and how many steps
/// resampled the heading.
pub fn simulate_bounce(spec: &DatasetSpec, rng: &mut SeededRng) -> (Vec<f32>, u32) {
    let (h, w) = (spec.size, spec.size);
    let r = spec.radius;
    let (lo, hi) = (r, spec.size as f64 - r);
    let mut cx = rng.uniform(lo, hi);
    let mut cy = rng.uniform(lo, hi);
    let theta = rng.uniform(0.0, TAU);
    let (mut vx, mut vy) = (BOUNCE_SPEED * theta.cos(), BOUNCE_SPEED * theta.sin());

    let p = if spec.kind == DataKind::BounceDet { 0.0 } else { spec.stoch_p };
    let mut frames = vec![0.0f32; spec.t * h * w];
    draw_square(&mut frames[..h * w], h, w, cx, cy, r, 1.0);
    let mut resamples = 0u32;
    for t in 1..spec.t {
        // Consumed every step so p=0 matches the deterministic stream.
        if rng.bernoulli(p) {
            let speed = (vx * vx + vy * vy).sqrt();
            let theta = rng.uniform(0.0, TAU);
            vx = speed * theta.cos();
            vy = speed * theta.sin();
            resamples += 1;
        }
        cx += vx;
        cy += vy;
        reflect(&mut cx, &mut vx, lo, hi);
        reflect(&mut cy, &mut vy, lo, hi);
        draw_square(&mut frames[t * h * w..(t + 1) * h * w], h, w, cx, cy, r, 1.0);
    }
    (frames, resamples)
}

/// Generates `spec.count` bounce videos with per-video substreams starting
/// at `base_index`.
pub fn gen_bounce(spec: &DatasetSpec, root: &SeededRng, base_index: u64) -> Result<VideoBatch> {
    let (h, w) = (spec.size, spec.size);
    let per = spec.t * h * w;
    let mut frames = vec![0.0f32; spec.count * per];
    frames
        .par_chunks_mut(per)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut rng = root.derive_indexed("video", base_index + i as u64);
            let (video, _) = simulate_bounce(spec, &mut rng);
            chunk.copy_from_slice(&video);
        });
    VideoBatch::new(Tensor::new(&[spec.count, spec.t, 1, h, w], frames)?)
}
