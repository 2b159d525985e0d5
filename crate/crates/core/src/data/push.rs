//! Action-conditioned pushing videos. A bright arm square follows commanded
//! per-step deltas corrupted by slip noise; a dim passive object moves only
//! when the arm contacts it, scaled by a per-contact friction draw. Recorded
//! actions are the commanded (pre-noise) deltas, so a_t is the command that
//! produces frame t from frame t-1.

use rayon::prelude::*;

use super::render::draw_square;
use super::{ActionSequence, DatasetSpec, VideoBatch};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Commanded deltas are uniform in [-ACTION_MAX, ACTION_MAX] per axis.
pub const ACTION_MAX: f64 = 2.0;
/// Contact transfers this fraction range of the arm's motion to the object.
pub const FRICTION_LO: f64 = 0.3;
pub const FRICTION_HI: f64 = 1.0;
/// The object renders at this intensity; the arm at 1.0.
pub const OBJECT_INTENSITY: f32 = 0.5;

pub struct PushOutcome {
    /// T*H*W frames, arm over object by max-composition.
    pub frames: Vec<f32>,
    pub arm_path: Vec<(f64, f64)>,
    pub object_path: Vec<(f64, f64)>,
}

fn clamp_center(p: f64, lo: f64, hi: f64) -> f64 {
    p.clamp(lo, hi)
}

/// Runs the push simulation from fixed initial centers and commanded deltas;
/// `noise` supplies slip and friction draws only. Pure in its arguments.
pub fn simulate_push(
    spec: &DatasetSpec,
    arm0: (f64, f64),
    obj0: (f64, f64),
    commanded: &[(f64, f64)],
    noise: &mut SeededRng,
) -> PushOutcome {
    let (h, w) = (spec.size, spec.size);
    let r = spec.radius;
    let (lo, hi) = (r, spec.size as f64 - r);
    let contact_dist = 2.0 * r;
    let (mut ax, mut ay) = arm0;
    let (mut ox, mut oy) = obj0;
    let mut frames = vec![0.0f32; spec.t * h * w];
    let mut arm_path = Vec::with_capacity(spec.t);
    let mut object_path = Vec::with_capacity(spec.t);

    for t in 0..spec.t {
        if t > 0 {
            let (cx, cy) = commanded[t];
            // Slip draws are consumed even at sigma 0 for stream stability.
            let dx = cx + noise.normal() * spec.slip_sigma;
            let dy = cy + noise.normal() * spec.slip_sigma;
            let (nax, nay) = (
                clamp_center(ax + dx, lo, hi),
                clamp_center(ay + dy, lo, hi),
            );
            let (moved_x, moved_y) = (nax - ax, nay - ay);
            ax = nax;
            ay = nay;
            if (ax - ox).abs() < contact_dist && (ay - oy).abs() < contact_dist {
                let friction = noise.uniform(FRICTION_LO, FRICTION_HI);
                ox = clamp_center(ox + moved_x * friction, lo, hi);
                oy = clamp_center(oy + moved_y * friction, lo, hi);
                // Separate along the axis of least remaining penetration.
                let (px, py) = (contact_dist - (ax - ox).abs(), contact_dist - (ay - oy).abs());
                if px > 0.0 && py > 0.0 {
                    if px <= py {
                        ox = clamp_center(ox + px.copysign(ox - ax), lo, hi);
                    } else {
                        oy = clamp_center(oy + py.copysign(oy - ay), lo, hi);
                    }
                }
            }
        }
        arm_path.push((ax, ay));
        object_path.push((ox, oy));
        let frame = &mut frames[t * h * w..(t + 1) * h * w];
        draw_square(frame, h, w, ox, oy, r, OBJECT_INTENSITY);
        draw_square(frame, h, w, ax, ay, r, 1.0);
    }
    PushOutcome {
        frames,
        arm_path,
        object_path,
    }
}

/// Draws per-video initial state and commanded actions, then simulates.
/// Returns the video and its commanded actions.
fn gen_one(spec: &DatasetSpec, rng: &mut SeededRng) -> (PushOutcome, Vec<(f64, f64)>) {
    let r = spec.radius;
    let (lo, hi) = (r, spec.size as f64 - r);
    let arm0 = (rng.uniform(lo, hi), rng.uniform(lo, hi));
    let mut obj0 = (rng.uniform(lo, hi), rng.uniform(lo, hi));
    // Rejection keeps the pair separated at start; bounded so pathological
    // radii cannot loop forever.
    for _ in 0..64 {
        if (arm0.0 - obj0.0).abs() >= 2.0 * r || (arm0.1 - obj0.1).abs() >= 2.0 * r {
            break;
        }
        obj0 = (rng.uniform(lo, hi), rng.uniform(lo, hi));
    }
    let mut commanded = Vec::with_capacity(spec.t);
    commanded.push((0.0, 0.0));
    for _ in 1..spec.t {
        commanded.push((
            rng.uniform(-ACTION_MAX, ACTION_MAX),
            rng.uniform(-ACTION_MAX, ACTION_MAX),
        ));
    }
    let outcome = simulate_push(spec, arm0, obj0, &commanded, rng);
    (outcome, commanded)
}

/// Generates `spec.count` push videos with per-video substreams starting at
/// `base_index`.
pub fn gen_push_action(
    spec: &DatasetSpec,
    root: &SeededRng,
    base_index: u64,
) -> Result<(VideoBatch, ActionSequence)> {
    let (h, w) = (spec.size, spec.size);
    let per_f = spec.t * h * w;
    let per_a = spec.t * 2;
    let mut frames = vec![0.0f32; spec.count * per_f];
    let mut actions = vec![0.0f32; spec.count * per_a];
    frames
        .par_chunks_mut(per_f)
        .zip(actions.par_chunks_mut(per_a))
        .enumerate()
        .for_each(|(i, (fc, ac))| {
            let mut rng = root.derive_indexed("video", base_index + i as u64);
            let (outcome, commanded) = gen_one(spec, &mut rng);
            fc.copy_from_slice(&outcome.frames);
            for (t, &(x, y)) in commanded.iter().enumerate() {
                ac[t * 2] = x as f32;
                ac[t * 2 + 1] = y as f32;
            }
        });
    let videos = VideoBatch::new(Tensor::new(&[spec.count, spec.t, 1, h, w], frames)?)?;
    let acts = ActionSequence::new(Tensor::new(&[spec.count, spec.t, 2], actions)?)?;
    Ok((videos, acts))
}
