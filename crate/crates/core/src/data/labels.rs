//! Probe label derivations. Labels are pure functions of pixels so probe
//! targets never depend on generator internals: a frame's class is the
//! quadrant of its intensity centroid, a video's class is the quadrant of
//! its net centroid displacement.

use super::render::centroid;
use super::VideoBatch;

pub const NUM_CLASSES: usize = 4;

/// Quadrant of the intensity centroid: bit 1 = lower half, bit 0 = right
/// half. Fully dark frames map to class 0.
pub fn frame_label(frame: &[f32], h: usize, w: usize) -> u8 {
    match centroid(frame, h, w) {
        Some((cx, cy)) => {
            let right = (cx >= w as f64 / 2.0) as u8;
            let lower = (cy >= h as f64 / 2.0) as u8;
            lower * 2 + right
        }
        None => 0,
    }
}

/// Net centroid displacement (dx, dy) from first to last frame, or None
/// when either frame has no visible mass.
pub fn displacement(frames: &[f32], t: usize, h: usize, w: usize) -> Option<(f64, f64)> {
    debug_assert_eq!(frames.len(), t * h * w);
    let hw = h * w;
    let first = centroid(&frames[..hw], h, w)?;
    let last = centroid(&frames[(t - 1) * hw..], h, w)?;
    Some((last.0 - first.0, last.1 - first.1))
}

/// Quadrant of (centroid(last) - centroid(first)): bit 1 = downward, bit 0 =
/// rightward. Videos without visible mass map to class 0.
pub fn video_label(frames: &[f32], t: usize, h: usize, w: usize) -> u8 {
    match displacement(frames, t, h, w) {
        Some((dx, dy)) => {
            let right = (dx >= 0.0) as u8;
            let down = (dy >= 0.0) as u8;
            down * 2 + right
        }
        None => 0,
    }
}

/// Per-frame labels, row-major over (video, step): length B*T.
pub fn frame_labels(v: &VideoBatch) -> Vec<u8> {
    let (h, w) = (v.height(), v.width());
    let hw = v.channels() * h * w;
    v.frames()
        .data()
        .chunks(hw)
        .map(|f| frame_label(f, h, w))
        .collect()
}

/// Per-video labels: length B.
pub fn video_labels(v: &VideoBatch) -> Vec<u8> {
    let (t, h, w) = (v.time(), v.height(), v.width());
    let thw = t * v.channels() * h * w;
    v.frames()
        .data()
        .chunks(thw)
        .map(|f| video_label(f, t, h, w))
        .collect()
}
