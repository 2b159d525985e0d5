//! Anti-aliased rasterizer for axis-aligned squares.
//!
//! Pixel intensity is the exact area overlap between the pixel cell
//! [x,x+1)x[y,y+1) and the square, so total pixel mass equals the square's
//! area whenever the shape lies fully inside the frame.

/// 1-D overlap of [a0,a1) with [b0,b1).
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Adds a square of half-side `r` centered at (cx, cy) with the given peak
/// intensity into `frame` (row-major HxW). Overlapping shapes compose by max
/// so values stay in [0,1].
pub fn draw_square(frame: &mut [f32], h: usize, w: usize, cx: f64, cy: f64, r: f64, intensity: f32) {
    debug_assert_eq!(frame.len(), h * w);
    let (x0, x1) = (cx - r, cx + r);
    let (y0, y1) = (cy - r, cy + r);
    let px0 = x0.floor().max(0.0) as usize;
    let px1 = (x1.ceil() as isize).clamp(0, w as isize) as usize;
    let py0 = y0.floor().max(0.0) as usize;
    let py1 = (y1.ceil() as isize).clamp(0, h as isize) as usize;
    for py in py0..py1 {
        let oy = overlap(py as f64, py as f64 + 1.0, y0, y1);
        if oy <= 0.0 {
            continue;
        }
        for px in px0..px1 {
            let ox = overlap(px as f64, px as f64 + 1.0, x0, x1);
            if ox <= 0.0 {
                continue;
            }
            let v = (ox * oy) as f32 * intensity;
            let cell = &mut frame[py * w + px];
            *cell = cell.max(v);
        }
    }
}

/// Intensity-weighted centroid (x, y) of a frame; None when the frame is
/// entirely dark.
pub fn centroid(frame: &[f32], h: usize, w: usize) -> Option<(f64, f64)> {
    let mut mass = 0.0f64;
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for py in 0..h {
        for px in 0..w {
            let v = frame[py * w + px] as f64;
            mass += v;
            sx += v * (px as f64 + 0.5);
            sy += v * (py as f64 + 0.5);
        }
    }
    if mass <= 1e-12 {
        None
    } else {
        Some((sx / mass, sy / mass))
    }
}

/// Reflects `p` into [lo, hi], flipping `v`'s sign once per bounce.
pub fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    debug_assert!(hi > lo);
    loop {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        } else {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_equals_area_when_inside() {
        let (h, w) = (16, 16);
        for &(cx, cy, r) in &[(8.0, 8.0, 3.0), (4.3, 9.7, 2.5), (3.0, 3.0, 3.0)] {
            let mut f = vec![0.0f32; h * w];
            draw_square(&mut f, h, w, cx, cy, r, 1.0);
            let mass: f64 = f.iter().map(|&v| v as f64).sum();
            let area = (2.0 * r) * (2.0 * r);
            assert!(
                (mass - area).abs() < 1e-4,
                "mass {mass} vs area {area} at ({cx},{cy})"
            );
        }
    }

    #[test]
    fn fractional_center_splits_edge_pixels() {
        let mut f = vec![0.0f32; 8 * 8];
        draw_square(&mut f, 8, 8, 4.5, 4.0, 1.0, 1.0);
        // Columns 3..6 get x-overlaps 0.5, 1.0, 0.5.
        assert!((f[4 * 8 + 3] - 0.5).abs() < 1e-6);
        assert!((f[4 * 8 + 4] - 1.0).abs() < 1e-6);
        assert!((f[4 * 8 + 5] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn centroid_matches_center() {
        let (h, w) = (16, 16);
        let mut f = vec![0.0f32; h * w];
        draw_square(&mut f, h, w, 5.25, 10.5, 2.0, 1.0);
        let (cx, cy) = centroid(&f, h, w).unwrap();
        assert!((cx - 5.25).abs() < 1e-4);
        assert!((cy - 10.5).abs() < 1e-4);
        assert!(centroid(&vec![0.0; h * w], h, w).is_none());
    }

    #[test]
    fn reflect_preserves_interval_and_flips() {
        let (mut p, mut v) = (1.0f64, -2.0f64);
        reflect(&mut p, &mut v, 3.0, 13.0);
        assert_eq!(p, 5.0);
        assert_eq!(v, 2.0);
        // Double bounce: far overshoot folds back twice.
        let (mut p, mut v) = (24.0f64, 2.0f64);
        reflect(&mut p, &mut v, 3.0, 13.0);
        assert_eq!(p, 2.0 * 3.0 - (2.0 * 13.0 - 24.0));
        assert_eq!(v, 2.0);
    }
}
