//! Qualitative strips: rows of frames packed into one raw PGM (grayscale)
//! or PPM (three-channel) image, with a bright double column separating the
//! context frames from the predictions.

use std::path::Path;

use minivp_core::error::{Error, Result};
use minivp_core::tensor::Tensor;

const GAP: usize = 1;
const DELIM: usize = 2;
const GAP_LEVEL: u8 = 96;
const DELIM_LEVEL: u8 = 255;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes rows of [C, H, W] frames; all frames must share one shape with
/// one or three channels. `context_len` frames lead each row before the
/// delimiter.
pub fn write_strip(
    path: &Path,
    rows: &[Vec<Tensor>],
    context_len: usize,
) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::contract("strip needs at least one frame".to_string()));
    }
    let shape = rows[0][0].shape().to_vec();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(Error::config(format!(
            "strip frames must be [1|3, H, W], got {shape:?}"
        )));
    }
    let n = rows[0].len();
    if context_len >= n {
        return Err(Error::config(format!(
            "context {context_len} leaves no prediction out of {n} frames"
        )));
    }
    for row in rows {
        if row.len() != n || row.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::contract("strip rows disagree on layout".to_string()));
        }
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let width = n * w + (n - 1) * GAP + DELIM;
    let height = rows.len() * h + (rows.len() - 1) * GAP;
    let mut canvas = vec![GAP_LEVEL; width * height * c];

    for (ri, row) in rows.iter().enumerate() {
        let y0 = ri * (h + GAP);
        for (fi, frame) in row.iter().enumerate() {
            let mut x0 = fi * (w + GAP);
            if fi >= context_len {
                x0 += DELIM;
            }
            let data = frame.data();
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        canvas[((y0 + y) * width + x0 + x) * c + ch] =
                            to_byte(data[(ch * h + y) * w + x]);
                    }
                }
            }
        }
        // Delimiter after the last context frame, full strip height.
        let dx = context_len * (w + GAP) - GAP;
        for y in 0..height {
            for d in 0..DELIM {
                for ch in 0..c {
                    canvas[(y * width + dx + d) * c + ch] = DELIM_LEVEL;
                }
            }
        }
    }

    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    std::fs::write(path, out)?;
    Ok(())
}

/// Extension matching the channel count.
pub fn strip_extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}
