//! sample: qualitative strips for a handful of test videos. Each strip has
//! three rows: ground truth, the sample closest to it in probe feature
//! space, and the sample farthest from it.

use std::path::Path;

use serde::Serialize;

use minivp_core::data::VideoBatch;
use minivp_core::error::{Error, Result};
use minivp_core::metrics::{frame_scores, FrameMetric};
use minivp_core::tensor::Tensor;

use crate::bundle::{load_bundle, load_model, load_probes};
use crate::config::{protocol, write_manifest, SampleCommandConfig, FAST_SAMPLES};
use crate::strip::{strip_extension, write_strip};
use crate::study::{effective_s, eval_windows, sample_trajectories};

#[derive(Serialize)]
struct Selection {
    video: usize,
    best: usize,
    worst: usize,
    cosine_means: Vec<f64>,
}

fn video_frames(v: &VideoBatch, b: usize) -> Result<Vec<Tensor>> {
    let (c, h, w) = (v.channels(), v.height(), v.width());
    (0..v.time())
        .map(|t| {
            let f = v.frames_at(t)?;
            let stride = c * h * w;
            Tensor::new(&[c, h, w], f.data()[b * stride..(b + 1) * stride].to_vec())
        })
        .collect()
}

pub fn cmd_sample(
    cfg: &SampleCommandConfig,
    out: &Path,
    seed: Option<u64>,
    fast: bool,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if fast {
        cfg.samples = cfg.samples.min(FAST_SAMPLES);
    }
    let bundle = load_bundle(&cfg.dataset)?;
    let (store, sidecar) = load_model(&cfg.model)?;
    let probes = load_probes(&cfg.probes, &bundle.spec)?;
    let model = &sidecar.model;
    let horizon = cfg
        .horizon
        .unwrap_or(protocol(bundle.spec.kind).eval_horizon);
    let videos = cfg.videos.min(bundle.test.batch());
    if videos == 0 {
        return Err(Error::config("no videos requested".to_string()));
    }
    let s = effective_s(model, cfg.samples);
    let w = eval_windows(&bundle, model.context_len, horizon, Some(videos))?;
    let ts = sample_trajectories(
        &store,
        model,
        &w.context,
        w.actions.as_ref(),
        horizon,
        s,
        cfg.seed,
    )?;

    // Highest mean cosine picks the showcased sample; lowest shows spread.
    let scores = frame_scores(&ts, &w.target, FrameMetric::Cosine, Some(&probes))?;
    std::fs::create_dir_all(out)?;
    let ext = strip_extension(w.context.channels());
    let mut selections = Vec::with_capacity(videos);
    for b in 0..videos {
        let means: Vec<f64> = (0..s)
            .map(|si| scores[si][b].iter().sum::<f64>() / horizon as f64)
            .collect();
        let best = means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let worst = means
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .unwrap();

        let ctx = video_frames(&w.context, b)?;
        let mut truth = ctx.clone();
        truth.extend(video_frames(&w.target, b)?);
        let mut best_row = ctx.clone();
        best_row.extend(video_frames(&ts.sample(best)?, b)?);
        let mut worst_row = ctx.clone();
        worst_row.extend(video_frames(&ts.sample(worst)?, b)?);

        write_strip(
            &out.join(format!("strip-{b}.{ext}")),
            &[truth, best_row, worst_row],
            model.context_len,
        )?;
        selections.push(Selection {
            video: b,
            best,
            worst,
            cosine_means: means,
        });
    }
    std::fs::write(
        out.join("selection.json"),
        serde_json::to_string_pretty(&selections)?,
    )?;
    write_manifest(out, "sample", cfg.seed, fast, &cfg)?;
    Ok(())
}
