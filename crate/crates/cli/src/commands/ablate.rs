//! ablate: paired tables isolating one design factor. Skip mode trains the
//! same point with skip connections off and on; context mode walks the
//! protocol's context grid at a shortened shared horizon.

use std::path::Path;

use minivp_core::error::{Error, Result};

use crate::bundle::{load_bundle, load_probes};
use crate::config::{
    derive_point_seed, protocol, write_manifest, write_rows_csv, AblateConfig, AblateMode,
    FAST_MAX_EVAL_VIDEOS, FAST_MAX_STEPS, FAST_SAMPLES, MAX_M,
};
use crate::study::{failure_row, run_point, PointSpec};

pub fn cmd_ablate(cfg: &AblateConfig, out: &Path, seed: Option<u64>, fast: bool) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if fast {
        cfg.train.steps = cfg.train.steps.min(FAST_MAX_STEPS);
        cfg.samples = cfg.samples.min(FAST_SAMPLES);
        cfg.eval_videos = Some(
            cfg.eval_videos
                .unwrap_or(FAST_MAX_EVAL_VIDEOS)
                .min(FAST_MAX_EVAL_VIDEOS),
        );
    }
    let (k, m) = cfg.capacity;
    if k == 0 || m == 0 || m > MAX_M {
        return Err(Error::config(format!(
            "capacity point ({k},{m}) outside K >= 1, 1 <= M <= {MAX_M}"
        )));
    }
    let bundle = load_bundle(&cfg.dataset)?;
    let probes = load_probes(&cfg.probes, &bundle.spec)?;
    let proto = protocol(bundle.spec.kind);

    let mut points = Vec::new();
    for &kind in &cfg.kinds {
        let mut base = PointSpec::for_bundle(&bundle, kind, k, m);
        base.z_dim = cfg.z_dim;
        base.samples = cfg.samples;
        match cfg.mode {
            AblateMode::Skip => {
                for skip in [false, true] {
                    let mut p = base.clone();
                    p.skip = skip;
                    points.push(p);
                }
            }
            AblateMode::Context => {
                for &context in &proto.ablate_contexts {
                    let mut p = base.clone();
                    p.context = context;
                    p.horizon = proto.ablate_horizon;
                    points.push(p);
                }
            }
        }
    }

    std::fs::create_dir_all(out)?;
    let table = match cfg.mode {
        AblateMode::Skip => "table-skip.csv",
        AblateMode::Context => "table-context.csv",
    };
    let mut rows = Vec::with_capacity(points.len());
    for point in &points {
        let point_seed = derive_point_seed(
            cfg.seed,
            point.kind.as_str(),
            point.k,
            point.m,
            point.skip,
            point.context,
            0,
        );
        let row = match run_point(
            &bundle,
            &probes,
            point,
            &cfg.train,
            cfg.eval_videos,
            point_seed,
        ) {
            Ok((row, _)) => row,
            Err(e) => failure_row(point, point_seed, &e),
        };
        rows.push(row);
        write_rows_csv(&out.join(table), &rows)?;
    }
    write_manifest(out, "ablate", cfg.seed, fast, &cfg)?;
    Ok(())
}
