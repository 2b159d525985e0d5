//! eval: sample trajectories from a checkpoint and score them against the
//! held-out split, always alongside the copy-last-frame baseline.

use std::path::Path;
use std::time::Instant;

use minivp_core::error::{Error, Result};
use minivp_core::metrics::{copy_last_frame, evaluate_trajectories, TrajectorySet};

use crate::bundle::{load_bundle, load_model, load_probes};
use crate::config::{
    protocol, write_manifest, write_rows_csv, EvalCommandConfig, FAST_MAX_EVAL_VIDEOS,
    FAST_SAMPLES,
};
use crate::study::{effective_s, eval_windows, row_from_report, sample_trajectories};

pub fn cmd_eval(
    cfg: &EvalCommandConfig,
    out: &Path,
    seed: Option<u64>,
    fast: bool,
) -> Result<()> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if fast {
        cfg.samples = cfg.samples.min(FAST_SAMPLES);
        cfg.eval_videos = Some(
            cfg.eval_videos
                .unwrap_or(FAST_MAX_EVAL_VIDEOS)
                .min(FAST_MAX_EVAL_VIDEOS),
        );
    }
    let bundle = load_bundle(&cfg.dataset)?;
    let (store, sidecar) = load_model(&cfg.model)?;
    let probes = load_probes(&cfg.probes, &bundle.spec)?;
    let model = &sidecar.model;
    if model.frame_size != bundle.spec.size {
        return Err(Error::config(format!(
            "model expects {}px frames, dataset is {}px",
            model.frame_size, bundle.spec.size
        )));
    }
    if model.action_dim != bundle.spec.kind.action_dim() {
        return Err(Error::config(
            "model and dataset disagree on action conditioning".to_string(),
        ));
    }

    let horizon = cfg
        .horizon
        .unwrap_or(protocol(bundle.spec.kind).eval_horizon);
    let s = effective_s(model, cfg.samples);
    let w = eval_windows(&bundle, model.context_len, horizon, cfg.eval_videos)?;
    let ts = sample_trajectories(
        &store,
        model,
        &w.context,
        w.actions.as_ref(),
        horizon,
        s,
        cfg.seed,
    )?;

    std::fs::create_dir_all(out)?;
    let model_json = serde_json::to_value(model)?;
    let report = evaluate_trajectories(&ts, &w.target, &w.context, &probes, cfg.seed, model_json)?;
    report.write_json(&out.join("report.json"))?;
    report.write_curves_csv(&out.join("curves.csv"))?;

    let frozen = copy_last_frame(&w.context, horizon)?;
    let baseline_ts = TrajectorySet::from_samples(&[frozen])?;
    let baseline = evaluate_trajectories(
        &baseline_ts,
        &w.target,
        &w.context,
        &probes,
        cfg.seed,
        serde_json::json!({ "kind": "copy-last" }),
    )?;
    baseline.write_json(&out.join("baseline.json"))?;

    let wall = started.elapsed().as_secs_f64();
    let rows = vec![
        row_from_report(
            &report,
            model.kind.as_str(),
            model.k,
            model.m,
            model.skip,
            model.context_len,
            store.param_count(""),
            cfg.seed,
            wall,
        ),
        row_from_report(
            &baseline,
            "copy-last",
            0,
            0,
            false,
            model.context_len,
            0,
            cfg.seed,
            0.0,
        ),
    ];
    write_rows_csv(&out.join("summary.csv"), &rows)?;
    write_manifest(out, "eval", cfg.seed, fast, &cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::gen_data::cmd_gen_data;
    use crate::commands::train::cmd_train;
    use crate::commands::train_probes::cmd_train_probes;
    use crate::config::{GenDataConfig, ProbesCommandConfig, TrainCommandConfig};
    use minivp_core::data::{default_spec, DataKind};
    use minivp_core::metrics::{MetricReport, ProbeTrainConfig};
    use minivp_core::models::{ModelConfig, ModelKind};
    use minivp_core::objective::TrainConfig;

    struct Fixture {
        _data: tempfile::TempDir,
        _probes: tempfile::TempDir,
        _run: tempfile::TempDir,
        cfg: EvalCommandConfig,
    }

    fn fixture(kind: ModelKind, z_dim: usize) -> Fixture {
        let data = tempfile::tempdir().unwrap();
        let probes = tempfile::tempdir().unwrap();
        let run = tempfile::tempdir().unwrap();

        let mut gen = GenDataConfig {
            spec: default_spec(DataKind::BounceStoch, 17),
            test_count: 4,
        };
        gen.spec.count = 6;
        gen.spec.t = 16;
        cmd_gen_data(&gen, data.path(), None, false).unwrap();

        let pcfg = ProbesCommandConfig {
            dataset: data.path().to_path_buf(),
            train: ProbeTrainConfig {
                frame_steps: 2,
                video_steps: 1,
                batch: 4,
                min_accuracy: 0.0,
                holdout_frames: 8,
                holdout_clips: 2,
                ..ProbeTrainConfig::default()
            },
            seed: 2,
        };
        cmd_train_probes(&pcfg, probes.path(), None, false).unwrap();

        let tcfg = TrainCommandConfig {
            dataset: data.path().to_path_buf(),
            model: ModelConfig {
                kind,
                z_dim,
                context_len: 2,
                predict_len: 3,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch: 2,
                steps: 2,
                eval_every: 10,
                seed: 4,
                ..TrainConfig::default()
            },
        };
        cmd_train(&tcfg, run.path(), None, false).unwrap();

        let cfg = EvalCommandConfig {
            dataset: data.path().to_path_buf(),
            model: run.path().join("model.mvpt"),
            probes: probes.path().join("probes.mvpt"),
            samples: 3,
            horizon: Some(8),
            eval_videos: Some(3),
            seed: 6,
        };
        Fixture {
            _data: data,
            _probes: probes,
            _run: run,
            cfg,
        }
    }

    #[test]
    fn eval_writes_report_baseline_and_summary() {
        let f = fixture(ModelKind::Svg, 4);
        let out = tempfile::tempdir().unwrap();
        cmd_eval(&f.cfg, out.path(), None, false).unwrap();

        let report: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report.meta.s, 3);
        assert_eq!(report.meta.horizon, 8);
        assert_eq!(report.meta.videos, 3);
        assert_eq!(report.curves.psnr.len(), 8);
        assert!(report.fvd >= 0.0);

        let baseline: MetricReport = serde_json::from_str(
            &std::fs::read_to_string(out.path().join("baseline.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(baseline.meta.s, 1);

        let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("svg,"));
        assert!(lines[2].starts_with("copy-last,"));
        assert!(out.path().join("curves.csv").exists());
        assert!(out.path().join("manifest.json").exists());
    }

    #[test]
    fn deterministic_kinds_collapse_to_one_sample() {
        let f = fixture(ModelKind::Lstm, 0);
        let out = tempfile::tempdir().unwrap();
        cmd_eval(&f.cfg, out.path(), None, false).unwrap();
        let report: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report.meta.s, 1);
    }

    #[test]
    fn probe_mismatch_is_config_error() {
        let f = fixture(ModelKind::Lstm, 0);
        // Regenerate the dataset with a different seed in place.
        let mut gen = GenDataConfig {
            spec: default_spec(DataKind::BounceStoch, 18),
            test_count: 4,
        };
        gen.spec.count = 6;
        gen.spec.t = 16;
        cmd_gen_data(&gen, &f.cfg.dataset, None, false).unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            cmd_eval(&f.cfg, out.path(), None, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fast_flag_caps_samples() {
        let mut f = fixture(ModelKind::Svg, 4);
        f.cfg.samples = 50;
        let out = tempfile::tempdir().unwrap();
        cmd_eval(&f.cfg, out.path(), None, true).unwrap();
        let report: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report.meta.s, FAST_SAMPLES);
    }
}
