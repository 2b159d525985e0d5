//! sweep: the capacity grid. Every (kind, K, M, skip, context) point trains
//! `replicates` fresh models on derived seeds; medians go to sweep.csv, raw
//! rows to replicates.csv, and a baseline-vs-biggest pivot to summary.csv.

use std::path::Path;

use minivp_core::error::{Error, Result};

use crate::bundle::{load_bundle, load_probes};
use crate::config::{
    derive_point_seed, protocol, write_manifest, write_rows_csv, ReportRow, SweepConfig,
    BIGGEST, BIGGEST_WIDE, DEFAULT_GRID, FAST_MAX_EVAL_VIDEOS, FAST_MAX_STEPS, FAST_SAMPLES,
    MAX_M,
};
use crate::study::{failure_row, run_point, PointSpec};

fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_row(point: &PointSpec, reps: &[ReportRow], master_seed: u64) -> ReportRow {
    let ok: Vec<&ReportRow> = reps.iter().filter(|r| r.status == "ok").collect();
    let failed = reps.len() - ok.len();
    let pick = |f: fn(&ReportRow) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<f64>>());
    ReportRow {
        kind: point.kind.as_str().to_string(),
        k: point.k,
        m: point.m,
        skip: point.skip,
        context: point.context,
        params: ok.first().map_or(0, |r| r.params),
        fvd: pick(|r| r.fvd),
        psnr: pick(|r| r.psnr),
        ssim: pick(|r| r.ssim),
        cosine: pick(|r| r.cosine),
        seed: master_seed,
        wall_s: reps.iter().map(|r| r.wall_s).sum(),
        status: if failed == 0 {
            "ok".to_string()
        } else {
            format!("error: {failed}/{} replicates failed", reps.len())
        },
    }
}

/// Baseline (1,1) against the biggest grid point, one line per kind. Rows
/// with skip enabled are preferred when both variants were swept.
pub fn biggest_vs_baseline(rows: &[ReportRow], big: (usize, usize)) -> String {
    let mut out = String::from(
        "kind,k_base,m_base,k_big,m_big,fvd_base,fvd_big,psnr_base,psnr_big,\
         ssim_base,ssim_big,cosine_base,cosine_big\n",
    );
    let mut kinds: Vec<&str> = Vec::new();
    for r in rows {
        if !kinds.contains(&r.kind.as_str()) {
            kinds.push(&r.kind);
        }
    }
    let find = |kind: &str, k: usize, m: usize| {
        rows.iter()
            .filter(|r| r.kind == kind && r.k == k && r.m == m)
            .max_by_key(|r| r.skip)
    };
    for kind in kinds {
        let (Some(base), Some(bigr)) = (find(kind, 1, 1), find(kind, big.0, big.1)) else {
            continue;
        };
        out.push_str(&format!(
            "{kind},1,1,{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            big.0, big.1, base.fvd, bigr.fvd, base.psnr, bigr.psnr, base.ssim, bigr.ssim,
            base.cosine, bigr.cosine,
        ));
    }
    out
}

pub fn cmd_sweep(cfg: &SweepConfig, out: &Path, seed: Option<u64>, fast: bool) -> Result<()> {
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
    let mut capacity = cfg.capacity.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let big = if cfg.wide_biggest { BIGGEST_WIDE } else { BIGGEST };
    if cfg.wide_biggest && !capacity.contains(&BIGGEST_WIDE) {
        capacity.push(BIGGEST_WIDE);
    }
    for &(k, m) in &capacity {
        if k == 0 || m == 0 || m > MAX_M {
            return Err(Error::config(format!(
                "capacity point ({k},{m}) outside K >= 1, 1 <= M <= {MAX_M}"
            )));
        }
    }
    if cfg.replicates == 0 {
        return Err(Error::config("replicates must be positive".to_string()));
    }

    let bundle = load_bundle(&cfg.dataset)?;
    let probes = load_probes(&cfg.probes, &bundle.spec)?;
    let proto = protocol(bundle.spec.kind);
    let contexts = cfg.contexts.clone().unwrap_or_else(|| vec![proto.context]);

    let mut points = Vec::new();
    for &kind in &cfg.kinds {
        for &(k, m) in &capacity {
            for skip in cfg.skip.variants() {
                for &context in &contexts {
                    let mut p = PointSpec::for_bundle(&bundle, kind, k, m);
                    p.skip = skip;
                    p.context = context;
                    p.z_dim = cfg.z_dim;
                    p.samples = cfg.samples;
                    if let Some(h) = cfg.horizon {
                        p.horizon = h;
                    }
                    points.push(p);
                }
            }
        }
    }

    std::fs::create_dir_all(out)?;
    let mut medians = Vec::with_capacity(points.len());
    let mut replicate_rows = Vec::with_capacity(points.len() * cfg.replicates);
    for point in &points {
        let mut reps = Vec::with_capacity(cfg.replicates);
        for rep in 0..cfg.replicates {
            let rep_seed = derive_point_seed(
                cfg.seed,
                point.kind.as_str(),
                point.k,
                point.m,
                point.skip,
                point.context,
                rep,
            );
            let row = match run_point(
                &bundle,
                &probes,
                point,
                &cfg.train,
                cfg.eval_videos,
                rep_seed,
            ) {
                Ok((row, _)) => row,
                Err(e) => failure_row(point, rep_seed, &e),
            };
            reps.push(row);
        }
        medians.push(median_row(point, &reps, cfg.seed));
        replicate_rows.extend(reps);
        // Partial progress survives a crash later in the grid.
        write_rows_csv(&out.join("sweep.csv"), &medians)?;
        write_rows_csv(&out.join("replicates.csv"), &replicate_rows)?;
    }
    std::fs::write(out.join("summary.csv"), biggest_vs_baseline(&medians, big))?;
    write_manifest(out, "sweep", cfg.seed, fast, &cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::gen_data::cmd_gen_data;
    use crate::commands::train_probes::cmd_train_probes;
    use crate::config::{GenDataConfig, ProbesCommandConfig, SkipMode, REPORT_ROW_HEADER};
    use minivp_core::data::{default_spec, DataKind};
    use minivp_core::metrics::ProbeTrainConfig;
    use minivp_core::models::ModelKind;
    use minivp_core::objective::TrainConfig;

    fn tiny_fixture(dir: &Path, probes_dir: &Path) {
        let mut gen = GenDataConfig {
            spec: default_spec(DataKind::BounceDet, 31),
            test_count: 3,
        };
        gen.spec.count = 4;
        gen.spec.t = 16;
        cmd_gen_data(&gen, dir, None, false).unwrap();
        cmd_train_probes(
            &ProbesCommandConfig {
                dataset: dir.to_path_buf(),
                train: ProbeTrainConfig {
                    frame_steps: 1,
                    video_steps: 1,
                    batch: 2,
                    min_accuracy: 0.0,
                    holdout_frames: 4,
                    holdout_clips: 2,
                    ..ProbeTrainConfig::default()
                },
                seed: 1,
            },
            probes_dir,
            None,
            false,
        )
        .unwrap();
    }

    #[test]
    fn sweep_writes_medians_replicates_and_summary() {
        let data = tempfile::tempdir().unwrap();
        let probes = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_fixture(data.path(), probes.path());

        let cfg = SweepConfig {
            dataset: data.path().to_path_buf(),
            probes: probes.path().join("probes.mvpt"),
            kinds: vec![ModelKind::Cnn],
            capacity: Some(vec![(1, 1), (2, 1)]),
            skip: SkipMode::On,
            contexts: Some(vec![2]),
            wide_biggest: false,
            train: TrainConfig {
                batch: 2,
                steps: 1,
                predict_len: 8,
                eval_every: 10,
                ..TrainConfig::default()
            },
            samples: 2,
            horizon: Some(6),
            eval_videos: Some(2),
            replicates: 2,
            z_dim: 4,
            seed: 7,
        };
        cmd_sweep(&cfg, out.path(), None, false).unwrap();

        let sweep = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
        let lines: Vec<&str> = sweep.lines().collect();
        assert_eq!(lines[0], REPORT_ROW_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("cnn,1,1,true,2,"));
        assert!(lines[2].starts_with("cnn,2,1,true,2,"));
        assert!(lines[1].ends_with(",ok"));

        let reps = std::fs::read_to_string(out.path().join("replicates.csv")).unwrap();
        assert_eq!(reps.lines().count(), 5);
        // Replicates get distinct derived seeds.
        let seeds: Vec<&str> = reps
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(10).unwrap())
            .collect();
        assert_ne!(seeds[0], seeds[1]);

        let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("kind,k_base,m_base,k_big,m_big,"));
        assert!(out.path().join("manifest.json").exists());
    }

    #[test]
    fn bad_capacity_points_are_rejected() {
        let data = tempfile::tempdir().unwrap();
        let probes = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            dataset: data.path().to_path_buf(),
            probes: probes.path().join("probes.mvpt"),
            kinds: vec![ModelKind::Cnn],
            capacity: Some(vec![(1, 4)]),
            skip: SkipMode::On,
            contexts: None,
            wide_biggest: false,
            train: TrainConfig::default(),
            samples: 2,
            horizon: None,
            eval_videos: None,
            replicates: 1,
            z_dim: 4,
            seed: 7,
        };
        let err = cmd_sweep(&cfg, out.path(), None, false).unwrap_err();
        assert!(err.to_string().contains("capacity point"));
    }

    #[test]
    fn pivot_prefers_skip_rows_and_pairs_capacities() {
        let mk = |kind: &str, k: usize, m: usize, skip: bool, fvd: f64| ReportRow {
            kind: kind.to_string(),
            k,
            m,
            skip,
            context: 5,
            params: 10,
            fvd,
            psnr: 20.0,
            ssim: 0.9,
            cosine: 0.8,
            seed: 1,
            wall_s: 1.0,
            status: "ok".to_string(),
        };
        let rows = vec![
            mk("svg", 1, 1, false, 50.0),
            mk("svg", 1, 1, true, 40.0),
            mk("svg", 3, 3, true, 30.0),
            mk("lstm", 1, 1, true, 60.0),
        ];
        let csv = biggest_vs_baseline(&rows, (3, 3));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("svg,1,1,3,3,40.000000,30.000000,"));
    }

    #[test]
    fn failed_points_keep_their_rows() {
        let data = tempfile::tempdir().unwrap();
        let probes = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_fixture(data.path(), probes.path());

        // Horizon longer than the test clips fails evaluation but not the run.
        let cfg = SweepConfig {
            dataset: data.path().to_path_buf(),
            probes: probes.path().join("probes.mvpt"),
            kinds: vec![ModelKind::Cnn],
            capacity: Some(vec![(1, 1)]),
            skip: SkipMode::On,
            contexts: Some(vec![2]),
            wide_biggest: false,
            train: TrainConfig {
                batch: 2,
                steps: 1,
                predict_len: 8,
                eval_every: 10,
                ..TrainConfig::default()
            },
            samples: 2,
            horizon: Some(100),
            eval_videos: Some(2),
            replicates: 1,
            z_dim: 4,
            seed: 7,
        };
        cmd_sweep(&cfg, out.path(), None, false).unwrap();
        let sweep = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
        let row = sweep.lines().nth(1).unwrap();
        assert!(row.contains("error: "));
        assert!(row.contains("NaN"));
    }
}
