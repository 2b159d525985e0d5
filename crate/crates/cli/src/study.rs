//! Shared engine: sampling trajectory sets from a checkpoint and running a
//! full train-then-eval grid point. sweep and ablate are thin loops over
//! `run_point`; eval reuses `sample_trajectories` on a saved model.

use std::time::Instant;

use minivp_core::data::{ActionSequence, VideoBatch};
use minivp_core::error::{Error, Result};
use minivp_core::metrics::{evaluate_trajectories, MetricReport, ProbeNetworks, TrajectorySet};
use minivp_core::models::{build_model, ModelConfig, ModelKind, ParameterStore};
use minivp_core::objective::{train, TrainConfig};
use minivp_core::rng::SeededRng;
use minivp_core::sample_rollout;

use crate::bundle::DatasetBundle;
use crate::config::{protocol, ReportRow};

/// Deterministic models produce one trajectory; sampling more would waste
/// the whole budget on identical rollouts.
pub fn effective_s(model: &ModelConfig, requested: usize) -> usize {
    if model.has_latent() {
        requested.max(1)
    } else {
        1
    }
}

/// S rollouts from one context batch, each on its own derived stream.
pub fn sample_trajectories(
    store: &ParameterStore,
    model: &ModelConfig,
    context: &VideoBatch,
    actions: Option<&ActionSequence>,
    horizon: usize,
    s: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    let root = SeededRng::new(seed, "eval");
    let mut samples = Vec::with_capacity(s);
    for i in 0..s {
        let mut rng = root.derive_indexed("sample", i as u64);
        samples.push(sample_rollout(store, model, context, actions, horizon, &mut rng)?);
    }
    TrajectorySet::from_samples(&samples)
}

/// Slices the evaluation windows out of the held-out split.
pub struct EvalWindows {
    pub context: VideoBatch,
    pub target: VideoBatch,
    pub actions: Option<ActionSequence>,
}

pub fn eval_windows(
    bundle: &DatasetBundle,
    context_len: usize,
    horizon: usize,
    eval_videos: Option<usize>,
) -> Result<EvalWindows> {
    let need = context_len + horizon;
    if bundle.test.time() < need {
        return Err(Error::config(format!(
            "eval needs {need} frames per test video, dataset has {}",
            bundle.test.time()
        )));
    }
    let n = eval_videos
        .unwrap_or(bundle.test.batch())
        .min(bundle.test.batch());
    if n == 0 {
        return Err(Error::config("no test videos to evaluate".to_string()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let test = bundle.test.gather(&idx)?;
    let actions = match &bundle.test_actions {
        Some(a) => Some(a.gather(&idx)?.window(0, need)?),
        None => None,
    };
    Ok(EvalWindows {
        context: test.window(0, context_len)?,
        target: test.window(context_len, horizon)?,
        actions,
    })
}

/// Horizon mean of each best-of-S curve plus the scalar distance.
pub fn row_from_report(
    report: &MetricReport,
    kind: &str,
    k: usize,
    m: usize,
    skip: bool,
    context: usize,
    params: usize,
    seed: u64,
    wall_s: f64,
) -> ReportRow {
    let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    ReportRow {
        kind: kind.to_string(),
        k,
        m,
        skip,
        context,
        params,
        fvd: report.fvd,
        psnr: mean(&report.curves.psnr),
        ssim: mean(&report.curves.ssim),
        cosine: mean(&report.curves.cosine),
        seed,
        wall_s,
        status: "ok".to_string(),
    }
}

/// One grid point: capacity, skip, and context around a model kind.
#[derive(Debug, Clone)]
pub struct PointSpec {
    pub kind: ModelKind,
    pub k: usize,
    pub m: usize,
    pub skip: bool,
    pub context: usize,
    pub predict: usize,
    pub z_dim: usize,
    pub horizon: usize,
    pub samples: usize,
}

impl PointSpec {
    pub fn model_config(&self, bundle: &DatasetBundle) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            k: self.k,
            m: self.m,
            z_dim: if self.kind == ModelKind::Svg { self.z_dim } else { 0 },
            skip: self.skip,
            context_len: self.context,
            predict_len: self.predict,
            frame_size: bundle.spec.size,
            channels: 1,
            action_dim: bundle.spec.kind.action_dim(),
        }
    }

    /// Protocol-shaped point for a dataset.
    pub fn for_bundle(bundle: &DatasetBundle, kind: ModelKind, k: usize, m: usize) -> PointSpec {
        let p = protocol(bundle.spec.kind);
        PointSpec {
            kind,
            k,
            m,
            skip: true,
            context: p.context,
            predict: p.train_predict,
            z_dim: 8,
            horizon: p.eval_horizon,
            samples: 20,
        }
    }
}

/// Train a fresh model at the point and evaluate it; the row carries the
/// wall time of both phases.
pub fn run_point(
    bundle: &DatasetBundle,
    probes: &ProbeNetworks,
    point: &PointSpec,
    tc: &TrainConfig,
    eval_videos: Option<usize>,
    seed: u64,
) -> Result<(ReportRow, MetricReport)> {
    let started = Instant::now();
    let model = point.model_config(bundle);
    model.validate()?;
    let mut tc = tc.clone();
    tc.seed = seed;
    tc.context_len = model.context_len;
    tc.predict_len = model.predict_len;
    tc.validate()?;

    let store = build_model(&model, seed)?;
    let params = store.param_count("");
    let outcome = train(
        store,
        &model,
        &tc,
        &bundle.train,
        bundle.train_actions.as_ref(),
        None,
    )?;

    let s = effective_s(&model, point.samples);
    let w = eval_windows(bundle, model.context_len, point.horizon, eval_videos)?;
    let ts = sample_trajectories(
        &outcome.store,
        &model,
        &w.context,
        w.actions.as_ref(),
        point.horizon,
        s,
        seed,
    )?;
    let report = evaluate_trajectories(
        &ts,
        &w.target,
        &w.context,
        probes,
        seed,
        serde_json::to_value(&model)?,
    )?;
    let row = row_from_report(
        &report,
        model.kind.as_str(),
        point.k,
        point.m,
        point.skip,
        point.context,
        params,
        seed,
        started.elapsed().as_secs_f64(),
    );
    Ok((row, report))
}

/// A failed point keeps its row so the grid stays complete.
pub fn failure_row(point: &PointSpec, seed: u64, err: &Error) -> ReportRow {
    ReportRow {
        kind: point.kind.as_str().to_string(),
        k: point.k,
        m: point.m,
        skip: point.skip,
        context: point.context,
        params: 0,
        fvd: f64::NAN,
        psnr: f64::NAN,
        ssim: f64::NAN,
        cosine: f64::NAN,
        seed,
        wall_s: 0.0,
        status: format!("error: {err}"),
    }
}
