//! Training objective and loop: l1 reconstruction plus a beta-weighted KL
//! between posterior and learned prior, optimized with Adam over seeded
//! minibatches. The loss reduces as mean over batch, sum over time and
//! space, so beta's scale does not depend on batch size.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{ActionSequence, VideoBatch};
use crate::error::{Error, Result};
use crate::layers::VarMap;
use crate::models::{train_rollout, ModelConfig, ParameterStore, RolloutOutput};
use crate::rng::SeededRng;
use crate::tensor::graph::{Gradients, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// KL weight (houses beta).
    pub beta: f32,
    pub lr: f32,
    pub batch: usize,
    /// Total optimizer updates.
    pub steps: usize,
    pub context_len: usize,
    pub predict_len: usize,
    pub seed: u64,
    /// Steps between checkpoint snapshots.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1e-4,
            lr: 2e-4,
            batch: 16,
            steps: 2000,
            context_len: 5,
            predict_len: 10,
            seed: 0,
            eval_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::config("beta must be >= 0".to_string()));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("lr must be > 0".to_string()));
        }
        if self.batch == 0 || self.steps == 0 || self.eval_every == 0 {
            return Err(Error::config("batch, steps, eval_every must be >= 1".to_string()));
        }
        if self.context_len == 0 || self.predict_len == 0 {
            return Err(Error::config("context_len and predict_len must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Training window length.
    pub fn window(&self) -> usize {
        self.context_len + self.predict_len
    }
}

/// Mean over batch of the summed absolute error over time, channels, and
/// pixels. Plain-data counterpart of the training loss term.
pub fn recon_l1(predicted: &VideoBatch, target: &VideoBatch) -> Result<f64> {
    if predicted.frames().shape() != target.frames().shape() {
        return Err(Error::dim(format!(
            "recon_l1 shapes {:?} vs {:?}",
            predicted.frames().shape(),
            target.frames().shape()
        )));
    }
    let b = predicted.batch() as f64;
    let sum: f64 = predicted
        .frames()
        .data()
        .iter()
        .zip(target.frames().data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(sum / b)
}

/// Graph version of [`recon_l1`] over a rollout's predictions; `target` is
/// the full training window, aligned via `rollout.first_step`.
pub fn recon_loss(rollout: &RolloutOutput, target: &VideoBatch) -> Result<Var> {
    if rollout.predictions.is_empty() {
        return Err(Error::contract("rollout has no predictions".to_string()));
    }
    if rollout.first_step + rollout.predictions.len() != target.time() {
        return Err(Error::dim(format!(
            "{} predictions from step {} cannot align with a {}-step window",
            rollout.predictions.len(),
            rollout.first_step,
            target.time()
        )));
    }
    let b = target.batch() as f32;
    let mut total: Option<Var> = None;
    for (i, pred) in rollout.predictions.iter().enumerate() {
        let x = Var::constant(target.frames_at(rollout.first_step + i)?);
        let term = pred.sub(&x)?.abs().sum_all()?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("nonempty").scale(1.0 / b))
}

/// Loss components; `recon` and `kl` are subgraphs of `total` so their
/// values come free with the forward pass.
pub struct LossTerms {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

impl LossTerms {
    pub fn total_value(&self) -> f32 {
        self.total.value().data()[0]
    }

    pub fn recon_value(&self) -> f32 {
        self.recon.value().data()[0]
    }

    pub fn kl_value(&self) -> f32 {
        self.kl.value().data()[0]
    }
}

/// recon + beta * sum_t KL_t, mean over batch. Requires a rollout that
/// carried per-step Gaussian parameters.
pub fn elbo_loss(rollout: &RolloutOutput, target: &VideoBatch, beta: f32) -> Result<LossTerms> {
    if rollout.kls.is_empty() {
        return Err(Error::contract(
            "elbo_loss needs per-step Gaussian parameters; rollout has none".to_string(),
        ));
    }
    if beta < 0.0 {
        return Err(Error::config("beta must be >= 0".to_string()));
    }
    let recon = recon_loss(rollout, target)?;
    let b = target.batch() as f32;
    let mut kl = rollout.kls[0].clone();
    for k in &rollout.kls[1..] {
        kl = kl.add(k)?;
    }
    let kl = kl.scale(1.0 / b);
    // beta = 0 still routes (zero) gradients through the prior and keeps
    // total bitwise equal to recon.
    let total = recon.add(&kl.scale(beta))?;
    Ok(LossTerms { total, recon, kl })
}

/// Kind-appropriate loss: elbo when the rollout has a latent path, plain
/// reconstruction otherwise.
pub fn sequence_loss(rollout: &RolloutOutput, target: &VideoBatch, beta: f32) -> Result<LossTerms> {
    if rollout.kls.is_empty() {
        let recon = recon_loss(rollout, target)?;
        Ok(LossTerms {
            total: recon.clone(),
            recon,
            kl: Var::constant(Tensor::zeros(&[])),
        })
    } else {
        elbo_loss(rollout, target, beta)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> AdamConfig {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(2e-4)
    }
}

/// First/second moment buffers per parameter plus the step counter.
#[derive(Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every parameter in the store. Buffers are keyed by
/// name, so the update order (sorted names) is deterministic.
pub fn adam_step(
    store: &mut ParameterStore,
    vars: &VarMap,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t as i32);
    let names: Vec<String> = vars.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let var = vars.get(&name)?;
        let g = grads
            .wrt(var)
            .ok_or_else(|| Error::contract(format!("parameter '{name}' received no gradient")))?;
        let (pshape, mut out) = {
            let p = store.get(&name)?;
            if g.shape() != p.shape() {
                return Err(Error::dim(format!(
                    "gradient shape {:?} vs parameter '{name}' {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            (p.shape().to_vec(), p.data().to_vec())
        };
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; out.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; out.len()]);
        for ((pi, (mi, vi)), &gi) in out.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.data())
        {
            if !gi.is_finite() {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mh = *mi as f64 / bc1;
            let vh = *vi as f64 / bc2;
            *pi -= (cfg.lr as f64 * mh / (vh.sqrt() + cfg.eps as f64)) as f32;
        }
        store.set(&name, Tensor::new(&pshape, out)?)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub total_loss: f32,
    pub recon: f32,
    pub kl: f32,
    pub wall_ms: f64,
}

/// Loss log CSV: step,total_loss,recon,kl,wall_ms.
pub fn write_train_log(path: &Path, log: &[TrainRecord]) -> Result<()> {
    let mut s = String::from("step,total_loss,recon,kl,wall_ms\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.step, r.total_loss, r.recon, r.kl, r.wall_ms
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub struct TrainOutcome {
    pub store: ParameterStore,
    pub log: Vec<TrainRecord>,
}

/// Draws a seeded minibatch window: per item, a video index and a window
/// start, interleaved in that order.
fn draw_batch(
    videos: &VideoBatch,
    actions: Option<&ActionSequence>,
    batch: usize,
    window: usize,
    rng: &mut SeededRng,
) -> Result<(VideoBatch, Option<ActionSequence>)> {
    let (n, t) = (videos.batch(), videos.time());
    let starts = t - window + 1;
    let chw = videos.channels() * videos.height() * videos.width();
    let mut frames = vec![0.0f32; batch * window * chw];
    let adim = actions.map(|a| a.action_dim()).unwrap_or(0);
    let mut acts = vec![0.0f32; batch * window * adim];
    let fsrc = videos.frames().data();
    for i in 0..batch {
        let vi = rng.index(n);
        let t0 = rng.index(starts);
        let from = (vi * t + t0) * chw;
        frames[i * window * chw..(i + 1) * window * chw]
            .copy_from_slice(&fsrc[from..from + window * chw]);
        if let Some(a) = actions {
            let asrc = a.actions().data();
            let from = (vi * t + t0) * adim;
            acts[i * window * adim..(i + 1) * window * adim]
                .copy_from_slice(&asrc[from..from + window * adim]);
        }
    }
    let vb = VideoBatch::new(Tensor::new(
        &[batch, window, videos.channels(), videos.height(), videos.width()],
        frames,
    )?)?;
    let ab = match actions {
        Some(_) => Some(ActionSequence::new(Tensor::new(&[batch, window, adim], acts)?)?),
        None => None,
    };
    Ok((vb, ab))
}

/// Minibatch training loop. Emits one record per step; calls `checkpoint`
/// every `eval_every` steps, after the final step, and on a NaN abort (with
/// the last finite parameters).
pub fn train(
    store: ParameterStore,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    videos: &VideoBatch,
    actions: Option<&ActionSequence>,
    mut checkpoint: Option<&mut dyn FnMut(usize, &ParameterStore, &[TrainRecord]) -> Result<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    let window = tc.window();
    if videos.time() < window {
        return Err(Error::dim(format!(
            "dataset sequences have {} steps, training window needs {window}",
            videos.time()
        )));
    }
    let mut store = store;
    let mut adam = AdamState::new();
    let acfg = AdamConfig::with_lr(tc.lr);
    let batch_root = SeededRng::new(tc.seed, "train");
    let latent_root = SeededRng::new(tc.seed, "latent");
    let mut log = Vec::with_capacity(tc.steps);
    for step in 1..=tc.steps {
        let clock = Instant::now();
        let mut brng = batch_root.derive_indexed("step", step as u64);
        let (bv, ba) = draw_batch(videos, actions, tc.batch, window, &mut brng)?;
        let vars = store.bind(true);
        let mut zrng = latent_root.derive_indexed("step", step as u64);
        let rollout = train_rollout(&vars, cfg, &bv, ba.as_ref(), &mut zrng)?;
        let terms = sequence_loss(&rollout, &bv, tc.beta)?;
        let (total, recon, kl) = (terms.total_value(), terms.recon_value(), terms.kl_value());
        if !total.is_finite() {
            if let Some(cb) = checkpoint.as_mut() {
                cb(step, &store, &log)?;
            }
            return Err(Error::NonFinite(format!(
                "loss at step {step}: total {total}, recon {recon}, kl {kl}"
            )));
        }
        let grads = terms.total.backward()?;
        adam_step(&mut store, &vars, &grads, &mut adam, &acfg)?;
        log.push(TrainRecord {
            step,
            total_loss: total,
            recon,
            kl,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if step % tc.eval_every == 0 || step == tc.steps {
            if let Some(cb) = checkpoint.as_mut() {
                cb(step, &store, &log)?;
            }
        }
    }
    Ok(TrainOutcome { store, log })
}
