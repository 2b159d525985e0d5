//! Sequence rollouts for training (teacher-forced) and sampling
//! (autoregressive). Causal wiring is the contract here:
//!
//! * the posterior over z_t sees h_t (the frame being predicted),
//! * the learned prior and the predictor see only h_{t-1},
//! * actions feed the predictor (and the CNN trunk), never the prior or
//!   posterior,
//! * at sample time the posterior is unused and z_t comes from the prior;
//!   skip maps come from the last context frame.

use super::{ModelConfig, ModelKind, ParameterStore};
use crate::data::{ActionSequence, VideoBatch};
use crate::error::{Error, Result};
use crate::layers::{
    convlstm_step, decoder_forward, encoder_forward, gaussian_head, kl_diag_gaussians,
    sample_reparameterized, ConvLstmDims, ConvLstmState, EncoderOutput, VarMap,
};
use crate::rng::SeededRng;
use crate::tensor::graph::{concat_channels, Var};
use crate::tensor::Tensor;

pub struct RolloutOutput {
    /// One [B,C,H,W] frame per predicted window step.
    pub predictions: Vec<Var>,
    /// Scalar KL (summed over batch and latent sites) per predicted step;
    /// empty without a latent path.
    pub kls: Vec<Var>,
    /// Window index of `predictions[0]`: 1 for recurrent kinds, context_len
    /// for the CNN.
    pub first_step: usize,
}

/// Tiles per-step actions [B,A] across a spatial grid as a frozen input.
pub fn inject_actions(actions_t: &Tensor, h: usize, w: usize) -> Result<Var> {
    if actions_t.shape().len() != 2 {
        return Err(Error::dim(format!(
            "actions slice wants [B,A], got {:?}",
            actions_t.shape()
        )));
    }
    Var::constant(actions_t.clone()).tile_spatial(h, w)
}

fn check_inputs(
    cfg: &ModelConfig,
    video: &VideoBatch,
    actions: Option<&ActionSequence>,
    need_steps: usize,
) -> Result<()> {
    cfg.validate()?;
    if video.channels() != cfg.channels
        || video.height() != cfg.frame_size
        || video.width() != cfg.frame_size
    {
        return Err(Error::dim(format!(
            "video {}x{}x{} does not match model {}x{}x{}",
            video.channels(),
            video.height(),
            video.width(),
            cfg.channels,
            cfg.frame_size,
            cfg.frame_size
        )));
    }
    match (cfg.action_dim, actions) {
        (0, Some(_)) => {
            return Err(Error::contract("action-free model given actions".to_string()))
        }
        (d, Some(a)) if d > 0 => {
            if a.action_dim() != d {
                return Err(Error::dim(format!(
                    "actions have dim {}, model wants {d}",
                    a.action_dim()
                )));
            }
            if a.batch() != video.batch() {
                return Err(Error::dim("action/video batch mismatch".to_string()));
            }
            if a.time() < need_steps {
                return Err(Error::dim(format!(
                    "actions cover {} steps, rollout needs {need_steps}",
                    a.time()
                )));
            }
        }
        (d, None) if d > 0 => {
            return Err(Error::contract("action-conditioned model given no actions".to_string()))
        }
        _ => {}
    }
    Ok(())
}

struct Recurrent<'a> {
    vars: &'a VarMap,
    cfg: &'a ModelConfig,
    theta0: ConvLstmState,
    theta1: ConvLstmState,
    phi: ConvLstmState,
    psi: ConvLstmState,
    d_theta0: ConvLstmDims,
    d_theta1: ConvLstmDims,
    d_latent: ConvLstmDims,
}

impl<'a> Recurrent<'a> {
    fn new(vars: &'a VarMap, cfg: &'a ModelConfig, batch: usize) -> Recurrent<'a> {
        let (hb, hid) = (cfg.bottleneck_hw(), cfg.hidden());
        let zeros = || ConvLstmState::zeros(batch, hid, hb, hb);
        Recurrent {
            vars,
            cfg,
            theta0: zeros(),
            theta1: zeros(),
            phi: zeros(),
            psi: zeros(),
            d_theta0: ConvLstmDims { cin: cfg.theta_cin(), hidden: hid },
            d_theta1: ConvLstmDims { cin: hid, hidden: hid },
            d_latent: ConvLstmDims { cin: cfg.bottleneck_channels(), hidden: hid },
        }
    }

    /// Advances the prior on h_prev and draws z from it.
    fn prior_z(&mut self, h_prev: &Var, rng: &mut SeededRng) -> Result<Var> {
        self.psi = convlstm_step(self.vars, "psi.lstm", h_prev, &self.psi, &self.d_latent)?;
        let p = gaussian_head(self.vars, "psi.head", &self.psi.hidden)?;
        sample_reparameterized(&p, rng)
    }

    /// Advances posterior (on h_t) and prior (on h_prev); returns the
    /// posterior draw and the step KL.
    fn posterior_z(
        &mut self,
        h_t: &Var,
        h_prev: &Var,
        rng: &mut SeededRng,
    ) -> Result<(Var, Var)> {
        self.phi = convlstm_step(self.vars, "phi.lstm", h_t, &self.phi, &self.d_latent)?;
        let q = gaussian_head(self.vars, "phi.head", &self.phi.hidden)?;
        self.psi = convlstm_step(self.vars, "psi.lstm", h_prev, &self.psi, &self.d_latent)?;
        let p = gaussian_head(self.vars, "psi.head", &self.psi.hidden)?;
        let z = sample_reparameterized(&q, rng)?;
        let kl = kl_diag_gaussians(&q, &p)?;
        Ok((z, kl))
    }

    /// One predictor step from h_prev (+ optional z, actions) to g_t.
    fn predict_g(&mut self, h_prev: &Var, z: Option<&Var>, action: Option<&Var>) -> Result<Var> {
        let mut parts: Vec<&Var> = vec![h_prev];
        if let Some(z) = z {
            parts.push(z);
        }
        if let Some(a) = action {
            parts.push(a);
        }
        let input = if parts.len() == 1 { parts[0].clone() } else { concat_channels(&parts)? };
        self.theta0 = convlstm_step(self.vars, "theta.l0", &input, &self.theta0, &self.d_theta0)?;
        self.theta1 =
            convlstm_step(self.vars, "theta.l1", &self.theta0.hidden, &self.theta1, &self.d_theta1)?;
        Ok(self.theta1.hidden.clone())
    }

    fn action_at(
        &self,
        actions: Option<&ActionSequence>,
        t: usize,
    ) -> Result<Option<Var>> {
        match actions {
            Some(a) if self.cfg.action_dim > 0 => {
                let hb = self.cfg.bottleneck_hw();
                Ok(Some(inject_actions(&a.actions_at(t)?, hb, hb)?))
            }
            _ => Ok(None),
        }
    }
}

/// Teacher-forced rollout over a training window; every frame after the
/// first is predicted from ground-truth history.
pub fn train_rollout(
    vars: &VarMap,
    cfg: &ModelConfig,
    video: &VideoBatch,
    actions: Option<&ActionSequence>,
    rng: &mut SeededRng,
) -> Result<RolloutOutput> {
    let t_total = video.time();
    check_inputs(cfg, video, actions, t_total)?;
    let min = if cfg.is_recurrent() { 2 } else { cfg.context_len + 1 };
    if t_total < min {
        return Err(Error::dim(format!(
            "window of {t_total} steps too short, need >= {min}"
        )));
    }
    match cfg.kind {
        ModelKind::Cnn => cnn_train_rollout(vars, cfg, video, actions),
        _ => recurrent_train_rollout(vars, cfg, video, actions, rng),
    }
}

fn recurrent_train_rollout(
    vars: &VarMap,
    cfg: &ModelConfig,
    video: &VideoBatch,
    actions: Option<&ActionSequence>,
    rng: &mut SeededRng,
) -> Result<RolloutOutput> {
    let t_total = video.time();
    let edims = cfg.encoder_dims();
    let ddims = cfg.decoder_dims();
    let mut encoded: Vec<EncoderOutput> = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let x = Var::constant(video.frames_at(t)?);
        encoded.push(encoder_forward(vars, "enc", &x, &edims)?);
    }
    let mut st = Recurrent::new(vars, cfg, video.batch());
    let mut predictions = Vec::with_capacity(t_total - 1);
    let mut kls = Vec::new();
    for t in 1..t_total {
        let h_prev = encoded[t - 1].bottleneck.clone();
        let z = if cfg.has_latent() {
            let h_t = encoded[t].bottleneck.clone();
            let (z, kl) = st.posterior_z(&h_t, &h_prev, rng)?;
            kls.push(kl);
            Some(z)
        } else {
            None
        };
        let action = st.action_at(actions, t)?;
        let g = st.predict_g(&h_prev, z.as_ref(), action.as_ref())?;
        let skips = cfg.skip.then_some(encoded[t - 1].skips.as_slice());
        predictions.push(decoder_forward(vars, "dec", &g, skips, &ddims)?);
    }
    Ok(RolloutOutput { predictions, kls, first_step: 1 })
}

fn cnn_forward(
    vars: &VarMap,
    cfg: &ModelConfig,
    window: &[Var],
    action: Option<&Var>,
) -> Result<Var> {
    let mut parts: Vec<&Var> = window.iter().collect();
    if let Some(a) = action {
        parts.push(a);
    }
    let stack = concat_channels(&parts)?;
    let enc = encoder_forward(vars, "enc", &stack, &cfg.encoder_dims())?;
    let skips = cfg.skip.then_some(enc.skips.as_slice());
    decoder_forward(vars, "dec", &enc.bottleneck, skips, &cfg.decoder_dims())
}

fn cnn_action(cfg: &ModelConfig, actions: Option<&ActionSequence>, t: usize) -> Result<Option<Var>> {
    match actions {
        Some(a) if cfg.action_dim > 0 => Ok(Some(inject_actions(
            &a.actions_at(t)?,
            cfg.frame_size,
            cfg.frame_size,
        )?)),
        _ => Ok(None),
    }
}

fn cnn_train_rollout(
    vars: &VarMap,
    cfg: &ModelConfig,
    video: &VideoBatch,
    actions: Option<&ActionSequence>,
) -> Result<RolloutOutput> {
    let (t_total, ctx) = (video.time(), cfg.context_len);
    let mut predictions = Vec::with_capacity(t_total - ctx);
    for t in ctx..t_total {
        // Stacked channels run oldest to newest.
        let window: Vec<Var> = (t - ctx..t)
            .map(|i| Ok(Var::constant(video.frames_at(i)?)))
            .collect::<Result<_>>()?;
        let action = cnn_action(cfg, actions, t)?;
        predictions.push(cnn_forward(vars, cfg, &window, action.as_ref())?);
    }
    Ok(RolloutOutput { predictions, kls: Vec::new(), first_step: ctx })
}

/// Autoregressive generation: warms the recurrent state on the context
/// (latents from the prior), then predicts `horizon` frames feeding its own
/// output back in. Returns [B,horizon,C,H,W].
pub fn sample_rollout(
    store: &ParameterStore,
    cfg: &ModelConfig,
    context: &VideoBatch,
    actions: Option<&ActionSequence>,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<VideoBatch> {
    check_inputs(cfg, context, actions, cfg.context_len + horizon)?;
    if context.time() != cfg.context_len {
        return Err(Error::dim(format!(
            "context has {} frames, model wants {}",
            context.time(),
            cfg.context_len
        )));
    }
    if horizon == 0 {
        return Err(Error::dim("horizon must be >= 1".to_string()));
    }
    let vars = store.bind(false);
    let steps = match cfg.kind {
        ModelKind::Cnn => cnn_sample(&vars, cfg, context, actions, horizon)?,
        _ => recurrent_sample(&vars, cfg, context, actions, horizon, rng)?,
    };
    VideoBatch::from_steps(&steps)
}

fn recurrent_sample(
    vars: &VarMap,
    cfg: &ModelConfig,
    context: &VideoBatch,
    actions: Option<&ActionSequence>,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Tensor>> {
    let ctx = cfg.context_len;
    let edims = cfg.encoder_dims();
    let ddims = cfg.decoder_dims();
    let mut encoded: Vec<EncoderOutput> = Vec::with_capacity(ctx);
    for t in 0..ctx {
        let x = Var::constant(context.frames_at(t)?);
        encoded.push(encoder_forward(vars, "enc", &x, &edims)?);
    }
    let mut st = Recurrent::new(vars, cfg, context.batch());
    // Warm-up mirrors generation (prior z, actions) so the predictor state
    // is consistent; its frame outputs are discarded, so no decode.
    for t in 1..ctx {
        let h_prev = encoded[t - 1].bottleneck.clone();
        let z = if cfg.has_latent() { Some(st.prior_z(&h_prev, rng)?) } else { None };
        let action = st.action_at(actions, t)?;
        st.predict_g(&h_prev, z.as_ref(), action.as_ref())?;
    }
    // Skip maps stay pinned to the last context frame.
    let skip_src = encoded.pop().expect("context_len >= 1");
    let skips = cfg.skip.then_some(skip_src.skips.as_slice());
    let mut h_prev = skip_src.bottleneck.clone();
    let mut out = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let t = ctx + i;
        let z = if cfg.has_latent() { Some(st.prior_z(&h_prev, rng)?) } else { None };
        let action = st.action_at(actions, t)?;
        let g = st.predict_g(&h_prev, z.as_ref(), action.as_ref())?;
        let pred = decoder_forward(vars, "dec", &g, skips, &ddims)?;
        out.push(pred.value().clone());
        h_prev = encoder_forward(vars, "enc", &pred, &edims)?.bottleneck;
    }
    Ok(out)
}

fn cnn_sample(
    vars: &VarMap,
    cfg: &ModelConfig,
    context: &VideoBatch,
    actions: Option<&ActionSequence>,
    horizon: usize,
) -> Result<Vec<Tensor>> {
    let ctx = cfg.context_len;
    let mut window: Vec<Var> = (0..ctx)
        .map(|t| Ok(Var::constant(context.frames_at(t)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let action = cnn_action(cfg, actions, ctx + i)?;
        let pred = cnn_forward(vars, cfg, &window, action.as_ref())?;
        out.push(pred.value().clone());
        window.remove(0);
        window.push(pred);
    }
    Ok(out)
}
