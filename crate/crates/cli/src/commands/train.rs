//! train: optimize one model on a dataset directory.

use std::path::Path;

use minivp_core::error::{Error, Result};
use minivp_core::models::build_model;
use minivp_core::objective::{train, write_train_log};

use crate::bundle::{load_bundle, save_model, DatasetBundle, ModelSidecar};
use crate::config::{write_manifest, TrainCommandConfig, FAST_MAX_STEPS};

/// The model decides the train window; dataset geometry must agree.
pub fn resolve_train_config(cfg: &TrainCommandConfig, bundle: &DatasetBundle) -> Result<TrainCommandConfig> {
    let mut cfg = cfg.clone();
    cfg.model.validate()?;
    cfg.train.context_len = cfg.model.context_len;
    cfg.train.predict_len = cfg.model.predict_len;
    cfg.train.validate()?;
    let spec = &bundle.spec;
    if cfg.model.frame_size != spec.size {
        return Err(Error::config(format!(
            "model expects {}px frames, dataset is {}px",
            cfg.model.frame_size, spec.size
        )));
    }
    if cfg.model.action_dim != spec.kind.action_dim() {
        return Err(Error::config(format!(
            "model has action dim {}, dataset {} provides {}",
            cfg.model.action_dim,
            spec.kind.as_str(),
            spec.kind.action_dim()
        )));
    }
    Ok(cfg)
}

pub fn cmd_train(
    cfg: &TrainCommandConfig,
    out: &Path,
    seed: Option<u64>,
    fast: bool,
) -> Result<()> {
    let bundle = load_bundle(&cfg.dataset)?;
    let mut cfg = resolve_train_config(cfg, &bundle)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if fast {
        cfg.train.steps = cfg.train.steps.min(FAST_MAX_STEPS);
    }
    std::fs::create_dir_all(out)?;

    let store = build_model(&cfg.model, cfg.train.seed)?;
    let loss_path = out.join("loss.csv");
    let ckpt_dir = out.to_path_buf();
    let mut snapshot = |step: usize,
                        store: &minivp_core::models::ParameterStore,
                        log: &[minivp_core::objective::TrainRecord]|
     -> Result<()> {
        store.save(&ckpt_dir.join(format!("ckpt-{step}.mvpt")))?;
        write_train_log(&loss_path, log)
    };
    let outcome = train(
        store,
        &cfg.model,
        &cfg.train,
        &bundle.train,
        bundle.train_actions.as_ref(),
        Some(&mut snapshot),
    )?;

    save_model(
        &out.join("model.mvpt"),
        &outcome.store,
        &ModelSidecar {
            model: cfg.model.clone(),
            train: cfg.train.clone(),
            seed: cfg.train.seed,
        },
    )?;
    write_train_log(&loss_path, &outcome.log)?;
    write_manifest(out, "train", cfg.train.seed, fast, &cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::load_model;
    use crate::commands::gen_data::cmd_gen_data;
    use crate::config::GenDataConfig;
    use minivp_core::data::{default_spec, DataKind};
    use minivp_core::models::{ModelConfig, ModelKind};
    use minivp_core::objective::TrainConfig;

    fn tiny_setup(dir: &Path) -> TrainCommandConfig {
        let mut gen = GenDataConfig {
            spec: default_spec(DataKind::BounceDet, 11),
            test_count: 2,
        };
        gen.spec.count = 4;
        gen.spec.t = 8;
        gen.spec.size = 16;
        gen.spec.radius = 2.0;
        cmd_gen_data(&gen, dir, None, false).unwrap();
        TrainCommandConfig {
            dataset: dir.to_path_buf(),
            model: ModelConfig {
                kind: ModelKind::Lstm,
                z_dim: 0,
                context_len: 2,
                predict_len: 3,
                frame_size: 16,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch: 2,
                steps: 4,
                eval_every: 2,
                seed: 5,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn trains_and_writes_artifacts() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_setup(data.path());
        cmd_train(&cfg, out.path(), None, false).unwrap();

        assert!(out.path().join("ckpt-2.mvpt").exists());
        assert!(out.path().join("ckpt-4.mvpt").exists());
        assert!(out.path().join("manifest.json").exists());
        let log = std::fs::read_to_string(out.path().join("loss.csv")).unwrap();
        assert!(log.starts_with("step,total_loss,recon,kl,wall_ms"));
        assert_eq!(log.lines().count(), 5);

        let (store, side) = load_model(&out.path().join("model.mvpt")).unwrap();
        assert_eq!(side.seed, 5);
        assert_eq!(side.train.context_len, 2);
        assert!(store.len() > 0);

        // Same seed reproduces the weights bitwise.
        let out2 = tempfile::tempdir().unwrap();
        cmd_train(&cfg, out2.path(), None, false).unwrap();
        let (store2, _) = load_model(&out2.path().join("model.mvpt")).unwrap();
        for (k, t) in store.map() {
            assert!(t.bitwise_eq(store2.map().get(k).unwrap()), "{k}");
        }
    }

    #[test]
    fn geometry_mismatches_are_config_errors() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_setup(data.path());
        cfg.model.frame_size = 32;
        assert!(matches!(
            cmd_train(&cfg, out.path(), None, false),
            Err(Error::Config(_))
        ));
        let mut cfg2 = tiny_setup(data.path());
        cfg2.model.action_dim = 2;
        assert!(matches!(
            cmd_train(&cfg2, out.path(), None, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fast_caps_steps() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_setup(data.path());
        cfg.train.steps = 6;
        cfg.train.eval_every = 100;
        cmd_train(&cfg, out.path(), Some(9), true).unwrap();
        let log = std::fs::read_to_string(out.path().join("loss.csv")).unwrap();
        // 6 < FAST_MAX_STEPS, unchanged; the flag and seed land in the manifest.
        assert_eq!(log.lines().count(), 7);
        let manifest = std::fs::read_to_string(out.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"fast\": true"));
        assert!(manifest.contains("\"seed\": 9"));
    }
}
