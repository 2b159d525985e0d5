//! Loading the artifacts commands pass between each other: dataset
//! directories, probe checkpoints, and model checkpoints with sidecars.

use std::path::Path;

use serde::{Deserialize, Serialize};

use minivp_core::data::{load_dataset, ActionSequence, DatasetSpec, VideoBatch};
use minivp_core::error::{Error, Result};
use minivp_core::metrics::ProbeNetworks;
use minivp_core::models::{ModelConfig, ParameterStore};
use minivp_core::objective::TrainConfig;

/// A gen-data output directory: train and test splits plus the spec.
pub struct DatasetBundle {
    pub spec: DatasetSpec,
    pub train: VideoBatch,
    pub train_actions: Option<ActionSequence>,
    pub test: VideoBatch,
    pub test_actions: Option<ActionSequence>,
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let spec_path = dir.join("train.json");
    let spec: DatasetSpec = serde_json::from_str(
        &std::fs::read_to_string(&spec_path)
            .map_err(|e| Error::config(format!("no dataset at {}: {e}", dir.display())))?,
    )?;
    let (train, train_actions) = load_dataset(&dir.join("train.mvpt"))?;
    let (test, test_actions) = load_dataset(&dir.join("test.mvpt"))?;
    Ok(DatasetBundle {
        spec,
        train,
        train_actions,
        test,
        test_actions,
    })
}

/// Probes must have been trained on the same dataset they now judge.
pub fn load_probes(path: &Path, spec: &DatasetSpec) -> Result<ProbeNetworks> {
    let probes = ProbeNetworks::load(path)?;
    if probes.meta().dataset != spec.kind.as_str() || probes.meta().dataset_seed != spec.seed {
        return Err(Error::config(format!(
            "probes were trained on {} (seed {}), dataset is {} (seed {})",
            probes.meta().dataset,
            probes.meta().dataset_seed,
            spec.kind.as_str(),
            spec.seed
        )));
    }
    Ok(probes)
}

/// Written next to every model checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

pub fn save_model(path: &Path, store: &ParameterStore, sidecar: &ModelSidecar) -> Result<()> {
    store.save(path)?;
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(sidecar)?,
    )?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ParameterStore, ModelSidecar)> {
    let store = ParameterStore::load(path)?;
    let side = path.with_extension("json");
    let sidecar: ModelSidecar = serde_json::from_str(
        &std::fs::read_to_string(&side)
            .map_err(|e| Error::format(format!("missing model sidecar {}: {e}", side.display())))?,
    )?;
    sidecar.model.validate()?;
    Ok((store, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use minivp_core::data::{default_spec, generate, save_dataset, DataKind, Split};
    use minivp_core::models::build_model;

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = default_spec(DataKind::PushAction, 3);
        spec.count = 2;
        spec.t = 6;
        let (v, a) = generate(&spec, Split::Train).unwrap();
        save_dataset(&dir.path().join("train.mvpt"), &spec, &v, a.as_ref()).unwrap();
        let (tv, ta) = generate(&spec, Split::Test).unwrap();
        save_dataset(&dir.path().join("test.mvpt"), &spec, &tv, ta.as_ref()).unwrap();

        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.spec.kind, DataKind::PushAction);
        assert!(b.train.frames().bitwise_eq(v.frames()));
        assert!(b.test.frames().bitwise_eq(tv.frames()));
        assert!(b.train_actions.is_some() && b.test_actions.is_some());
        assert!(load_bundle(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn model_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            frame_size: 16,
            ..ModelConfig::default()
        };
        let store = build_model(&cfg, 11).unwrap();
        let side = ModelSidecar {
            model: cfg.clone(),
            train: TrainConfig::default(),
            seed: 11,
        };
        let path = dir.path().join("model.mvpt");
        save_model(&path, &store, &side).unwrap();
        let (loaded, ls) = load_model(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        assert_eq!(ls.seed, 11);
        assert_eq!(ls.model.frame_size, 16);
        // A checkpoint without its sidecar is unusable.
        std::fs::remove_file(path.with_extension("json")).unwrap();
        assert!(load_model(&path).is_err());
    }
}
