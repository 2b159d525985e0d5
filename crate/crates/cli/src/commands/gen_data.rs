//! gen-data: render both splits of a synthetic dataset to disk.

use std::path::Path;

use minivp_core::data::{generate, save_dataset, Split};
use minivp_core::error::Result;

use crate::config::{write_manifest, GenDataConfig};

pub fn cmd_gen_data(cfg: &GenDataConfig, out: &Path, seed: Option<u64>, fast: bool) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.spec.seed = s;
    }
    cfg.spec.validate()?;
    std::fs::create_dir_all(out)?;

    let (train, train_actions) = generate(&cfg.spec, Split::Train)?;
    save_dataset(&out.join("train.mvpt"), &cfg.spec, &train, train_actions.as_ref())?;

    let mut test_spec = cfg.spec.clone();
    test_spec.count = cfg.test_count;
    let (test, test_actions) = generate(&test_spec, Split::Test)?;
    save_dataset(&out.join("test.mvpt"), &test_spec, &test, test_actions.as_ref())?;

    write_manifest(out, "gen-data", cfg.spec.seed, fast, &cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::load_bundle;
    use minivp_core::data::{default_spec, DataKind};

    #[test]
    fn writes_both_splits_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GenDataConfig {
            spec: default_spec(DataKind::BounceDet, 9),
            test_count: 3,
        };
        cfg.spec.count = 4;
        cfg.spec.t = 6;
        cmd_gen_data(&cfg, dir.path(), None, false).unwrap();

        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.train.batch(), 4);
        assert_eq!(b.test.batch(), 3);
        assert!(b.train_actions.is_none());
        assert!(dir.path().join("manifest.json").exists());

        // Splits are disjoint: no train video equals a test video.
        for i in 0..4 {
            let tr = b.train.gather(&[i]).unwrap();
            for j in 0..3 {
                let te = b.test.gather(&[j]).unwrap();
                assert!(!tr.frames().bitwise_eq(te.frames()));
            }
        }
    }

    #[test]
    fn malformed_spec_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GenDataConfig {
            spec: default_spec(DataKind::BounceDet, 9),
            test_count: 2,
        };
        cfg.spec.size = 30; // not divisible by 8
        assert!(cmd_gen_data(&cfg, dir.path(), None, false).is_err());
    }

    #[test]
    fn seed_override_changes_data() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut cfg = GenDataConfig {
            spec: default_spec(DataKind::BounceDet, 9),
            test_count: 2,
        };
        cfg.spec.count = 2;
        cfg.spec.t = 5;
        cmd_gen_data(&cfg, d1.path(), None, false).unwrap();
        cmd_gen_data(&cfg, d2.path(), Some(10), false).unwrap();
        let a = load_bundle(d1.path()).unwrap();
        let b = load_bundle(d2.path()).unwrap();
        assert!(!a.train.frames().bitwise_eq(b.train.frames()));
        assert_eq!(b.spec.seed, 10);
    }
}
