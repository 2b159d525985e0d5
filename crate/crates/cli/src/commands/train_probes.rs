//! train-probes: fit the frozen metric probes for one dataset.

use std::path::Path;

use minivp_core::error::Result;
use minivp_core::metrics::train_probes;

use crate::bundle::load_bundle;
use crate::config::{write_manifest, ProbesCommandConfig};

pub fn cmd_train_probes(
    cfg: &ProbesCommandConfig,
    out: &Path,
    seed: Option<u64>,
    fast: bool,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let bundle = load_bundle(&cfg.dataset)?;
    std::fs::create_dir_all(out)?;
    let probes = train_probes(
        &bundle.train,
        &bundle.test,
        bundle.spec.kind.as_str(),
        bundle.spec.seed,
        &cfg.train,
        cfg.seed,
    )?;
    probes.save(&out.join("probes.mvpt"))?;
    write_manifest(out, "train-probes", cfg.seed, fast, &cfg)?;
    Ok(())
}
