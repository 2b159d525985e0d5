//! Command configs, experiment protocol defaults, run manifests, and the
//! report row shared by eval, sweep, and ablate.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use minivp_core::data::{DataKind, DatasetSpec};
use minivp_core::error::{Error, Result};
use minivp_core::metrics::ProbeTrainConfig;
use minivp_core::models::{ModelConfig, ModelKind};
use minivp_core::objective::TrainConfig;

/// Videos in the held-out split unless the config says otherwise.
pub const DEFAULT_TEST_VIDEOS: usize = 256;
/// Samples per video for stochastic models.
pub const DEFAULT_SAMPLES: usize = 100;
/// `--fast` drops the sample count here and is recorded in metadata.
pub const FAST_SAMPLES: usize = 20;
/// `--fast` caps optimizer steps.
pub const FAST_MAX_STEPS: usize = 300;
/// `--fast` caps evaluated videos.
pub const FAST_MAX_EVAL_VIDEOS: usize = 64;
/// Decoder capacity cap that keeps the sweep desk-scale.
pub const MAX_M: usize = 3;
/// Default capacity grid for sweeps.
pub const DEFAULT_GRID: [(usize, usize); 9] = [
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 1),
    (2, 2),
    (2, 3),
    (3, 1),
    (3, 2),
    (3, 3),
];
/// Biggest capacity point: default, and the opt-in wider encoder.
pub const BIGGEST: (usize, usize) = (3, 3);
pub const BIGGEST_WIDE: (usize, usize) = (5, 3);

/// Context/prediction protocol tied to the dataset family.
#[derive(Debug, Clone, Copy)]
pub struct Protocol {
    pub context: usize,
    pub train_predict: usize,
    pub eval_horizon: usize,
    /// Context grid for the context ablation.
    pub ablate_contexts: [usize; 3],
    /// Horizon used by the context ablation.
    pub ablate_horizon: usize,
}

pub fn protocol(kind: DataKind) -> Protocol {
    match kind {
        DataKind::PushAction => Protocol {
            context: 2,
            train_predict: 10,
            eval_horizon: 18,
            ablate_contexts: [2, 4, 8],
            ablate_horizon: 12,
        },
        DataKind::BounceDet | DataKind::BounceStoch => Protocol {
            context: 5,
            train_predict: 10,
            eval_horizon: 25,
            ablate_contexts: [2, 5, 10],
            ablate_horizon: 20,
        },
    }
}

fn default_test_count() -> usize {
    DEFAULT_TEST_VIDEOS
}

/// gen-data: the dataset spec plus the held-out split size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataConfig {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
}

/// train-probes: dataset directory and probe budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbesCommandConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub train: ProbeTrainConfig,
    #[serde(default)]
    pub seed: u64,
}

/// train: dataset directory, model, and optimizer settings. The model's
/// context and prediction lengths are the single source of truth; the train
/// window follows them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCommandConfig {
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// eval: checkpoint, probes, and sampling settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCommandConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub probes: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Defaults to the dataset protocol horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Cap on evaluated videos; all test videos when absent.
    #[serde(default)]
    pub eval_videos: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    On,
    Off,
    Both,
}

impl SkipMode {
    pub fn variants(self) -> Vec<bool> {
        match self {
            SkipMode::On => vec![true],
            SkipMode::Off => vec![false],
            SkipMode::Both => vec![false, true],
        }
    }
}

fn default_replicates() -> usize {
    3
}

fn default_z_dim() -> usize {
    8
}

fn default_kinds() -> Vec<ModelKind> {
    vec![ModelKind::Cnn, ModelKind::Lstm, ModelKind::Svg]
}

fn default_skip_on() -> SkipMode {
    SkipMode::On
}

/// sweep: the experiment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dataset: PathBuf,
    pub probes: PathBuf,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ModelKind>,
    /// (K, M) points; the default grid when absent.
    #[serde(default)]
    pub capacity: Option<Vec<(usize, usize)>>,
    #[serde(default = "default_skip_on")]
    pub skip: SkipMode,
    /// Context lengths; the protocol default when absent.
    #[serde(default)]
    pub contexts: Option<Vec<usize>>,
    /// Adds the wider (K=5, M=3) point to the grid.
    #[serde(default)]
    pub wide_biggest: bool,
    pub train: TrainConfig,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub eval_videos: Option<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblateMode {
    Skip,
    Context,
}

fn default_svg_only() -> Vec<ModelKind> {
    vec![ModelKind::Svg]
}

fn default_capacity_one() -> (usize, usize) {
    (1, 1)
}

/// ablate: skip pairing or the context grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateConfig {
    pub dataset: PathBuf,
    pub probes: PathBuf,
    pub mode: AblateMode,
    #[serde(default = "default_svg_only")]
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_capacity_one")]
    pub capacity: (usize, usize),
    pub train: TrainConfig,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub eval_videos: Option<usize>,
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_strip_videos() -> usize {
    3
}

/// sample: qualitative strips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCommandConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub probes: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_strip_videos")]
    pub videos: usize,
    #[serde(default)]
    pub seed: u64,
}

/// One result line; also the sweep and ablate row schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: String,
    pub k: usize,
    pub m: usize,
    pub skip: bool,
    pub context: usize,
    pub params: usize,
    pub fvd: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub cosine: f64,
    pub seed: u64,
    pub wall_s: f64,
    /// "ok" or the failure message; partial failures keep their row.
    pub status: String,
}

pub const REPORT_ROW_HEADER: &str =
    "kind,k,m,skip,context,params,fvd,psnr,ssim,cosine,seed,wall_s,status";

impl ReportRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.k,
            self.m,
            self.skip,
            self.context,
            self.params,
            self.fvd,
            self.psnr,
            self.ssim,
            self.cosine,
            self.seed,
            self.wall_s,
            self.status.replace([',', '\n'], ";")
        )
    }
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = String::from(REPORT_ROW_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// FNV-1a over the canonical point descriptor; replicate seeds never collide
/// across grid points by construction of the descriptor string.
pub fn derive_point_seed(
    master: u64,
    kind: &str,
    k: usize,
    m: usize,
    skip: bool,
    context: usize,
    replicate: usize,
) -> u64 {
    let desc = format!("{master}/{kind}/k{k}/m{m}/skip{skip}/ctx{context}/rep{replicate}");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in desc.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Every command writes one of these next to its outputs; feeding the file
/// back through `--config` reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub seed: u64,
    pub fast: bool,
    pub config: serde_json::Value,
}

pub fn build_id() -> &'static str {
    env!("MINIVP_BUILD_ID")
}

pub fn write_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    fast: bool,
    config: &C,
) -> Result<()> {
    let m = RunManifest {
        command: command.to_string(),
        build: build_id().to_string(),
        seed,
        fast,
        config: serde_json::to_value(config)?,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&m)?,
    )?;
    Ok(())
}

/// Loads a command config, accepting either the raw config or a manifest
/// from an earlier run of the same command.
pub fn load_config<T: DeserializeOwned>(
    path: &Path,
    command: &str,
) -> Result<(T, Option<u64>, Option<bool>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{} is not valid JSON: {e}", path.display())))?;
    if v.get("command").is_some() && v.get("config").is_some() {
        let m: RunManifest = serde_json::from_value(v)
            .map_err(|e| Error::config(format!("malformed manifest: {e}")))?;
        if m.command != command {
            return Err(Error::config(format!(
                "manifest records command {}, expected {command}",
                m.command
            )));
        }
        let cfg = serde_json::from_value(m.config)
            .map_err(|e| Error::config(format!("malformed {command} config: {e}")))?;
        Ok((cfg, Some(m.seed), Some(m.fast)))
    } else {
        let cfg = serde_json::from_value(v)
            .map_err(|e| Error::config(format!("malformed {command} config: {e}")))?;
        Ok((cfg, None, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_seeds_are_distinct_and_stable() {
        let a = derive_point_seed(7, "svg", 1, 1, true, 5, 0);
        let b = derive_point_seed(7, "svg", 1, 1, true, 5, 1);
        let c = derive_point_seed(7, "svg", 2, 1, true, 5, 0);
        let d = derive_point_seed(8, "svg", 1, 1, true, 5, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_point_seed(7, "svg", 1, 1, true, 5, 0));
    }

    #[test]
    fn protocols_match_dataset_families() {
        let p = protocol(DataKind::PushAction);
        assert_eq!((p.context, p.train_predict, p.eval_horizon), (2, 10, 18));
        assert_eq!(p.ablate_contexts, [2, 4, 8]);
        assert_eq!(p.ablate_horizon, 12);
        let b = protocol(DataKind::BounceStoch);
        assert_eq!((b.context, b.train_predict, b.eval_horizon), (5, 10, 25));
        assert_eq!(b.ablate_contexts, [2, 5, 10]);
        assert_eq!(b.ablate_horizon, 20);
    }

    #[test]
    fn manifest_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenDataConfig {
            spec: minivp_core::data::default_spec(DataKind::BounceDet, 5),
            test_count: 12,
        };
        write_manifest(dir.path(), "gen-data", 5, true, &cfg).unwrap();
        let path = dir.path().join("manifest.json");
        let (loaded, seed, fast): (GenDataConfig, _, _) =
            load_config(&path, "gen-data").unwrap();
        assert_eq!(seed, Some(5));
        assert_eq!(fast, Some(true));
        assert_eq!(loaded.test_count, 12);
        assert_eq!(
            serde_json::to_string(&loaded).unwrap(),
            serde_json::to_string(&cfg).unwrap()
        );
        // Wrong command is rejected.
        assert!(load_config::<GenDataConfig>(&path, "train").is_err());
    }

    #[test]
    fn report_row_csv_escapes_status() {
        let r = ReportRow {
            kind: "svg".into(),
            k: 1,
            m: 1,
            skip: true,
            context: 5,
            params: 10,
            fvd: 1.0,
            psnr: 2.0,
            ssim: 0.5,
            cosine: 0.9,
            seed: 3,
            wall_s: 0.1,
            status: "bad, very\nbad".into(),
        };
        let line = r.csv_line();
        assert_eq!(line.matches(',').count(), REPORT_ROW_HEADER.matches(',').count());
        assert!(line.ends_with("bad; very;bad"));
    }

    #[test]
    fn skip_modes_expand() {
        assert_eq!(SkipMode::On.variants(), vec![true]);
        assert_eq!(SkipMode::Off.variants(), vec![false]);
        assert_eq!(SkipMode::Both.variants(), vec![false, true]);
    }
}
