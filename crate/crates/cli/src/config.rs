use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use semi3d::detector::{ClusterConfig, OracleConfig};
use semi3d::eval::EvalConfig;
use semi3d::hpca::AugmentParams;
use semi3d::selftrain::SelfTrainConfig;
use semi3d::synth::SynthParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Cluster,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub cluster: ClusterConfig,
    pub oracle: OracleConfig,
}

/// The `selftrain` command's configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// KITTI-layout dataset root.
    pub dataset: PathBuf,
    /// Split manifest.
    pub split: PathBuf,
    /// Optional held-out dataset evaluated with the final model.
    #[serde(default)]
    pub val_dataset: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub selftrain: SelfTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub detector: DetectorSection,
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        bail!("unsupported schema_version {v}; expected {SCHEMA_VERSION}");
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses, resolves paths against the config's directory, applies the
    /// seed override and checks the referenced paths.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        check_version(cfg.schema_version)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = resolve(base, &cfg.dataset);
        cfg.split = resolve(base, &cfg.split);
        cfg.val_dataset = cfg.val_dataset.map(|p| resolve(base, &p));
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.selftrain.seed = cfg.seed;
        cfg.detector.oracle.seed = cfg.seed;
        for p in [Some(&cfg.dataset), Some(&cfg.split), cfg.val_dataset.as_ref()].into_iter().flatten() {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        if cfg.detector.cluster.num_classes != cfg.selftrain.num_classes
            || cfg.eval.iou_thresholds.len() != cfg.selftrain.num_classes
        {
            bail!("detector, eval and selftrain disagree on the number of classes");
        }
        if !cfg.eval.iou_thresholds.iter().all(|t| *t > 0.0 && *t <= 1.0) {
            bail!("IoU thresholds must lie in (0, 1]");
        }
        Ok(cfg)
    }

    /// Stable identifier of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(format!("{:016x}", semi3d::seed::derive_seed(0, &[&text])))
    }
}

/// The `synth` command's configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub schema_version: u32,
    pub scenes: usize,
    #[serde(default)]
    pub params: SynthParams,
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: SynthConfig =
            serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        check_version(cfg.schema_version)?;
        Ok(cfg)
    }
}

/// Loads a bare JSON document of `T` (eval or augment parameters).
pub fn load_section<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_augment(path: Option<&Path>) -> Result<AugmentParams> {
    let params = match path {
        Some(p) => load_section(p)?,
        None => AugmentParams::default(),
    };
    params.validate()?;
    Ok(params)
}
