//! Declarative experiment configuration (TOML).

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errornet::{AblationMode, Precision, SingleInput, TrainConfig, Wiring};
use crate::fidelity::FidelityWeight;
use crate::guide::{GuideKind, GuideSolver};
use crate::sampling::{make_mask, MaskPattern, SamplingMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Directory written by `decn phantoms`; generated on the fly when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 200,
            height: 64,
            width: 64,
            seed: 1,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub pattern: MaskPattern,
    pub ratio: f64,
    /// Defaults to the pattern's usual centre fraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            pattern: MaskPattern::Cartesian1D,
            ratio: 0.3,
            center_fraction: None,
            seed: 7,
        }
    }
}

impl MaskSpec {
    pub fn build(&self, height: usize, width: usize) -> Result<SamplingMask> {
        let cf = self.center_fraction.unwrap_or_else(|| self.pattern.default_center_fraction());
        make_mask(self.pattern, height, width, self.ratio, cf, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideSpec {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub identifier: Option<String>,
    #[serde(flatten)]
    pub kind: GuideKind,
}

impl Default for GuideSpec {
    fn default() -> Self {
        Self {
            identifier: None,
            kind: GuideKind::default(),
        }
    }
}

impl GuideSpec {
    pub fn solver(&self) -> GuideSolver {
        let solver = GuideSolver::new(self.kind.clone());
        match &self.identifier {
            Some(id) => solver.with_identifier(id.clone()),
            None => solver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcnetSpec {
    pub depth: usize,
    pub features: usize,
    pub ablation: AblationMode,
    pub single_input: SingleInput,
    /// GEMM arithmetic while training; inference always runs in `f64`.
    pub precision: Precision,
}

impl Default for EcnetSpec {
    fn default() -> Self {
        Self {
            depth: 9,
            features: 32,
            ablation: AblationMode::Decn,
            single_input: SingleInput::Guide,
            precision: Precision::F32,
        }
    }
}

impl EcnetSpec {
    pub fn wiring(&self) -> Wiring {
        Wiring {
            ablation: self.ablation,
            single_input: self.single_input,
        }
    }
}

fn default_guide_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        iterations: 1000,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Fidelity weight of the final fusion.
    pub alpha: f64,
    pub dataset: DatasetSpec,
    pub mask: MaskSpec,
    pub guide: GuideSpec,
    pub ecnet: EcnetSpec,
    pub train: TrainConfig,
    /// Used only when the guide is a trainable cascade.
    #[serde(default = "default_guide_train")]
    pub guide_train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            alpha: crate::fidelity::DEFAULT_ALPHA,
            dataset: DatasetSpec::default(),
            mask: MaskSpec::default(),
            guide: GuideSpec::default(),
            ecnet: EcnetSpec::default(),
            train: TrainConfig {
                iterations: 5000,
                ..TrainConfig::default()
            },
            guide_train: default_guide_train(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Sets `dotted.key` in a TOML table, creating intermediate tables.
fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| config_err(format!("empty key in `{key}`")))?;
    let mut table = root;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Completes partial `[train]` and `[guide_train]` tables from the experiment
/// defaults, which differ from `TrainConfig::default()` in iteration count
/// and learning rate.
fn fill_training_defaults(root: &mut toml::Table) {
    let defaults = ExperimentConfig::default();
    for (key, base) in [("train", &defaults.train), ("guide_train", &defaults.guide_train)] {
        let Some(toml::Value::Table(given)) = root.get(key) else { continue };
        let toml::Value::Table(mut merged) = toml::Value::try_from(base).expect("train config serializes") else {
            unreachable!("struct serializes to a table")
        };
        merged.extend(given.clone());
        root.insert(key.to_string(), toml::Value::Table(merged));
    }
}

/// Parses the right-hand side of `--set key=value`: a TOML literal when it
/// parses as one, a bare string otherwise.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides, then validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for (k, v) in overrides {
            set_dotted(&mut table, k, parse_override_value(v))?;
        }
        fill_training_defaults(&mut table);
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        FidelityWeight::new(self.alpha).map_err(wrap)?;
        if self.dataset.count < 2 || self.dataset.height == 0 || self.dataset.width == 0 {
            return Err(config_err("dataset needs at least 2 images of positive size"));
        }
        if !(self.mask.ratio > 0.0 && self.mask.ratio <= 1.0) {
            return Err(config_err(format!("mask ratio {} outside (0, 1]", self.mask.ratio)));
        }
        if self.ecnet.depth < 3 || self.ecnet.features == 0 {
            return Err(config_err("ecnet needs depth >= 3 and at least one feature map"));
        }
        self.guide.kind.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.guide_train.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn fidelity_weight(&self) -> FidelityWeight {
        FidelityWeight::new(self.alpha).expect("validated")
    }

    /// FNV-1a 64 of the canonical serialization with `output_dir` blanked,
    /// so the same experiment in two directories has one fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let mut h = FnvHasher::default();
        h.write(canonical.to_toml().as_bytes());
        h.finish()
    }
}
