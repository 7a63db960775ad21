//! Experiment configuration file (JSON).
//!
//! Every field is optional except one of `dataset` / `synthetic`; omitted
//! fields take the default hyperparameters. [`ExperimentConfig::resolve`]
//! fills in everything, and the resolved form is what manifests record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{Activation, BackboneConfig};
use crate::dataio::{gen_synthetic, load_csv, RawSeries, SplitProtocol, SyntheticSpec};
use crate::error::{Result, StairError};
use crate::norm::NormConfig;
use crate::residual::ResidualConfig;
use crate::train::{StageSettings, TrainSettings};

pub const DATA_DIR_ENV: &str = "STAIR_DATA_DIR";
pub const STANDARD_HORIZONS: [usize; 4] = [96, 192, 336, 720];

/// Temporal-mapping shape without the window sizes, which vary per horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub layers: usize,
    #[serde(default)]
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_dropout() -> f64 {
    0.1
}

impl BackboneSpec {
    pub fn linear() -> Self {
        Self {
            layers: 1,
            hidden: 0,
            activation: Activation::None,
            dropout: default_dropout(),
        }
    }

    pub fn mlp(layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden,
            activation: Activation::Relu,
            dropout: default_dropout(),
        }
    }

    pub fn at(&self, lookback: usize, horizon: usize) -> BackboneConfig {
        BackboneConfig {
            layers: self.layers,
            hidden: self.hidden,
            activation: self.activation,
            dropout: self.dropout,
            lookback,
            horizon,
        }
    }

    pub fn label(&self) -> String {
        if self.layers == 1 {
            "linear".into()
        } else {
            format!("mlp-{}x{}", self.layers, self.hidden)
        }
    }

    /// Named capacity presets: `linear`, `mlp-<layers>x<hidden>`, or a
    /// benchmark name mapped to the capacity chosen for it.
    pub fn preset(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "linear" | "etth1" | "etth2" | "exchange" | "exchange_rate" => Some(Self::linear()),
            "mlp" | "ettm1" | "ettm2" | "weather" => Some(Self::mlp(2, 512)),
            "traffic" | "solar" | "solar_al" | "solar-energy" => Some(Self::mlp(4, 512)),
            "electricity" | "ecl" => Some(Self::mlp(4, 1024)),
            _ => {
                let rest = lower.strip_prefix("mlp-")?;
                let (l, h) = rest.split_once('x')?;
                Some(Self::mlp(l.parse().ok()?, h.parse().ok()?))
            }
        }
    }
}

fn default_split_for(name: &str) -> SplitProtocol {
    let lower = name.to_ascii_lowercase();
    if lower.starts_with("etth") {
        SplitProtocol::EttHourly
    } else if lower.starts_with("ettm") {
        SplitProtocol::EttMinutely
    } else {
        SplitProtocol::Ratio712
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Per-stage optimizer and schedule fields; unset ones keep the stage's
/// own defaults (stage 1 lr 1e-3, stages 2 and 3 lr 1e-5).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

impl StageOverride {
    pub fn lr(lr: f64) -> Self {
        Self { lr: Some(lr), ..Self::default() }
    }

    pub fn apply(&self, mut base: StageSettings) -> StageSettings {
        let o = &mut base.optim;
        o.lr = self.lr.unwrap_or(o.lr);
        o.beta1 = self.beta1.unwrap_or(o.beta1);
        o.beta2 = self.beta2.unwrap_or(o.beta2);
        o.eps = self.eps.unwrap_or(o.eps);
        o.weight_decay = self.weight_decay.unwrap_or(o.weight_decay);
        o.clip_norm = self.clip_norm.unwrap_or(o.clip_norm);
        base.epochs = self.epochs.unwrap_or(base.epochs);
        base.patience = self.patience.unwrap_or(base.patience);
        base
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in reports and output paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// CSV path; relative paths are resolved against `STAIR_DATA_DIR` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitProtocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<StageOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<StageOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage3: Option<StageOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_predictions: Option<bool>,
}

/// A configuration with every field decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub split: SplitProtocol,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub backbone: BackboneSpec,
    pub norm: NormConfig,
    pub batch_size: usize,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    pub anchor: f64,
    pub stage3: StageSettings,
    pub residual: ResidualConfig,
    pub seed: u64,
    pub precision: Precision,
    pub save_predictions: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| StairError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| StairError::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let (dataset, synthetic) = match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(StairError::Config("set either `dataset` or `synthetic`, not both".into()))
            }
            (None, None) => return Err(StairError::Config("one of `dataset` or `synthetic` is required".into())),
            (d, s) => (d.clone(), s.clone()),
        };
        let name = match (&self.name, &dataset) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            (None, None) => "synthetic".into(),
        };
        let backbone = match (&self.backbone, &self.preset) {
            (Some(b), _) => *b,
            (None, Some(p)) => BackboneSpec::preset(p)
                .ok_or_else(|| StairError::Config(format!("unknown preset `{p}`")))?,
            (None, None) => BackboneSpec::preset(&name).unwrap_or_else(BackboneSpec::linear),
        };
        let split = self.split.unwrap_or_else(|| {
            if synthetic.is_some() {
                SplitProtocol::Ratio712
            } else {
                default_split_for(&name)
            }
        });
        let lookback = self
            .lookback
            .or(synthetic.as_ref().map(|s| s.lookback))
            .unwrap_or(96);
        let horizons = self.horizons.clone().unwrap_or_else(|| match &synthetic {
            Some(s) => vec![s.horizon],
            None => STANDARD_HORIZONS.to_vec(),
        });
        let resolved = ResolvedConfig {
            name,
            dataset,
            synthetic,
            split,
            lookback,
            horizons,
            backbone,
            norm: self.norm.unwrap_or_default(),
            batch_size: self.batch_size.unwrap_or(64),
            stage1: self.stage1.unwrap_or_default().apply(StageSettings::with_lr(1e-3)),
            stage2: self.stage2.unwrap_or_default().apply(StageSettings::with_lr(1e-5)),
            anchor: self.anchor.unwrap_or(1e-4),
            stage3: self.stage3.unwrap_or_default().apply(StageSettings::with_lr(1e-5)),
            residual: self.residual.unwrap_or_default(),
            seed: self.seed.unwrap_or(2026),
            precision: self.precision.unwrap_or_default(),
            save_predictions: self.save_predictions.unwrap_or(false),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(StairError::Config("at least one horizon is required".into()));
        }
        if self.lookback == 0 || self.horizons.contains(&0) {
            return Err(StairError::Config("look-back and horizons must be positive".into()));
        }
        for &h in &self.horizons {
            self.train_settings(h).validate()?;
        }
        Ok(())
    }

    pub fn train_settings(&self, horizon: usize) -> TrainSettings {
        TrainSettings {
            backbone: self.backbone.at(self.lookback, horizon),
            norm: self.norm,
            batch_size: self.batch_size,
            stage1: self.stage1,
            stage2: self.stage2,
            anchor: self.anchor,
            stage3: self.stage3,
            residual: self.residual,
        }
    }

    /// Loads the CSV (honouring `STAIR_DATA_DIR`) or generates the series.
    pub fn load_series(&self) -> Result<RawSeries> {
        match (&self.dataset, &self.synthetic) {
            (Some(path), _) => load_csv(resolve_data_path(path)),
            (None, Some(spec)) => gen_synthetic(spec),
            (None, None) => Err(StairError::Config("no data source".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = PathBuf::from(dir).join(path);
            if candidate.exists() || !path.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}
