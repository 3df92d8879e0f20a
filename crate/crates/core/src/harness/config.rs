//! Declarative experiment configuration.
//!
//! A config is one TOML document. Any key can be overridden with a dotted
//! path and a TOML literal, e.g. `objective.alpha=0.3` or
//! `kernel.sigma="median"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balancing::{AnchorMode, BalanceConfig, HingeMode};
use crate::data::{SplitSpec, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::objectives::{ObjectiveKind, DEFAULT_FREQ_WEIGHT};

/// Learning rates searched over in the tuning protocol.
pub const LR_GRID: [f64; 7] = [5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4, 5e-5];
/// Margins searched over in the tuning protocol.
pub const MARGIN_GRID: [f64; 5] = [0.0005, 0.001, 0.005, 0.01, 0.05];
/// Inclusive range searched for the number of balancing functions.
pub const TOP_K_RANGE: (usize, usize) = (1, 6);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub history: usize,
    pub horizon: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSpec,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic {
        #[serde(flatten)]
        kind: SyntheticKind,
        length: usize,
        channels: usize,
        /// Defaults to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        date_column: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Mse,
    FreqL1,
    KmbDf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveName,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub margin_c: f64,
    #[serde(default)]
    pub anchor_mode: AnchorMode,
    #[serde(default)]
    pub hinge_mode: HingeMode,
    #[serde(default = "default_freq_weight")]
    pub freq_weight: f64,
}

fn default_top_k() -> usize {
    1
}
fn default_freq_weight() -> f64 {
    DEFAULT_FREQ_WEIGHT
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Named(BandwidthRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median heuristic over the first training batch.
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sigma: Bandwidth,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

fn default_degree() -> u32 {
    2
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: KernelFamily::Exponential,
            sigma: Bandwidth::Named(BandwidthRule::Median),
            degree: default_degree(),
            scale: None,
            offset: None,
        }
    }
}

impl KernelConfig {
    pub fn needs_median(&self) -> bool {
        self.family.is_distance_based() && matches!(self.sigma, Bandwidth::Named(BandwidthRule::Median))
    }

    /// The concrete kernel once the bandwidth is known.
    pub fn resolve(&self, median_sigma: Option<f64>) -> Result<KernelSpec> {
        let sigma = match self.sigma {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Named(BandwidthRule::Median) => match median_sigma {
                Some(s) => s,
                None if !self.family.is_distance_based() => 1.0,
                None => {
                    return Err(Error::Config("median bandwidth has not been computed".into()));
                }
            },
        };
        let spec = KernelSpec {
            family: self.family,
            sigma,
            degree: self.degree,
            scale: self.scale,
            offset: self.offset,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ObjectiveConfig {
    pub fn kmb_df(alpha: f64, top_k: usize, margin_c: f64) -> Self {
        ObjectiveConfig {
            kind: ObjectiveName::KmbDf,
            alpha,
            top_k,
            margin_c,
            anchor_mode: AnchorMode::default(),
            hinge_mode: HingeMode::default(),
            freq_weight: DEFAULT_FREQ_WEIGHT,
        }
    }

    pub fn resolve(&self, kernel: KernelSpec) -> ObjectiveKind {
        match self.kind {
            ObjectiveName::Mse => ObjectiveKind::Mse,
            ObjectiveName::FreqL1 => ObjectiveKind::FreqL1 {
                freq_weight: self.freq_weight,
            },
            ObjectiveName::KmbDf => ObjectiveKind::KmbDf(
                BalanceConfig::new(self.alpha, self.top_k, self.margin_c, kernel)
                    .with_modes(self.anchor_mode, self.hinge_mode),
            ),
        }
    }
}

impl Default for ExperimentConfig {
    /// AR(1) with φ = 0.9, two channels, 5000 rows; H = 24, T = 12; the
    /// balancing objective with α = 0.3, C = 0.001, K = 3 and the
    /// exponential kernel at the median bandwidth.
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: None,
            history: 24,
            horizon: 12,
            lr: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            data: DataConfig::Synthetic {
                kind: SyntheticKind::Ar {
                    coeffs: vec![0.9],
                    noise_std: 1.0,
                },
                length: 5000,
                channels: 2,
                seed: None,
            },
            split: SplitSpec::default(),
            objective: ObjectiveConfig::kmb_df(0.3, 3, 0.001),
            kernel: KernelConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// A copy with `key.path=literal` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_toml_with_overrides(&self.to_toml_string()?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("history and horizon must be positive".into()));
        }
        if let DataConfig::Synthetic { length, .. } = &self.data {
            if *length <= self.history + self.horizon {
                return Err(Error::Config(format!(
                    "synthetic length {length} must exceed H + T = {}",
                    self.history + self.horizon
                )));
            }
        }
        let kernel = self.kernel.resolve(Some(1.0))?;
        let objective = self.objective.resolve(kernel);
        objective.validate()?;
        if let ObjectiveKind::KmbDf(cfg) = &objective {
            if self.batch_size < cfg.top_k {
                return Err(Error::Config(format!(
                    "batch_size {} is smaller than top_k {}",
                    self.batch_size, cfg.top_k
                )));
            }
            if self.kernel.needs_median() && self.batch_size < 2 {
                return Err(Error::Config("median bandwidth needs batch_size >= 2".into()));
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.data {
            DataConfig::Synthetic {
                kind,
                length,
                channels,
                seed,
            } => Some(SyntheticSpec {
                kind: kind.clone(),
                length: *length,
                channels: *channels,
                seed: seed.unwrap_or(self.seed),
            }),
            DataConfig::Csv { .. } => None,
        }
    }
}

/// Applies one `dotted.key=literal` override. The literal is parsed as a
/// TOML value; anything that does not parse is taken as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let raw = raw.trim();
    let value = parse_literal(raw);
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {path:?} crosses a non-table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
history = 24
horizon = 12
lr = 0.001
batch_size = 32
max_epochs = 20
patience = 15

[data]
source = "synthetic"
kind = "ar"
coeffs = [0.9]
noise_std = 1.0
length = 5000
channels = 2

[split]
boundaries = { mode = "fractions", train = 0.7, val = 0.1, test = 0.2 }
convention = "extended"
standardize = true

[objective]
kind = "kmb_df"
alpha = 0.3
top_k = 3
margin_c = 0.001
anchor_mode = "forecast"
hinge_mode = "canonical"

[kernel]
family = "exponential"
sigma = "median"
"#;

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.objective.kind, ObjectiveName::KmbDf);
        assert_eq!(cfg.kernel.sigma, Bandwidth::Named(BandwidthRule::Median));
        assert!(cfg.kernel.needs_median());
        assert_eq!(cfg.synthetic_spec().unwrap().seed, 3);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            SAMPLE,
            &[
                "objective.alpha=0".into(),
                "kernel.sigma=1.5".into(),
                "objective.hinge_mode=shifted".into(),
                "objective.top_k=5".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.objective.alpha, 0.0);
        assert_eq!(cfg.kernel.sigma, Bandwidth::Fixed(1.5));
        assert_eq!(cfg.objective.hinge_mode, HingeMode::Shifted);
        assert_eq!(cfg.objective.top_k, 5);
        assert!(ExperimentConfig::from_toml_with_overrides(SAMPLE, &["novalue".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(SAMPLE, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn validation() {
        let base = ExperimentConfig::default();
        for bad in [
            "lr=0",
            "patience=0",
            "batch_size=2",
            "objective.alpha=1.5",
            "objective.margin_c=-1",
            "kernel.sigma=-1.0",
            "objective.top_k=0",
            "data.length=30",
        ] {
            assert!(base.with_overrides(&[bad.to_string()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn resolve_kernel() {
        let k = KernelConfig::default();
        assert!(k.resolve(None).is_err());
        assert_eq!(k.resolve(Some(2.0)).unwrap().sigma, 2.0);
        let lin = KernelConfig {
            family: KernelFamily::Linear,
            ..KernelConfig::default()
        };
        assert!(lin.resolve(None).is_ok());
    }
}
