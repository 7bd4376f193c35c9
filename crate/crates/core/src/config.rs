//! Pipeline configuration: TOML files layered over a named preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchor::AnchorConfig;
use crate::error::{Error, Result};
use crate::ingest::RecordFormat;
use crate::pretrain::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Bibliographic records to render; synthesized when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    pub records_format: RecordFormat,
    /// Style file; the built-in styles when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub styles: Option<PathBuf>,
    /// Records to synthesize when `records` is absent.
    pub synthetic_records: usize,
    pub generated: usize,
    pub task_train: usize,
    pub validation: usize,
    pub test: usize,
    pub styles_per_record: usize,
    pub balance: bool,
    /// Probability of collapsing each rendered delimiter to a space.
    pub delimiter_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs for the basic labeler that scores anchors.
    pub basic_epochs: usize,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorStage {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub class_weight: f64,
    pub holdout_fraction: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_fraction: f64,
    pub tied_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub significance_trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: String,
    pub seed: u64,
    /// Masking strategy for a single pipeline run.
    pub strategy: StrategyKind,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub finetune: FinetuneConfig,
    pub anchor: AnchorConfig,
    pub selector: SelectorStage,
    pub pretrain: PretrainStage,
    pub ablation: AblationConfig,
}

impl PipelineConfig {
    /// Small enough to run the full ablation on one CPU core.
    pub fn desk() -> Self {
        PipelineConfig {
            preset: "desk".into(),
            seed: 7,
            strategy: StrategyKind::AnchorPlusRandom,
            data: DataConfig {
                records: None,
                records_format: RecordFormat::Lines,
                styles: None,
                synthetic_records: 6250,
                generated: 5000,
                task_train: 500,
                validation: 250,
                test: 500,
                styles_per_record: 1,
                balance: false,
                delimiter_drop: 0.5,
            },
            model: ModelConfig {
                dim: 32,
                hidden: 32,
                max_len: 96,
                vocab_size: 1000,
            },
            finetune: FinetuneConfig {
                learning_rate: 5e-3,
                batch_size: 32,
                epochs: 20,
                basic_epochs: 2,
                clip_norm: 5.0,
            },
            anchor: AnchorConfig::default(),
            selector: SelectorStage {
                learning_rate: 5e-3,
                epochs: 8,
                batch_size: 16,
                class_weight: 4.0,
                holdout_fraction: 0.2,
                threshold: 0.5,
            },
            pretrain: PretrainStage {
                steps: 1000,
                batch_size: 32,
                learning_rate: 2e-3,
                mask_fraction: 0.15,
                tied_head: false,
            },
            ablation: AblationConfig {
                strategies: StrategyKind::ALL.to_vec(),
                seeds: vec![1, 2, 3, 4, 5],
                significance_trials: 10_000,
            },
        }
    }

    /// Published hyperparameters at full corpus scale.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.preset = "full".into();
        c.data.synthetic_records = 101_250;
        c.data.generated = 100_000;
        c.model = ModelConfig {
            dim: 128,
            hidden: 128,
            max_len: 128,
            vocab_size: 8000,
        };
        c.finetune.learning_rate = 5e-5;
        c.finetune.basic_epochs = 20;
        c.pretrain.steps = 20_000;
        c.pretrain.learning_rate = 5e-5;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Invalid(format!(
                "unknown preset `{other}` (expected `desk` or `full`)"
            ))),
        }
    }

    /// Parse TOML text over its preset (default `desk`). Relative paths are
    /// resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let overrides: toml::Table = text.parse()?;
        let preset = match overrides.get("preset") {
            None => "desk",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Invalid("`preset` must be a string".into())),
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)?)
            .map_err(|e| Error::Invalid(format!("cannot serialize preset: {e}")))?;
        merge(&mut merged, overrides);
        let mut cfg: PipelineConfig = toml::Value::Table(merged).try_into()?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("cannot serialize config: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.records, &mut self.data.styles]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        for p in [&self.data.records, &self.data.styles]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return bad(format!("path {} does not exist", p.display()));
            }
        }
        let d = &self.data;
        if d.task_train == 0 || d.validation == 0 || d.test == 0 || d.generated == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&d.delimiter_drop) {
            return bad(format!(
                "delimiter_drop must be in [0, 1], got {}",
                d.delimiter_drop
            ));
        }
        if d.styles_per_record == 0 {
            return bad("styles_per_record must be positive".into());
        }
        let m = &self.model;
        if m.dim == 0 || m.hidden == 0 || m.max_len < 2 || m.vocab_size < 8 {
            return bad("model sizes out of range".into());
        }
        let positive = [
            ("finetune.learning_rate", self.finetune.learning_rate),
            ("selector.learning_rate", self.selector.learning_rate),
            ("pretrain.learning_rate", self.pretrain.learning_rate),
            ("finetune.clip_norm", self.finetune.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.finetune.basic_epochs == 0 {
            return bad("finetune.basic_epochs must be positive".into());
        }
        if self.finetune.batch_size == 0
            || self.selector.batch_size == 0
            || self.pretrain.batch_size == 0
        {
            return bad("batch sizes must be positive".into());
        }
        if !(self.pretrain.mask_fraction > 0.0 && self.pretrain.mask_fraction < 1.0) {
            return bad(format!(
                "mask_fraction must be in (0, 1), got {}",
                self.pretrain.mask_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.selector.holdout_fraction)
            || !(0.0..1.0).contains(&self.selector.threshold)
        {
            return bad("selector holdout_fraction and threshold must be in [0, 1)".into());
        }
        if self.selector.class_weight < 0.0 {
            return bad("selector class_weight must be non-negative".into());
        }
        self.anchor.validate()?;
        if self.ablation.seeds.is_empty() || self.ablation.strategies.is_empty() {
            return bad("ablation needs at least one seed and one strategy".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
