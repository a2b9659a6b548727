//! Run configuration: TOML file plus dotted-path overrides.

use std::path::{Path, PathBuf};

use koppa_core::buffer::Selection;
use koppa_core::model::{LossWeights, PredictionRule, ScoreTarget};
use koppa_core::optimizer::AdamConfig;
use koppa_core::{ModelDims, Similarity, TrainConfig, TrainingMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("override {key}: {message}")]
    OverridePath { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Koppa,
    Coda,
    JustCe,
    JustOva,
    CePlusOva,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Synthetic,
    Csv,
    Kpds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub path: Option<PathBuf>,
    pub tasks: usize,
    pub classes_per_task: usize,
    /// Synthetic only.
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            path: None,
            tasks: 5,
            classes_per_task: 2,
            dim: 16,
            samples_per_class: 100,
            separation: 10.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    Cosine,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub query: usize,
    pub hidden: usize,
    pub feature: usize,
    pub prompt: usize,
    pub prompts_per_task: usize,
    pub similarity: SimilarityKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            query: 16,
            hidden: 32,
            feature: 16,
            prompt: 8,
            prompts_per_task: 4,
            similarity: SimilarityKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTargetKind {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    #[default]
    Uniform,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lookahead_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epsilon: f64,
    pub query_samples: usize,
    pub prototypes: usize,
    pub selection: SelectionKind,
    pub freeze_old_heads: bool,
    pub score_target: ScoreTargetKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            lookahead_epochs: 10,
            batch_size: 32,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epsilon: 0.97,
            query_samples: 200,
            prototypes: 100,
            selection: SelectionKind::Uniform,
            freeze_old_heads: true,
            score_target: ScoreTargetKind::Probabilities,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Check `max |K^t Q^{t-1}| < orthogonality_tol` after every task.
    /// Unset means on for every mode except coda.
    pub assert_orthogonality: Option<bool>,
    pub orthogonality_tol: f64,
    /// Probe queries count as in-span below this residual.
    pub span_tol: f64,
    /// Cap on points per side for the Wasserstein shift.
    pub shift_points: usize,
    pub checkpoints: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            assert_orthogonality: None,
            orthogonality_tol: 1e-9,
            span_tol: 1e-9,
            shift_points: 512,
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Koppa,
            seed: 0,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `key=value` overrides. Keys are dotted paths such as
    /// `train.lr`; values are TOML literals, with bare words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut root =
            toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(item.to_string()))?;
            let key = key.trim();
            let value = parse_literal(value.trim());
            set_path(&mut root, key, value)?;
        }
        root.try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = &self.data;
        if d.tasks == 0 || d.classes_per_task == 0 {
            return bad("data.tasks and data.classes_per_task must be at least 1".into());
        }
        match d.kind {
            DataKind::Synthetic => {
                if d.dim == 0 || d.samples_per_class == 0 {
                    return bad("data.dim and data.samples_per_class must be at least 1".into());
                }
                if !(d.separation.is_finite() && d.separation >= 0.0) {
                    return bad(format!(
                        "data.separation must be >= 0, got {}",
                        d.separation
                    ));
                }
            }
            DataKind::Csv | DataKind::Kpds => {
                if d.path.is_none() {
                    return bad("data.path is required for file datasets".into());
                }
            }
        }
        let m = &self.model;
        if [m.query, m.hidden, m.feature, m.prompt, m.prompts_per_task].contains(&0) {
            return bad("model dimensions must be at least 1".into());
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be at least 1".into());
        }
        if t.lookahead_epochs > t.epochs {
            return bad(format!(
                "train.lookahead_epochs ({}) exceeds train.epochs ({})",
                t.lookahead_epochs, t.epochs
            ));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", t.lr));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || t.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        if !(t.epsilon > 0.0 && t.epsilon < 1.0) {
            return bad(format!(
                "train.epsilon must lie in (0, 1), got {}",
                t.epsilon
            ));
        }
        if t.query_samples == 0 {
            return bad("train.query_samples must be at least 1".into());
        }
        if self.mode == Mode::Coda && self.report.assert_orthogonality == Some(true) {
            return bad("coda mode has no orthogonality constraint to assert".into());
        }
        if self.report.shift_points == 0 {
            return bad("report.shift_points must be at least 1".into());
        }
        Ok(())
    }

    pub fn orthogonality_checked(&self) -> bool {
        self.report
            .assert_orthogonality
            .unwrap_or(self.mode != Mode::Coda)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            query: self.model.query,
            hidden: self.model.hidden,
            feature: self.model.feature,
            prompt: self.model.prompt,
            prompts_per_task: self.model.prompts_per_task,
            classes_per_task: self.data.classes_per_task,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let (mode, loss, prediction) = match self.mode {
            Mode::Koppa | Mode::CePlusOva => (
                TrainingMode::Koppa,
                LossWeights { ce: 1.0, ova: 1.0 },
                PredictionRule::TaskScoreAdjusted,
            ),
            Mode::JustCe => (
                TrainingMode::Koppa,
                LossWeights { ce: 1.0, ova: 0.0 },
                PredictionRule::CeOnly,
            ),
            Mode::JustOva => (
                TrainingMode::Koppa,
                LossWeights { ce: 0.0, ova: 1.0 },
                PredictionRule::OvaOnly,
            ),
            Mode::Coda => (
                TrainingMode::Coda,
                LossWeights { ce: 1.0, ova: 0.0 },
                PredictionRule::CeOnly,
            ),
        };
        TrainConfig {
            mode,
            loss,
            prediction,
            score_target: match t.score_target {
                ScoreTargetKind::Probabilities => ScoreTarget::Probabilities,
                ScoreTargetKind::Logits => ScoreTarget::Logits,
            },
            similarity: match self.model.similarity {
                SimilarityKind::Cosine => Similarity::Cosine,
                SimilarityKind::Dot => Similarity::Dot,
            },
            epochs: t.epochs,
            lookahead_epochs: t.lookahead_epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            epsilon: t.epsilon,
            query_samples: t.query_samples,
            prototypes: t.prototypes,
            selection: match t.selection {
                SelectionKind::Uniform => Selection::Uniform,
                SelectionKind::Stratified => Selection::Stratified,
            },
            freeze_old_heads: t.freeze_old_heads,
            seed: self.seed,
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let err = |message: &str| ConfigError::OverridePath {
        key: key.to_string(),
        message: message.to_string(),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment"));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = root;
    for p in parents {
        node = node
            .as_table_mut()
            .ok_or_else(|| err("path runs through a non-table value"))?
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| err("path runs through a non-table value"))?
        .insert(last.to_string(), value);
    Ok(())
}
