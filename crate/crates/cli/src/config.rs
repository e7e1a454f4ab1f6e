//! JSON run configuration. Unknown keys are rejected so typos cannot
//! silently fall back to defaults.

use std::path::PathBuf;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use deepindex_core::autoencoder::AutoencoderSpec;
use deepindex_core::indexing::Window;
use deepindex_core::network::{Activation, NetworkSpec};
use deepindex_core::training::{Loss, Penalty, PenaltyKind, TrainConfig};

use crate::synth::SyntheticMarketSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticMarketSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    /// Whether the cells are price levels or simple returns.
    #[serde(default)]
    pub kind: CsvKind,
    /// Where the tracked index comes from.
    #[serde(default)]
    pub index: IndexSource,
}

fn default_date_column() -> String {
    "date".to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvKind {
    #[default]
    Prices,
    Returns,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSource {
    /// Equal-weighted average of all panel assets.
    #[default]
    EqualWeight,
    /// A named CSV column holding the index itself (removed from the panel).
    Column(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    #[serde(default = "default_bottleneck")]
    pub bottleneck: usize,
    #[serde(default = "default_rho")]
    pub sparsity_rho: f64,
    #[serde(default = "default_beta")]
    pub sparsity_beta: f64,
}

fn default_bottleneck() -> usize {
    4
}

fn default_rho() -> f64 {
    0.01
}

fn default_beta() -> f64 {
    3.0
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            bottleneck: default_bottleneck(),
            sparsity_rho: default_rho(),
            sparsity_beta: default_beta(),
        }
    }
}

impl AutoencoderConfig {
    pub fn to_spec(&self, input_dim: usize) -> AutoencoderSpec {
        let mut spec = AutoencoderSpec::new(input_dim, self.bottleneck);
        spec.sparsity_rho = self.sparsity_rho;
        spec.sparsity_beta = self.sparsity_beta;
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfpConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![4, 2]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for DfpConfig {
    fn default() -> Self {
        Self { hidden: default_hidden(), activation: default_activation() }
    }
}

impl DfpConfig {
    pub fn to_spec(&self, input_dim: usize) -> anyhow::Result<NetworkSpec> {
        Ok(NetworkSpec::new(
            input_dim,
            self.hidden.clone(),
            vec![self.activation; self.hidden.len()],
            1,
        )?)
    }
}

/// Optimizer knobs shared by the training stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub penalty: PenaltySetting,
    #[serde(default = "default_keep")]
    pub dropout_keep: f64,
    #[serde(default)]
    pub lr_decay: bool,
}

fn default_batch() -> usize {
    16
}

fn default_keep() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySetting {
    Ridge,
    Lasso,
    #[default]
    None,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        let kind = match self.penalty {
            PenaltySetting::Ridge => PenaltyKind::Ridge,
            PenaltySetting::Lasso => PenaltyKind::Lasso,
            PenaltySetting::None => PenaltyKind::None,
        };
        TrainConfig {
            loss: Loss::Mse,
            penalty: Penalty { kind, include_biases: false },
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout_keep: self.dropout_keep,
            seed,
            shuffle: true,
        }
    }
}

fn default_ae_train() -> TrainSettings {
    TrainSettings {
        learning_rate: 0.3,
        epochs: 500,
        batch_size: 32,
        lambda: 0.0,
        penalty: PenaltySetting::None,
        dropout_keep: 1.0,
        lr_decay: false,
    }
}

fn default_dfp_train() -> TrainSettings {
    TrainSettings {
        learning_rate: 0.2,
        epochs: 2000,
        batch_size: 8,
        lambda: 0.0,
        penalty: PenaltySetting::None,
        dropout_keep: 1.0,
        lr_decay: false,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl WindowConfig {
    pub fn to_window(&self) -> anyhow::Result<Window> {
        Ok(Window::new(self.label.clone(), self.start, self.end)?)
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataSource,
    /// Basis size: top-k and bottom-k assets.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default = "default_ae_train")]
    pub ae_train: TrainSettings,
    #[serde(default)]
    pub dfp: DfpConfig,
    #[serde(default = "default_dfp_train")]
    pub dfp_train: TrainSettings,
    /// The in-sample window models are fitted on.
    pub train_window: WindowConfig,
    /// Evaluation windows; they may overlap or precede the training window.
    #[serde(default)]
    pub eval_windows: Vec<WindowConfig>,
    pub output_dir: PathBuf,
    /// Seed for every stochastic stage. Required here or via `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_k() -> usize {
    10
}

fn default_threads() -> usize {
    1
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Config =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.k == 0 {
            bail!("k must be positive");
        }
        if self.threads == 0 {
            bail!("threads must be positive");
        }
        if self.train_window.start > self.train_window.end {
            bail!("train window starts after it ends");
        }
        for w in &self.eval_windows {
            if w.start > w.end {
                bail!("window '{}' starts after it ends", w.label);
            }
        }
        // Window labels name the per-window path files; collisions would
        // silently overwrite them.
        let mut seen = std::collections::HashSet::new();
        for label in std::iter::once(&self.train_window.label)
            .chain(self.eval_windows.iter().map(|w| &w.label))
        {
            if !seen.insert(sanitize_label(label)) {
                bail!("window label '{label}' collides with another window's file name");
            }
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
            if 2 * self.k > spec.n_assets {
                bail!(
                    "k = {} needs {} assets, synthetic market has {}",
                    self.k,
                    2 * self.k,
                    spec.n_assets
                );
            }
        }
        Ok(())
    }

    /// The seed, which is mandatory for every stochastic command.
    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| anyhow::anyhow!("a seed is required: set `seed` in the config or pass --seed"))
    }
}

/// File-name-safe form of a window label.
pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}
