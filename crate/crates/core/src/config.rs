//! Run configuration: a sectioned `key = value` file (TOML) with strict
//! key checking.
//!
//! ```toml
//! [model]
//! layers = 2
//! hidden_size = 128
//! activation = "drelu"
//!
//! [data]
//! train = "corpus/train.txt"
//!
//! [optimizer]
//! max_steps = 2000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ActivationKind;
use crate::layers::{InitScheme, StackConfig};
use crate::lm::Encoding;
use crate::train::{AdamConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn d_layers() -> usize {
    2
}
fn d_embedding() -> usize {
    50
}
fn d_hidden() -> usize {
    128
}
fn d_first_width() -> usize {
    6
}
fn d_width() -> usize {
    2
}
fn d_activation() -> String {
    "drelu".into()
}
fn d_dropout() -> f64 {
    0.15
}
fn d_init() -> String {
    "orthogonal".into()
}
fn d_init_range() -> f64 {
    0.05
}
fn d_init_std() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_embedding")]
    pub embedding_size: usize,
    #[serde(default = "d_hidden")]
    pub hidden_size: usize,
    #[serde(default = "d_first_width")]
    pub first_conv_width: usize,
    #[serde(default = "d_width")]
    pub conv_width: usize,
    #[serde(default = "d_activation")]
    pub activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub dense: bool,
    /// `orthogonal`, `uniform` or `normal`.
    #[serde(default = "d_init")]
    pub init: String,
    #[serde(default = "d_init_range")]
    pub init_range: f64,
    #[serde(default = "d_init_std")]
    pub init_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("all model keys have defaults")
    }
}

impl ModelSection {
    pub fn activation_kind(&self) -> Result<ActivationKind, ConfigError> {
        ActivationKind::from_tag(&self.activation, self.alpha)
            .map_err(|e| ConfigError::Invalid(format!("model.activation: {e}")))
    }

    pub fn init_scheme(&self) -> Result<InitScheme, ConfigError> {
        match self.init.as_str() {
            "orthogonal" => Ok(InitScheme::Orthogonal),
            "uniform" => Ok(InitScheme::Uniform {
                range: self.init_range,
            }),
            "normal" => Ok(InitScheme::Normal { std: self.init_std }),
            other => Err(ConfigError::Invalid(format!(
                "model.init: unknown scheme {other:?} (expected orthogonal, uniform or normal)"
            ))),
        }
    }

    pub fn stack_config(&self) -> Result<StackConfig, ConfigError> {
        let stack = StackConfig {
            layers: self.layers,
            input_size: self.embedding_size,
            hidden_size: self.hidden_size,
            first_conv_width: self.first_conv_width,
            conv_width: self.conv_width,
            activation: self.activation_kind()?,
            dropout: self.dropout,
            dense: self.dense,
            init: self.init_scheme()?,
        };
        stack
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        Ok(stack)
    }

    pub fn from_stack(stack: &StackConfig) -> Self {
        let (init, init_range, init_std) = match stack.init {
            InitScheme::Orthogonal => ("orthogonal", d_init_range(), d_init_std()),
            InitScheme::Uniform { range } => ("uniform", range, d_init_std()),
            InitScheme::Normal { std } => ("normal", d_init_range(), std),
        };
        Self {
            layers: stack.layers,
            embedding_size: stack.input_size,
            hidden_size: stack.hidden_size,
            first_conv_width: stack.first_conv_width,
            conv_width: stack.conv_width,
            activation: stack.activation.tag().to_string(),
            alpha: stack.activation.alpha(),
            dropout: stack.dropout,
            dense: stack.dense,
            init: init.to_string(),
            init_range,
            init_std,
        }
    }
}

fn d_encoding() -> String {
    "utf8".into()
}
fn d_batch() -> usize {
    128
}
fn d_seq() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(default = "d_encoding")]
    pub encoding: String,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_seq")]
    pub seq_len: usize,
}

fn d_lr() -> f64 {
    3e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_clip() -> f64 {
    5.0
}
fn d_max_steps() -> u64 {
    1000
}
fn d_log_interval() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: u64,
    #[serde(default = "d_log_interval")]
    pub log_interval: u64,
    /// Steps between validation passes; 0 disables validation.
    #[serde(default)]
    pub eval_interval: u64,
    /// Steps between periodic checkpoints; 0 disables them.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Stop after this many validation passes without improvement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        toml::from_str("").expect("all optimizer keys have defaults")
    }
}

fn d_log() -> PathBuf {
    "train.log".into()
}
fn d_ckpt_dir() -> PathBuf {
    "checkpoints".into()
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_log")]
    pub log: PathBuf,
    #[serde(default = "d_ckpt_dir")]
    pub checkpoint_dir: PathBuf,
    /// Write measured tokens/sec into the log; when off the column holds `-`
    /// and logs of identical runs are byte-identical.
    #[serde(default = "d_true")]
    pub log_throughput: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        toml::from_str("").expect("all output keys have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Makes relative paths relative to `base` (usually the config's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        if let Some(v) = &mut self.data.valid {
            fix(v);
        }
        fix(&mut self.output.log);
        fix(&mut self.output.checkpoint_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.stack_config()?;
        self.encoding()?;
        let o = &self.optimizer;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be non-negative, got {}", o.lr));
        }
        if !(o.clip_norm > 0.0) {
            return bad(format!("optimizer.clip_norm must be positive, got {}", o.clip_norm));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer betas must lie in [0, 1) and eps must be positive".into());
        }
        if o.log_interval == 0 {
            return bad("optimizer.log_interval must be at least 1".into());
        }
        if self.data.batch_size == 0 || self.data.seq_len == 0 {
            return bad("data.batch_size and data.seq_len must be positive".into());
        }
        Ok(())
    }

    /// Checks that every input file exists, before any work starts.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let mut inputs = vec![&self.data.train];
        inputs.extend(self.data.valid.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "corpus file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn encoding(&self) -> Result<Encoding, ConfigError> {
        self.data
            .encoding
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("data.encoding: {e}")))
    }

    pub fn stack_config(&self) -> Result<StackConfig, ConfigError> {
        self.model.stack_config()
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        TrainConfig {
            batch_size: self.data.batch_size,
            seq_len: self.data.seq_len,
            adam: AdamConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            clip_norm: o.clip_norm,
            max_steps: o.max_steps,
            log_interval: o.log_interval,
            eval_interval: o.eval_interval,
            checkpoint_interval: o.checkpoint_interval,
            patience: o.patience,
            seed: o.seed,
            log_throughput: self.output.log_throughput,
        }
    }
}
