use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// Which parts of the role-selected interaction layer are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    #[default]
    Full,
    /// Task branches share only the encoder: `M = H'`, `Q = S'`.
    NoInteract,
    /// SSA→MHCH attention admits every past utterance regardless of role.
    NoSelect,
    /// Positional weights replaced by the identity.
    NoPosition,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 4] = [
        InteractionMode::Full,
        InteractionMode::NoInteract,
        InteractionMode::NoSelect,
        InteractionMode::NoPosition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::Full => "full",
            InteractionMode::NoInteract => "no_interact",
            InteractionMode::NoSelect => "no_select",
            InteractionMode::NoPosition => "no_position",
        }
    }
}

impl FromStr for InteractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown interaction mode `{s}`")))
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How local satisfaction distributions are merged into the dialogue estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    Attention,
    Average,
    Voting,
    Last,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 4] = [
        AggregationMode::Attention,
        AggregationMode::Average,
        AggregationMode::Voting,
        AggregationMode::Last,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Attention => "attention",
            AggregationMode::Average => "average",
            AggregationMode::Voting => "voting",
            AggregationMode::Last => "last",
        }
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown aggregation mode `{s}`")))
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters. Everything needed to rebuild parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Word embedding width `n`.
    pub embed_dim: usize,
    /// LSTM hidden units `k`; also the transformer width.
    pub hidden: usize,
    /// Dense units `d`.
    pub dense: usize,
    /// Attention units `z` of the utterance-importance scorer.
    pub attention_units: usize,
    pub heads: usize,
    /// Transformer feed-forward width; `0` means `2k`.
    pub ff_width: usize,
    /// Longest accepted dialogue; also the matching-feature width.
    pub max_dialogue_len: usize,
    pub dense_activation: Activation,
    /// Sinusoidal position codes on the satisfaction transformer input.
    pub positional_encoding: bool,
    /// Inverted dropout on word embeddings during training.
    pub dropout: f64,
    pub interaction: InteractionMode,
    pub aggregation: AggregationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 200,
            hidden: 32,
            dense: 32,
            attention_units: 32,
            heads: 4,
            ff_width: 0,
            max_dialogue_len: 64,
            dense_activation: Activation::Relu,
            positional_encoding: true,
            dropout: 0.1,
            interaction: InteractionMode::Full,
            aggregation: AggregationMode::Attention,
        }
    }
}

impl ModelConfig {
    pub fn ff_width(&self) -> usize {
        if self.ff_width == 0 {
            2 * self.hidden
        } else {
            self.ff_width
        }
    }

    /// Width of a shared utterance row: matching block plus BiLSTM output.
    pub fn shared_width(&self) -> usize {
        self.max_dialogue_len + 2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("dense", self.dense),
            ("attention_units", self.attention_units),
            ("heads", self.heads),
            ("max_dialogue_len", self.max_dialogue_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Optimization settings on top of a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    /// Weight `η` of the satisfaction loss.
    pub eta: f64,
    /// L2 weight `δ` on all parameters.
    pub delta: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub min_freq: usize,
    /// Evaluate dialogues of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 32,
            eta: 0.5,
            delta: 1e-6,
            learning_rate: 1.5e-3,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            clip_norm: 5.0,
            min_freq: 1,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return Err(Error::config(format!("eta must lie in [0, 1), got {}", self.eta)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::config("delta must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}
