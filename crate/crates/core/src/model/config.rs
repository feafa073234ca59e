use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::validate_keep_prob;

/// How a layer's input is added back into its output or carried state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    None,
    /// Res-V1: the layer input is added to the output passed upward.
    VerticalOnly,
    /// Res-V2: the summed value is also carried to the next timestep as `h`.
    VerticalAndLateral,
    /// The previous fast state is added to the fast state carried forward.
    HorizontalOnly,
}

impl ResidualMode {
    pub const ALL: [ResidualMode; 4] = [
        ResidualMode::None,
        ResidualMode::VerticalOnly,
        ResidualMode::VerticalAndLateral,
        ResidualMode::HorizontalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResidualMode::None => "none",
            ResidualMode::VerticalOnly => "vertical-only",
            ResidualMode::VerticalAndLateral => "vertical-and-lateral",
            ResidualMode::HorizontalOnly => "horizontal-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "vanilla" => Some(ResidualMode::None),
            "vertical-only" | "vertical" | "res-v1" => Some(ResidualMode::VerticalOnly),
            "vertical-and-lateral" | "vertical-lateral" | "res-v2" => Some(ResidualMode::VerticalAndLateral),
            "horizontal-only" | "horizontal" => Some(ResidualMode::HorizontalOnly),
            _ => None,
        }
    }
}

/// Bidirectionality. Sharing weights is only meaningful when bidirectional,
/// so the two flags are folded into one enum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Unidirectional,
    /// Forward and time-reversed passes reuse one weight set.
    SharedBidirectional,
    /// Forward and time-reversed passes have their own weights.
    SeparateBidirectional,
}

impl Direction {
    pub fn is_bidirectional(self) -> bool {
        !matches!(self, Direction::Unidirectional)
    }

    pub fn shares_weights(self) -> bool {
        matches!(self, Direction::SharedBidirectional)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputGate {
    Sigmoid,
    /// Squashes the output gate with tanh instead of the logistic.
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_residual")]
    pub residual_mode: ResidualMode,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default)]
    pub forget_bias: f64,
    #[serde(default = "default_keep")]
    pub input_keep_prob: f64,
    #[serde(default)]
    pub pooling: bool,
    #[serde(default = "default_pooling_dim")]
    pub pooling_dim: usize,
    #[serde(default = "default_output_gate")]
    pub output_gate: OutputGate,
}

fn default_embed_dim() -> usize {
    300
}
fn default_pooling_dim() -> usize {
    300
}
fn default_keep() -> f64 {
    1.0
}
fn default_residual() -> ResidualMode {
    ResidualMode::None
}
fn default_direction() -> Direction {
    Direction::Unidirectional
}
fn default_output_gate() -> OutputGate {
    OutputGate::Sigmoid
}

impl ModelConfig {
    /// Plain stacked LSTM: no forget bias, no dropout, no extensions.
    pub fn baseline(num_layers: usize, hidden_size: usize, embed_dim: usize, num_classes: usize) -> Self {
        Self {
            num_layers,
            hidden_size,
            embed_dim,
            num_classes,
            residual_mode: ResidualMode::None,
            direction: Direction::Unidirectional,
            forget_bias: 0.0,
            input_keep_prob: 1.0,
            pooling: false,
            pooling_dim: default_pooling_dim(),
            output_gate: OutputGate::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::config("num_layers", "must be at least 1"));
        }
        if self.hidden_size < 1 {
            return Err(Error::config("hidden_size", "must be at least 1"));
        }
        if self.embed_dim < 1 {
            return Err(Error::config("embed_dim", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if self.pooling && self.pooling_dim < 1 {
            return Err(Error::config("pooling_dim", "must be at least 1 when pooling is enabled"));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::config("forget_bias", "must be finite"));
        }
        validate_keep_prob(self.input_keep_prob).map_err(|_| {
            Error::config(
                "input_keep_prob",
                format!("{} is outside (0, 1]", self.input_keep_prob),
            )
        })
    }

    pub fn layer_input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_size
        }
    }

    /// Whether vertical/lateral residuals attach at `layer`. The first layer
    /// only takes them when the embedding width equals the hidden width.
    pub fn residual_applies(&self, layer: usize) -> bool {
        layer > 0 || self.embed_dim == self.hidden_size
    }

    pub fn rnn_output_width(&self) -> usize {
        if self.direction.is_bidirectional() {
            2 * self.hidden_size
        } else {
            self.hidden_size
        }
    }

    pub fn projection_input_width(&self) -> usize {
        self.rnn_output_width() + if self.pooling { self.pooling_dim } else { 0 }
    }

    pub fn preset(name: &str) -> Option<ModelConfig> {
        preset(name)
    }
}

/// Closed-form trainable parameter count, embedding table excluded.
pub fn count_parameters(config: &ModelConfig) -> u64 {
    let h = config.hidden_size as u64;
    let mut recurrent = 0u64;
    for layer in 0..config.num_layers {
        let input = config.layer_input_width(layer) as u64;
        recurrent += 4 * ((input + h) * h + h);
    }
    if matches!(config.direction, Direction::SeparateBidirectional) {
        recurrent *= 2;
    }
    let classes = config.num_classes as u64;
    let projection = config.projection_input_width() as u64 * classes + classes;
    let pooling = if config.pooling {
        let p = config.pooling_dim as u64;
        config.embed_dim as u64 * p + p
    } else {
        0
    };
    recurrent + projection + pooling
}

pub const PRESET_NAMES: &[&str] = &[
    "sst_baseline",
    "sst_large",
    "sst_bi",
    "sst_full",
    "sst_uni_full",
    "imdb_baseline",
    "imdb_large",
    "imdb_bi",
    "imdb_full",
];

/// Architectures used for the two benchmark corpora. Drop probabilities of
/// 0.5 (SST) and 0.7 (IMDB) are stored as keep probabilities.
pub fn preset(name: &str) -> Option<ModelConfig> {
    let sst = |hidden| ModelConfig::baseline(2, hidden, 300, 5);
    let imdb = |hidden| ModelConfig::baseline(2, hidden, 300, 2);
    let regularize = |mut c: ModelConfig, keep: f64| {
        c.forget_bias = 1.0;
        c.input_keep_prob = keep;
        c
    };
    let cfg = match name {
        "sst_baseline" => sst(170),
        "sst_large" => regularize(sst(800), 0.5),
        "sst_bi" => ModelConfig {
            direction: Direction::SharedBidirectional,
            ..regularize(sst(800), 0.5)
        },
        "sst_full" => ModelConfig {
            direction: Direction::SharedBidirectional,
            pooling: true,
            residual_mode: ResidualMode::VerticalOnly,
            ..regularize(sst(800), 0.5)
        },
        "sst_uni_full" => ModelConfig {
            pooling: true,
            residual_mode: ResidualMode::VerticalAndLateral,
            ..regularize(sst(800), 0.5)
        },
        "imdb_baseline" => imdb(120),
        "imdb_large" => regularize(imdb(360), 0.3),
        "imdb_bi" => ModelConfig {
            direction: Direction::SharedBidirectional,
            ..regularize(imdb(360), 0.3)
        },
        "imdb_full" => ModelConfig {
            direction: Direction::SharedBidirectional,
            pooling: true,
            residual_mode: ResidualMode::VerticalAndLateral,
            ..regularize(imdb(360), 0.3)
        },
        _ => return None,
    };
    Some(cfg)
}

/// Converts a drop probability to the keep probability stored in configs.
pub fn keep_prob_from_drop(drop: f64) -> Result<f64> {
    if (0.0..1.0).contains(&drop) {
        Ok(1.0 - drop)
    } else {
        Err(Error::config("dropout", format!("drop probability {drop} is outside [0, 1)")))
    }
}
