//! The classifier: per-node attention over propagation steps, the two MLP
//! branches, and the training loop.

mod attention;
mod baseline;
mod export;
mod gamlp;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{jk_attention, recursive_attention, JkAttention, JkShape, RecursiveAttention, ReferenceMode};
pub use baseline::{baseline_combine, BaselineMode};
pub use export::{export_attention, parse_buckets, AttentionExport, DegreeBucket};
pub use gamlp::{Combiner, Gamlp, GamlpCache, ModelInputs, Stacks};
pub use train::{evaluate_accuracy, fit, logits, predict, EpochRecord, FitOutcome, TrainingData};

use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::nn::{Activation, OptimizerConfig, OptimizerKind};
use crate::propagation::ResidualScheme;

/// How propagated steps are merged into one matrix per branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CombinerKind {
    Recursive,
    Jk,
    Baseline(BaselineMode),
}

impl CombinerKind {
    pub fn is_attention(self) -> bool {
        !matches!(self, CombinerKind::Baseline(_))
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombinerKind::Recursive => f.write_str("recursive"),
            CombinerKind::Jk => f.write_str("jk"),
            CombinerKind::Baseline(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" | "r" => Ok(CombinerKind::Recursive),
            "jk" => Ok(CombinerKind::Jk),
            "sgc" => Ok(CombinerKind::Baseline(BaselineMode::Sgc)),
            "s2gc" => Ok(CombinerKind::Baseline(BaselineMode::S2gc)),
            "sign" => Ok(CombinerKind::Baseline(BaselineMode::Sign)),
            "gbp" => Ok(CombinerKind::Baseline(BaselineMode::Gbp(0.5))),
            other => Err(Error::invalid(format!(
                "unknown combiner {other:?} (expected recursive, jk, sgc, s2gc, gbp or sign)"
            ))),
        }
    }
}

/// Which label matrices feed the label branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelInput {
    /// `Ŷ⁽ˡ⁾` after the last residual connection.
    Smoothed,
    /// Raw `Y⁽ˡ⁾`, bypassing the residual.
    Raw,
    /// `Y⁽ˡ⁾` blended with the uniform class distribution instead of `Y⁽ᴸ⁾`.
    Uniform,
}

/// Everything needed to build, train and reproduce one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// K
    pub hops: usize,
    /// L
    pub label_hops: usize,
    pub r_mode: NormMode,
    /// Overrides `r_mode` for label propagation.
    pub label_r_mode: Option<NormMode>,
    pub residual: ResidualScheme,
    pub combiner: CombinerKind,
    pub reference: ReferenceMode,
    pub hidden: usize,
    /// P, layers in the feature MLP.
    pub num_layers: usize,
    /// Q, layers in the label MLP.
    pub label_num_layers: usize,
    pub jk_layers: usize,
    /// δ, applied to attention scores.
    pub activation: Activation,
    pub input_dropout: f64,
    pub attention_dropout: f64,
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    /// 0 trains on all training nodes at once.
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Weight of the label branch.
    pub beta: f64,
    pub seed: u64,
    pub use_labels: bool,
    pub label_input: LabelInput,
    pub zero_train_self_label: bool,
    pub row_normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hops: 5,
            label_hops: 10,
            r_mode: NormMode::Symmetric,
            label_r_mode: None,
            residual: ResidualScheme::Cosine,
            combiner: CombinerKind::Recursive,
            reference: ReferenceMode::Jk,
            hidden: 512,
            num_layers: 4,
            label_num_layers: 2,
            jk_layers: 4,
            activation: Activation::LeakyRelu(0.2),
            input_dropout: 0.2,
            attention_dropout: 0.5,
            dropout: 0.5,
            optimizer: OptimizerConfig::adam(0.001),
            batch_size: 0,
            epochs: 400,
            patience: 300,
            beta: 1.0,
            seed: 0,
            use_labels: true,
            label_input: LabelInput::Smoothed,
            zero_train_self_label: false,
            row_normalize_features: false,
        }
    }
}

impl TrainConfig {
    pub fn label_mode(&self) -> NormMode {
        self.label_r_mode.unwrap_or(self.r_mode)
    }

    /// True when the label branch participates in the output.
    pub fn label_branch(&self) -> bool {
        self.use_labels && self.beta > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.hops > crate::propagation::MAX_STEPS || self.label_hops > crate::propagation::MAX_STEPS {
            return bad(format!("hops may not exceed {}", crate::propagation::MAX_STEPS));
        }
        if self.num_layers == 0 || self.label_num_layers == 0 {
            return bad("MLPs need at least one layer".into());
        }
        if self.combiner == CombinerKind::Jk && self.jk_layers == 0 {
            return bad("JK attention needs at least one JK layer".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive".into());
        }
        for (name, rate) in [
            ("input_dropout", self.input_dropout),
            ("attention_dropout", self.attention_dropout),
            ("dropout", self.dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if [self.optimizer.lr, self.optimizer.weight_decay]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return bad("learning rate and weight decay must be non-negative".into());
        }
        if self.patience > self.epochs {
            return bad(format!("patience {} exceeds epochs {}", self.patience, self.epochs));
        }
        if let CombinerKind::Baseline(BaselineMode::Gbp(b)) = self.combiner {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("gbp beta must lie in (0, 1), got {b}"));
            }
        }
        if let Activation::LeakyRelu(a) = self.activation {
            if !a.is_finite() {
                return bad("leaky relu slope must be finite".into());
            }
        }
        self.residual.validate()?;
        Ok(())
    }

    /// Short method label for reports.
    pub fn method_name(&self) -> String {
        match self.combiner {
            CombinerKind::Recursive => "gamlp_r".into(),
            CombinerKind::Jk => "gamlp_jk".into(),
            CombinerKind::Baseline(m) => m.to_string(),
        }
    }

    pub fn with_sgd(mut self) -> Self {
        self.optimizer.kind = OptimizerKind::Sgd;
        self
    }
}
