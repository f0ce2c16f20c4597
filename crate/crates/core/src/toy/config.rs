use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::AlignmentMode;
use crate::error::{Error, Result};
use crate::label_sim::ExpansionConfig;

/// Synthetic speech-like task: words are fixed-length groups of tokens, each
/// token occupies a run of frames around its feature prototype, and words
/// are separated by optional silence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Vocabulary size including blank / silence at index 0.
    pub vocab: usize,
    pub feature_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_token_frames: usize,
    pub max_token_frames: usize,
    pub tokens_per_word: usize,
    pub max_silence: usize,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    /// Frames at the start of each token that blend in the previous
    /// segment's prototype.
    pub onset_frames: usize,
    pub train_utts: usize,
    pub eval_utts: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab: 8,
            feature_dim: 16,
            min_frames: 30,
            max_frames: 80,
            min_token_frames: 2,
            max_token_frames: 6,
            tokens_per_word: 2,
            max_silence: 3,
            noise: 1.0,
            onset_frames: 1,
            train_utts: 500,
            eval_utts: 100,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.vocab < 3 {
            return bad("vocab must be at least 3 (blank plus two tokens)");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.min_token_frames == 0 || self.min_token_frames > self.max_token_frames {
            return bad("token duration range is empty");
        }
        if self.tokens_per_word == 0 {
            return bad("tokens_per_word must be positive");
        }
        if self.min_frames > self.max_frames {
            return bad("frame range is empty");
        }
        if self.min_frames < self.tokens_per_word * self.max_token_frames + 2 * self.max_silence {
            return bad("min_frames too small to hold one word");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a non-negative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    /// Adam with the usual moment decays (0.9, 0.999).
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    fn new(epochs: usize, lr: f64) -> Self {
        Self {
            epochs,
            lr,
            batch_size: 20,
            optimizer: Optimizer::default(),
        }
    }

    pub fn validate(&self, stage: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{stage}: batch_size must be positive")));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{stage}: lr must be a non-negative number")));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(30, 0.05)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub task: TaskConfig,
    /// Teacher window: this many frames on each side.
    pub teacher_context: usize,
    /// Student window: this many past frames.
    pub student_context: usize,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    pub teacher: TrainConfig,
    pub pretrain: TrainConfig,
    pub transducer: TrainConfig,
    pub r_left: f64,
    pub r_right: f64,
    /// `viterbi` or `occupation-argmax`.
    pub alignment: String,
    pub frame_ms: f64,
    pub max_symbols: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            task: TaskConfig::default(),
            teacher_context: 2,
            student_context: 2,
            init_scale: 0.01,
            teacher: TrainConfig::new(30, 0.03),
            pretrain: TrainConfig::new(30, 0.01),
            transducer: TrainConfig::new(30, 0.03),
            r_left: 0.2,
            r_right: 0.6,
            alignment: "viterbi".into(),
            frame_ms: 40.0,
            max_symbols: 4,
        }
    }
}

impl ToyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn expansion(&self) -> Result<ExpansionConfig> {
        ExpansionConfig::new(self.r_left, self.r_right)
    }

    pub fn alignment_mode(&self) -> Result<AlignmentMode> {
        self.alignment.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.teacher.validate("teacher")?;
        self.pretrain.validate("pretrain")?;
        self.transducer.validate("transducer")?;
        self.expansion()?;
        self.alignment_mode()?;
        if !(self.frame_ms > 0.0) {
            return Err(Error::Config("frame_ms must be positive".into()));
        }
        if self.max_symbols == 0 {
            return Err(Error::Config("max_symbols must be positive".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }
}
