//! Run configuration: everything a reproducible run needs, serialized as
//! JSON. One schema covers training, streaming, gradient checks, cost
//! reports, and benchmarks; commands read the parts they use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::clip::SynthClipSpec;
use crate::schedule::{ContextSchedule, ScheduleEntry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// How many clips to synthesize (seeds clip.seed, clip.seed+1, ...).
    pub clips: usize,
    /// Evaluate mean IoU every this many iterations (and at the end).
    pub eval_every: usize,
    /// Stop early once train mean IoU reaches this value.
    pub target_miou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 300, clips: 8, eval_every: 10, target_miou: Some(0.85) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schedule: ContextSchedule,
    /// Attention layer count N.
    pub layers: usize,
    pub heads: usize,
    pub channels: usize,
    pub classes: usize,
    pub lambda_aux: f64,
    pub patch: usize,
    pub precision: Precision,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub clip: SynthClipSpec,
}

impl RunConfig {
    /// Small end-to-end configuration: 48x48 clips, 12x12 feature maps,
    /// references 9, 6 and 3 frames back plus two sets from the target.
    pub fn toy() -> Self {
        RunConfig {
            schedule: ContextSchedule {
                s: 4,
                entries: vec![
                    ScheduleEntry { offset: 9, r: 12, p: 4 },
                    ScheduleEntry { offset: 9, r: 8, p: 2 },
                    ScheduleEntry { offset: 6, r: 8, p: 2 },
                    ScheduleEntry { offset: 3, r: 4, p: 1 },
                    ScheduleEntry { offset: 0, r: 4, p: 1 },
                ],
            },
            layers: 2,
            heads: 2,
            channels: 16,
            classes: 4,
            lambda_aux: 0.4,
            patch: 4,
            precision: Precision::F64,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            clip: SynthClipSpec::default(),
        }
    }

    /// Full-size defaults: the 181-token schedule over 224x224 images.
    /// Mainly for cost reporting; training it is far beyond toy scale.
    pub fn full() -> Self {
        RunConfig {
            schedule: crate::schedule::default_schedule(),
            layers: 2,
            heads: 2,
            channels: 32,
            classes: 4,
            lambda_aux: 0.4,
            patch: 4,
            precision: Precision::F32,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            clip: SynthClipSpec {
                frames: 12,
                height: 224,
                width: 224,
                classes: 4,
                objects: 3,
                object_side: 56,
                velocity: (2, 1),
                noise: 0.02,
                seed: 0,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::contract("run_config", format!("bad config JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks across the config; returns schedule warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.schedule.validate()?;
        if self.layers == 0 {
            return Err(Error::contract("run_config", "at least one attention layer"));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::contract(
                "run_config",
                format!("head count {} must divide channels {}", self.heads, self.channels),
            ));
        }
        if self.classes < 2 {
            return Err(Error::contract("run_config", "need at least two classes"));
        }
        if self.clip.classes != self.classes {
            return Err(Error::contract(
                "run_config",
                format!("clip classes {} vs model classes {}", self.clip.classes, self.classes),
            ));
        }
        if self.patch == 0 || self.clip.height % self.patch != 0 || self.clip.width % self.patch != 0 {
            return Err(Error::contract(
                "run_config",
                format!(
                    "patch {} must divide the {}x{} images",
                    self.patch, self.clip.height, self.clip.width
                ),
            ));
        }
        if !(self.lambda_aux >= 0.0 && self.lambda_aux.is_finite()) {
            return Err(Error::contract("run_config", format!("lambda_aux {}", self.lambda_aux)));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::contract("run_config", "optimizer settings out of range"));
        }
        if self.train.clips == 0 || self.train.iterations == 0 || self.train.eval_every == 0 {
            return Err(Error::contract("run_config", "train counts must be >= 1"));
        }
        if self.clip.frames <= self.schedule.max_offset() {
            return Err(Error::contract(
                "run_config",
                format!(
                    "{}-frame clips cannot reach {} frames back",
                    self.clip.frames,
                    self.schedule.max_offset()
                ),
            ));
        }
        Ok(warnings)
    }

    /// Feature extents produced by the encoder for this config's clips.
    pub fn feature_extents(&self) -> (usize, usize) {
        (self.clip.height / self.patch, self.clip.width / self.patch)
    }
}
