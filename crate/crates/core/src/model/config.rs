use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stages::{check_lambda, effnetv2_b0_stages, StageSpec};
use crate::algebra::AlgebraTensor;
use crate::blocks::Activation;
use crate::error::{invalid, Result};

pub const DEFAULT_CHANNEL_DIVISOR: usize = 8;

/// Architecture description; `algebra` is a built-in name, a path to an
/// algebra JSON file, or the algebra object inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VNetConfig {
    pub algebra: serde_json::Value,
    pub lambda: f64,
    pub num_classes: usize,
    /// `[H, W, vector channels]`.
    pub input: [usize; 3],
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
    /// Keep only the first `n` stages of the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    /// Real-reference width of the 1×1 head (default 1280).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_divisor: Option<usize>,
    /// Running-statistics momentum of every batch norm (default 0.99).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn_momentum: Option<f64>,
}

impl VNetConfig {
    /// B0 at the given algebra and λ with the usual colour input: one vector
    /// channel for `d ≥ 4`, three real channels for `d = 1`.
    pub fn b0(algebra: &str, lambda: f64, num_classes: usize, input_hw: usize) -> Result<Self> {
        let alg = AlgebraTensor::resolve(algebra)?;
        let cvec = if alg.dim() == 1 { 3 } else { 1 };
        let cfg = VNetConfig {
            algebra: serde_json::Value::String(algebra.to_string()),
            lambda,
            num_classes,
            input: [input_hw, input_hw, cvec],
            activation: Activation::Relu,
            seed: 0,
            stages: None,
            head_channels: None,
            channel_divisor: None,
            bn_momentum: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn algebra(&self) -> Result<AlgebraTensor> {
        match &self.algebra {
            serde_json::Value::String(s) => AlgebraTensor::resolve(s),
            v @ serde_json::Value::Object(_) => AlgebraTensor::from_json_value(v.clone()),
            v => Err(invalid!("algebra must be a name, path or object, got {v}")),
        }
    }

    pub fn divisor(&self) -> usize {
        self.channel_divisor.unwrap_or(DEFAULT_CHANNEL_DIVISOR)
    }

    pub fn head(&self) -> usize {
        self.head_channels.unwrap_or(super::stages::B0_HEAD_CHANNELS)
    }

    pub fn stage_table(&self) -> Vec<StageSpec> {
        let mut t = effnetv2_b0_stages();
        if let Some(n) = self.stages {
            t.truncate(n);
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        let alg = self.algebra()?;
        check_lambda(self.lambda, alg.dim())?;
        if self.num_classes == 0 {
            return Err(invalid!("num_classes must be positive"));
        }
        if self.input.contains(&0) {
            return Err(invalid!("input dimensions must be positive, got {:?}", self.input));
        }
        if self.stages == Some(0) || self.stages.is_some_and(|n| n > effnetv2_b0_stages().len()) {
            return Err(invalid!("stages must lie in 1..={}", effnetv2_b0_stages().len()));
        }
        if self.bn_momentum.is_some_and(|m| !(0.0..1.0).contains(&m)) {
            return Err(invalid!("bn_momentum must lie in [0, 1)"));
        }
        if self.head_channels == Some(0) || self.channel_divisor == Some(0) {
            return Err(invalid!("head_channels and channel_divisor must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: VNetConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
