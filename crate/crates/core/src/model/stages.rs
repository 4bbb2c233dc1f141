use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    FusedMbconv,
    Mbconv,
}

/// One row of the reference real architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: BlockKind,
    pub repeats: usize,
    pub kernel: usize,
    /// Stride of the first block; later blocks use 1.
    pub stride: usize,
    pub expand_ratio: f64,
    pub out_channels_real: usize,
    pub se_ratio: f64,
}

impl StageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || !(1..=2).contains(&self.stride) || self.out_channels_real == 0 {
            return Err(invalid!("invalid stage {self:?}"));
        }
        Ok(())
    }
}

pub const B0_STEM_CHANNELS: usize = 32;
pub const B0_HEAD_CHANNELS: usize = 1280;

/// EfficientNetV2-B0: stem 3×3/2 to 32 channels, three Fused-MBConv stages,
/// three MBConv stages, 1×1 head to 1280 channels.
pub fn effnetv2_b0_stages() -> Vec<StageSpec> {
    use BlockKind::*;
    let row = |kind, repeats, stride, expand_ratio, out_channels_real, se_ratio| StageSpec {
        kind,
        repeats,
        kernel: 3,
        stride,
        expand_ratio,
        out_channels_real,
        se_ratio,
    };
    vec![
        row(FusedMbconv, 1, 1, 1.0, 16, 0.0),
        row(FusedMbconv, 2, 2, 4.0, 32, 0.0),
        row(FusedMbconv, 2, 2, 4.0, 48, 0.0),
        row(Mbconv, 3, 2, 4.0, 96, 0.25),
        row(Mbconv, 5, 1, 6.0, 112, 0.25),
        row(Mbconv, 8, 2, 6.0, 192, 0.25),
    ]
}

/// `max(1, round(λ·real_channels))`, ties to even; λ must lie in `[1/d, 1]`.
pub fn scale_channels(real_channels: usize, lambda: f64, d: usize) -> Result<usize> {
    check_lambda(lambda, d)?;
    Ok(((lambda * real_channels as f64).round_ties_even() as usize).max(1))
}

pub fn check_lambda(lambda: f64, d: usize) -> Result<()> {
    // Slack for λ = 1/d written with finitely many digits, e.g. 0.3333333333.
    const SLACK: f64 = 1e-9;
    if d == 0 || !(lambda >= 1.0 / d as f64 - SLACK && lambda <= 1.0 + SLACK) {
        return Err(invalid!("lambda {lambda} outside [1/{d}, 1]"));
    }
    Ok(())
}

/// Snaps a channel count to a multiple of `divisor` (nearest, at least one
/// divisor, never more than 10% below the request). `divisor = 1` is the identity.
pub fn round_filters(channels: usize, divisor: usize) -> usize {
    let divisor = divisor.max(1);
    let f = channels as f64;
    let mut out = (((f + divisor as f64 / 2.0) as usize) / divisor * divisor).max(divisor);
    if (out as f64) < 0.9 * f {
        out += divisor;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b0_table_shape() {
        let t = effnetv2_b0_stages();
        assert_eq!(t.first().unwrap().kind, BlockKind::FusedMbconv);
        assert_eq!(t.last().unwrap().kind, BlockKind::Mbconv);
        assert!(t.iter().all(|s| s.validate().is_ok()));
        assert_eq!(t.iter().map(|s| s.repeats).sum::<usize>(), 21);
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scale_channels(32, 0.25, 4).unwrap(), 8);
        assert_eq!(scale_channels(32, 1.0, 4).unwrap(), 32);
        assert_eq!(scale_channels(6, 0.25, 4).unwrap(), 2);
        assert_eq!(scale_channels(10, 0.25, 4).unwrap(), 2);
        assert_eq!(scale_channels(1, 0.25, 4).unwrap(), 1);
        assert!(scale_channels(32, 0.2, 4).is_err());
        assert!(scale_channels(32, 1.5, 4).is_err());
        assert!(scale_channels(32, 0.5, 1).is_err());
    }

    #[test]
    fn rounding_to_divisor() {
        assert_eq!(round_filters(4, 8), 8);
        assert_eq!(round_filters(12, 8), 16);
        assert_eq!(round_filters(28, 8), 32);
        assert_eq!(round_filters(24, 8), 24);
        assert_eq!(round_filters(320, 8), 320);
        for c in 1..200 {
            assert_eq!(round_filters(c, 1), c);
        }
    }
}
