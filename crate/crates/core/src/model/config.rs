//! Architecture hyperparameters. The default schedule is the single source
//! of truth for the shape trace: a 224² input gives a 112² stem map and
//! stage outputs 56², 28², 14², 7². Stages 1–3 halve inside patch embedding
//! (stride 2, fusion shape-preserving); stage 4 keeps the embedding at
//! stride 1 and halves in the closing max/avg fusion (window 2, stride 2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted average/max pooling fusion: gamma1 scales the homogeneous
/// (average) branch, gamma2 the structural (max) branch. `window`/`stride`
/// apply when a stage downsamples through the fusion; shape-preserving
/// stages use window 3 / stride 1 / pad 1 instead.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HsFuseConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub window: usize,
    pub stride: usize,
}

impl Default for HsFuseConfig {
    fn default() -> Self {
        HsFuseConfig {
            gamma1: 0.5,
            gamma2: 0.5,
            window: 2,
            stride: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Patch-embedding stride (1 or 2).
    pub embed_stride: usize,
    /// When true the stage's closing fusion downsamples (window 2 stride 2);
    /// otherwise fusion preserves shape (window 3 stride 1 pad 1).
    pub fuse_downsample: bool,
}

impl StageConfig {
    pub fn downsample(&self) -> bool {
        self.embed_stride == 2 || self.fuse_downsample
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub stem_dim: usize,
    pub stages: Vec<StageConfig>,
    pub hs: HsFuseConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length the model is built for; attention bias tables cover
    /// resolutions up to the per-stage grids this implies.
    pub input_size: usize,
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    /// Output channels of the four residual-branch blocks.
    pub residual_widths: Vec<usize>,
    /// Output channels of the five spatial-branch blocks.
    pub spatial_widths: Vec<usize>,
    /// Feed-forward expansion ratio inside transformer blocks.
    pub irffn_ratio: usize,
    /// Apply the feed-forward to the first-norm output instead of the
    /// post-attention norm (the literal reading of the block equations).
    pub eq10_literal: bool,
    /// Restrict attention to a local window of this size (in query-grid
    /// units); None = global attention over the reduced tokens.
    pub attn_window: Option<usize>,
    pub dropout: f64,
}

impl ModelConfig {
    /// Full-size architecture for 224² inputs.
    pub fn default_full() -> Self {
        Self::scaled(1, 224)
    }

    /// The same architecture with every width divided by `divisor`; used for
    /// desk-scale training (÷4 at 64²) and gradient checking (÷8 at 32²).
    pub fn scaled(divisor: usize, input_size: usize) -> Self {
        let d = |x: usize| (x / divisor).max(1);
        let dims = [64, 128, 256, 512].map(d);
        let blocks = [1, 1, 2, 1];
        let heads = [1, 2, 4, 8];
        let embed_strides = [2, 2, 2, 1];
        let fuse_down = [false, false, false, true];
        ModelConfig {
            input_size,
            num_classes: 5,
            backbone: BackboneConfig {
                stem_dim: d(64),
                stages: (0..4)
                    .map(|i| StageConfig {
                        dim: dims[i],
                        blocks: blocks[i],
                        heads: heads[i],
                        embed_stride: embed_strides[i],
                        fuse_downsample: fuse_down[i],
                    })
                    .collect(),
                hs: HsFuseConfig::default(),
            },
            residual_widths: vec![d(64), d(128), d(192), d(256)],
            spatial_widths: vec![d(32), d(64), d(96), d(128), d(160)],
            irffn_ratio: 4,
            eq10_literal: false,
            attn_window: None,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.stages.len() != 4 {
            return Err(Error::Config(format!(
                "backbone needs exactly 4 stages, got {}",
                self.backbone.stages.len()
            )));
        }
        let mut prev_dim = 0;
        for (i, s) in self.backbone.stages.iter().enumerate() {
            if s.dim == 0 || s.heads == 0 || s.dim % s.heads != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: dim {} not divisible by heads {}",
                    s.dim, s.heads
                )));
            }
            if s.embed_stride == 0 || s.embed_stride > 2 {
                return Err(Error::Config(format!(
                    "stage {i}: embed_stride must be 1 or 2, got {}",
                    s.embed_stride
                )));
            }
            if s.dim < prev_dim {
                return Err(Error::Config(format!(
                    "stage dims must be non-decreasing; stage {i} has {} after {prev_dim}",
                    s.dim
                )));
            }
            prev_dim = s.dim;
        }
        let hs = &self.backbone.hs;
        if hs.gamma1 < 0.0 || hs.gamma2 < 0.0 || hs.gamma1 + hs.gamma2 <= 0.0 {
            return Err(Error::Config(
                "fusion gammas must be non-negative with a positive sum".into(),
            ));
        }
        if self.residual_widths.len() != 4 {
            return Err(Error::Config("residual branch needs 4 block widths".into()));
        }
        if self.spatial_widths.len() != 5 {
            return Err(Error::Config("spatial branch needs 5 block widths".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.irffn_ratio == 0 {
            return Err(Error::Config("irffn_ratio must be >= 1".into()));
        }
        if self.input_size < 8 {
            return Err(Error::Config(format!(
                "input size {} too small (stem needs >= 8)",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Fused channel count after augmentation: residual + spatial + backbone.
    pub fn fused_channels(&self) -> usize {
        self.residual_widths[3]
            + self.spatial_widths[4]
            + self.backbone.stages[3].dim
    }

    /// Spatial grids at which each stage's transformer blocks run, traced
    /// from `input_size` (stem halves once, then per-stage embed strides and
    /// fusion strides apply).
    pub fn stage_grids(&self) -> Vec<(usize, usize)> {
        let mut h = self.input_size / 2;
        let mut w = self.input_size / 2;
        let mut grids = Vec::with_capacity(4);
        for s in &self.backbone.stages {
            if s.embed_stride == 2 {
                // 3x3 stride-2 pad-1 convolution: ceil(h / 2)
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            grids.push((h, w));
            if s.fuse_downsample {
                let (win, st) = (self.backbone.hs.window, self.backbone.hs.stride);
                h = (h - win) / st + 1;
                w = (w - win) / st + 1;
            }
        }
        grids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default_full().validate().unwrap();
        ModelConfig::scaled(4, 64).validate().unwrap();
        ModelConfig::scaled(8, 32).validate().unwrap();
    }

    #[test]
    fn default_fused_channels_are_928() {
        assert_eq!(ModelConfig::default_full().fused_channels(), 256 + 160 + 512);
    }

    #[test]
    fn stage_grid_trace_at_224() {
        let grids = ModelConfig::default_full().stage_grids();
        assert_eq!(grids, vec![(56, 56), (28, 28), (14, 14), (14, 14)]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = serde_json::to_value(ModelConfig::default_full()).unwrap();
        let mut obj = json;
        obj["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(obj).is_err());
    }
}
