use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::resample::UpsampleMode;

/// One encoder stage of inverted residual blocks. The first block of every
/// stage after the first halves the resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
    pub expansion: usize,
}

impl StageConfig {
    pub const fn new(channels: usize, blocks: usize, expansion: usize) -> Self {
        Self {
            channels,
            blocks,
            expansion,
        }
    }
}

/// How encoder features reach the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// 1x1 convolution down to `skip_reduced_channels`.
    #[default]
    Reduce,
    /// Original U-Net: pass the encoder feature through unchanged.
    Copy,
}

/// Declarative architecture description.
///
/// With `L = encoder_stages.len()` the encoder taps one feature per stride
/// `2, 4, .., 2^L` and the decoder walks back up through `L` levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    /// 1: plain decoder; 2: central difference decoder; 3: plus fc2d.
    pub variant: u8,
    pub stem_channels: usize,
    pub encoder_stages: Vec<StageConfig>,
    pub skip_mode: SkipMode,
    pub skip_reduced_channels: usize,
    /// 3x3 convolutions at the bottleneck resolution.
    pub center_channels: Vec<usize>,
    /// One entry per decoder level, coarse to fine.
    pub decoder_channels: Vec<usize>,
    pub fc_grid: (usize, usize),
    pub fc_pre_channels: usize,
    /// Upper bound on the number of fc2d inputs, `C * h * w`.
    pub fc_input_budget: usize,
    pub theta: f64,
    pub upsample_mode: UpsampleMode,
    /// Extra 1x1 conv widths at full resolution before the output conv.
    pub head_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (240, 240),
            variant: 3,
            stem_channels: 16,
            encoder_stages: vec![
                StageConfig::new(16, 1, 1),
                StageConfig::new(24, 2, 6),
                StageConfig::new(32, 2, 6),
                StageConfig::new(128, 3, 6),
            ],
            skip_mode: SkipMode::Reduce,
            skip_reduced_channels: 8,
            center_channels: vec![448, 32],
            decoder_channels: vec![32, 16, 8, 4],
            fc_grid: (15, 15),
            fc_pre_channels: 16,
            fc_input_budget: 100_000,
            theta: 0.7,
            upsample_mode: UpsampleMode::Nearest,
            head_channels: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Default widths with the given ablation variant.
    pub fn variant(variant: u8) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// A small model for `size x size` inputs with `levels` encoder stages,
    /// sized for quick training runs.
    pub fn tiny(size: usize, levels: usize, variant: u8) -> Self {
        let stages = [
            StageConfig::new(8, 1, 1),
            StageConfig::new(12, 1, 4),
            StageConfig::new(16, 1, 4),
            StageConfig::new(24, 1, 4),
        ];
        let decoder = [16, 8, 8, 8];
        let levels = levels.clamp(1, stages.len());
        let grid = size >> levels;
        Self {
            input_size: (size, size),
            variant,
            stem_channels: 8,
            encoder_stages: stages[..levels].to_vec(),
            skip_mode: SkipMode::Reduce,
            skip_reduced_channels: 4,
            center_channels: vec![24, 16],
            decoder_channels: decoder[..levels].to_vec(),
            fc_grid: (grid, grid),
            fc_pre_channels: 4,
            fc_input_budget: 100_000,
            theta: 0.7,
            upsample_mode: UpsampleMode::Nearest,
            head_channels: Vec::new(),
        }
    }

    /// Same widths at another square input size; the fc2d grid follows.
    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = (size, size);
        self.fc_grid = self.bottleneck_size();
        self
    }

    pub fn levels(&self) -> usize {
        self.encoder_stages.len()
    }

    /// Total downsampling factor of the encoder.
    pub fn max_stride(&self) -> usize {
        1 << self.levels()
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        let s = self.max_stride();
        (self.input_size.0 / s, self.input_size.1 / s)
    }

    pub fn uses_cdc(&self) -> bool {
        self.variant >= 2
    }

    pub fn uses_fc(&self) -> bool {
        self.variant == 3
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if !(1..=3).contains(&self.variant) {
            return fail(format!("variant must be 1, 2 or 3, got {}", self.variant));
        }
        if self.encoder_stages.is_empty() {
            return fail("at least one encoder stage is required".into());
        }
        let s = self.max_stride();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return fail(format!("input {h}x{w} is not divisible by the encoder stride {s}"));
        }
        if self.decoder_channels.len() != self.levels() {
            return fail(format!(
                "{} decoder levels for {} encoder stages",
                self.decoder_channels.len(),
                self.levels()
            ));
        }
        if self.center_channels.is_empty() {
            return fail("at least one center convolution is required".into());
        }
        let widths = [self.stem_channels, self.skip_reduced_channels]
            .into_iter()
            .chain(self.center_channels.iter().copied())
            .chain(self.decoder_channels.iter().copied())
            .chain(self.head_channels.iter().copied());
        if widths.into_iter().any(|c| c == 0)
            || self.encoder_stages.iter().any(|st| st.channels == 0 || st.blocks == 0 || st.expansion == 0)
        {
            return fail("channel counts, block counts and expansions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return fail(format!("theta {} outside [0, 1]", self.theta));
        }
        if self.uses_fc() {
            if self.fc_grid != self.bottleneck_size() {
                return fail(format!(
                    "fc grid {:?} must equal the bottleneck size {:?}",
                    self.fc_grid,
                    self.bottleneck_size()
                ));
            }
            if self.fc_pre_channels == 0 {
                return fail("fc_pre_channels must be positive".into());
            }
            let inputs = self.fc_pre_channels * self.fc_grid.0 * self.fc_grid.1;
            if inputs > self.fc_input_budget {
                let cells = self.fc_grid.0 * self.fc_grid.1;
                return fail(format!(
                    "fc2d takes {inputs} inputs (budget {}), which would need {} parameters",
                    self.fc_input_budget,
                    inputs * cells + cells
                ));
            }
        }
        Ok(())
    }
}
