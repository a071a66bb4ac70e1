use alloc::format;

use crate::error::Error;

/// Total spatial stride of the toy encoder.
pub const ENCODER_STRIDE: usize = 8;

/// Largest fusion grid (`H'·W'`) the affinity stage accepts.
pub const MAX_FUSION_CELLS: usize = 256;

/// Architecture of the per-platform network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Side of the square input views.
    pub view_size: usize,
    pub in_channels: usize,
    pub stage_channels: [usize; 3],
    /// `C`, channels of the exchanged feature map.
    pub feature_channels: usize,
    /// `K`, number of segmentation classes.
    pub num_classes: usize,
    pub qk_dim: usize,
    /// `r`, size of the compressed request vector.
    pub request_dim: usize,
    /// `C'`, channels of the affinity embeddings.
    pub embed_dim: usize,
    /// Sinusoid frequencies per axis in the cell-position code read by the
    /// affinity embeddings; 0 leaves them content-only.
    pub position_freqs: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            view_size: 64,
            in_channels: 3,
            stage_channels: [8, 16, 32],
            feature_channels: 32,
            num_classes: 6,
            qk_dim: 128,
            request_dim: 32,
            embed_dim: 8,
            position_freqs: 4,
        }
    }
}

impl NetConfig {
    pub fn feature_size(&self) -> usize {
        self.view_size / ENCODER_STRIDE
    }

    /// Channels of the position code, `4·position_freqs`.
    pub fn position_channels(&self) -> usize {
        4 * self.position_freqs
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.view_size == 0 || self.view_size % ENCODER_STRIDE != 0 {
            return Err(Error::Config(format!(
                "view size {} must be a positive multiple of {ENCODER_STRIDE}",
                self.view_size
            )));
        }
        let cells = self.feature_size() * self.feature_size();
        if cells > MAX_FUSION_CELLS {
            return Err(Error::Config(format!(
                "fusion grid of {cells} cells exceeds the {MAX_FUSION_CELLS}-cell limit"
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!("need 2..=256 classes, got {}", self.num_classes)));
        }
        if self.request_dim == 0 || self.request_dim > self.qk_dim {
            return Err(Error::Config(format!(
                "request dim {} must be in 1..={} (the key dim)",
                self.request_dim, self.qk_dim
            )));
        }
        if self.embed_dim == 0 || self.embed_dim * 4 > self.feature_channels {
            return Err(Error::Config(format!(
                "embed dim {} must be in 1..={} (C/4)",
                self.embed_dim,
                self.feature_channels / 4
            )));
        }
        if self.in_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Inference-time collaboration policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SmimConfig {
    /// A platform requests help when its confidence is strictly below this value.
    pub request_threshold: f64,
    /// Apply the fusion formula literally to non-requesters (`p·F` instead of `F`).
    pub eq9_literal: bool,
}

impl Default for SmimConfig {
    fn default() -> Self {
        SmimConfig { request_threshold: 0.8, eq9_literal: false }
    }
}

impl SmimConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..=1.0).contains(&self.request_threshold) {
            return Err(Error::Config(format!(
                "request threshold {} outside [0, 1]",
                self.request_threshold
            )));
        }
        Ok(())
    }
}

/// Candidates must exceed `1/(N−1)` to become supporters.
pub fn collaboration_threshold(platforms: usize) -> f64 {
    1.0 / (platforms.saturating_sub(1).max(1)) as f64
}
