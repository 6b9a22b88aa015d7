//! Model and loss hyperparameters with their validation rules.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Cross-scale fusion scheme applied to the stereo cost-volume pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidVariant {
    /// Bin-preserving bottom-up aggregation by strided convolution and
    /// channel concatenation.
    Spfpn,
    /// Coarse-to-fine upsample-and-sum, which mixes disparity bins.
    TopdownFpn,
    /// Top-down sum followed by a bottom-up sum.
    BifpnLike,
}

impl PyramidVariant {
    pub fn name(self) -> &'static str {
        match self {
            PyramidVariant::Spfpn => "spfpn",
            PyramidVariant::TopdownFpn => "topdown_fpn",
            PyramidVariant::BifpnLike => "bifpn_like",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spfpn" => Some(PyramidVariant::Spfpn),
            "topdown_fpn" => Some(PyramidVariant::TopdownFpn),
            "bifpn_like" => Some(PyramidVariant::BifpnLike),
            _ => None,
        }
    }
}

/// Positional encoding added to the decoder queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMode {
    /// Sinusoidal 2D block concatenated with the softmax of the disparity logits.
    Dape,
    /// Sinusoidal 2D encoding over the full decoder width.
    Sine2d,
    /// One-hot argmax disparity block, zeros elsewhere.
    OneHot,
    /// No positional encoding.
    None,
}

impl PeMode {
    pub fn name(self) -> &'static str {
        match self {
            PeMode::Dape => "dape",
            PeMode::Sine2d => "sine2d",
            PeMode::OneHot => "onehot",
            PeMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dape" => Some(PeMode::Dape),
            "sine2d" => Some(PeMode::Sine2d),
            "onehot" => Some(PeMode::OneHot),
            "none" => Some(PeMode::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input width and height in pixels; both divisible by 16.
    pub width: usize,
    pub height: usize,
    /// Correlation bins of the stride-4, stride-8 and stride-16 cost volumes.
    pub bins: [usize; 3],
    pub backbone_channels: usize,
    pub blocks_per_stage: usize,
    pub c_dec: usize,
    pub c_disp: usize,
    pub n_dec: usize,
    pub heads: usize,
    pub points: usize,
    pub ffn_mult: usize,
    /// Foreground classes; the class head adds one background channel.
    pub num_classes: usize,
    /// Anchor heights in pixels.
    pub anchor_scales: Vec<f64>,
    /// Anchor width/height ratios.
    pub anchor_ratios: Vec<f64>,
    pub pyramid: PyramidVariant,
    pub pe: PeMode,
    pub intermediate_supervision: bool,
}

impl ModelConfig {
    /// Full-scale configuration: 1280×288 crops, 24/48/96 bins, eight-head
    /// four-layer decoder.
    pub fn full() -> Self {
        ModelConfig {
            width: 1280,
            height: 288,
            bins: [24, 48, 96],
            backbone_channels: 128,
            blocks_per_stage: 3,
            c_dec: 256,
            c_disp: 96,
            n_dec: 4,
            heads: 8,
            points: 4,
            ffn_mult: 4,
            num_classes: 2,
            anchor_scales: vec![48.0, 96.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            pyramid: PyramidVariant::Spfpn,
            pe: PeMode::Dape,
            intermediate_supervision: true,
        }
    }

    /// Desk-scale configuration for 256×128 synthetic scenes.
    pub fn desk() -> Self {
        ModelConfig {
            width: 256,
            height: 128,
            bins: [8, 16, 32],
            backbone_channels: 32,
            blocks_per_stage: 2,
            c_dec: 64,
            c_disp: 24,
            n_dec: 2,
            heads: 8,
            points: 4,
            ffn_mult: 4,
            num_classes: 2,
            anchor_scales: vec![32.0],
            anchor_ratios: vec![1.5],
            pyramid: PyramidVariant::Spfpn,
            pe: PeMode::Dape,
            intermediate_supervision: true,
        }
    }

    /// Query grid `(columns, rows)` at stride 16.
    pub fn query_grid(&self) -> (usize, usize) {
        (self.width / 16, self.height / 16)
    }

    pub fn num_queries(&self) -> usize {
        let (w, h) = self.query_grid();
        w * h
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// Channel count of the aggregated stereo feature at each level.
    pub fn stereo_channels(&self) -> [usize; 3] {
        match self.pyramid {
            PyramidVariant::Spfpn => {
                let c1 = self.bins[0];
                let c2 = self.bins[1] + c1;
                let c3 = self.bins[2] + c2;
                [c1, c2, c3]
            }
            PyramidVariant::TopdownFpn | PyramidVariant::BifpnLike => self.bins,
        }
    }

    /// Rejects invalid combinations, naming the violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.width == 0 || self.height == 0 || self.width % 16 != 0 || self.height % 16 != 0 {
            problems.push(format!("W={} and H={} must be positive multiples of 16", self.width, self.height));
        }
        if self.c_disp >= self.c_dec {
            problems.push(format!("C_disp={} must be smaller than C_dec={}", self.c_disp, self.c_dec));
        }
        if self.c_disp == 0 {
            problems.push(String::from("C_disp must be positive"));
        }
        if self.heads == 0 || self.c_dec % self.heads != 0 {
            problems.push(format!("C_dec={} must be divisible by the head count M={}", self.c_dec, self.heads));
        }
        let sine_width = match self.pe {
            PeMode::Dape => self.c_dec.saturating_sub(self.c_disp),
            PeMode::Sine2d => self.c_dec,
            PeMode::OneHot | PeMode::None => 0,
        };
        if sine_width % 4 != 0 {
            problems.push(format!("sinusoidal width {sine_width} must be divisible by 4"));
        }
        if self.bins.contains(&0) {
            problems.push(format!("bin counts {:?} must be positive", self.bins));
        }
        if self.points == 0 || self.ffn_mult == 0 || self.backbone_channels < 2 || self.blocks_per_stage == 0 {
            problems.push(String::from("K, FFN multiplier, C_bb ≥ 2 and blocks per stage must be positive"));
        }
        if self.num_classes == 0 {
            problems.push(String::from("at least one foreground class is required"));
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            problems.push(String::from("anchor scales and ratios must be non-empty"));
        }
        if self.anchor_scales.iter().chain(&self.anchor_ratios).any(|&v| !(v > 0.0)) {
            problems.push(String::from("anchor scales and ratios must be positive"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub tau_fg: f64,
    pub tau_bg: f64,
    /// Each ground truth's best anchor also becomes positive when no anchor
    /// clears `tau_fg` for it.
    pub low_quality_matches: bool,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
    pub disp_sigma: f64,
    /// Weight of the disparity term relative to the detection terms.
    pub disp_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau_fg: 0.5,
            tau_bg: 0.4,
            low_quality_matches: true,
            focal_alpha: 20.0,
            focal_gamma: 2.0,
            smooth_l1_beta: 0.04,
            disp_sigma: 0.5,
            disp_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_bg <= self.tau_fg && self.tau_bg >= 0.0 && self.tau_fg <= 1.0) {
            return Err(Error::config(format!("need 0 ≤ τ_bg={} ≤ τ_fg={} ≤ 1", self.tau_bg, self.tau_fg)));
        }
        if !(self.disp_sigma > 0.0) || !(self.smooth_l1_beta > 0.0) {
            return Err(Error::config("σ and β must be positive"));
        }
        if !(self.focal_alpha > 0.0) || self.focal_gamma < 0.0 {
            return Err(Error::config("focal α must be positive and γ non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_query_count() {
        let cfg = ModelConfig::full();
        cfg.validate().unwrap();
        assert_eq!(cfg.query_grid(), (80, 18));
        assert_eq!(cfg.num_queries(), 1440);
    }

    #[test]
    fn spfpn_channel_recursion() {
        let cfg = ModelConfig::full();
        assert_eq!(cfg.stereo_channels(), [24, 72, 168]);
    }

    #[test]
    fn rejects_wide_disparity_block() {
        let cfg = ModelConfig { c_disp: 64, ..ModelConfig::desk() };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("C_disp=64 must be smaller than C_dec=64")));
    }

    #[test]
    fn rejects_indivisible_extent() {
        let cfg = ModelConfig { width: 250, ..ModelConfig::desk() };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("multiples of 16")));
    }
}
