//! Run configuration: flat `key=value` text with `#` comments.
//!
//! Keys are dotted by section (`model.`, `loss.`, `train.`, `infer.`,
//! `synth.`, `pgt.`). An optional `preset=desk|full` line picks the base the
//! other keys override; it must come before any other key.

use std::fmt::Write as _;
use std::path::Path;

use ts3d_core::config::{LossConfig, ModelConfig, PeMode, PyramidVariant};
use ts3d_core::synth::SceneParams;
use ts3d_core::tensor::AdamWConfig;

use crate::error::{read_text, write, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub flip_prob: f64,
    pub jitter: bool,
    /// Supervise the disparity head with block-matching pseudo ground truth.
    pub disparity_supervision: bool,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub min_score: f64,
    pub nms_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_frames: usize,
    pub val_frames: usize,
    pub focal: f64,
    pub baseline: f64,
    pub camera_height: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub pedestrian_fraction: f64,
    pub free_yaw: bool,
    pub texture_scale: f64,
    pub wall_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGtConfig {
    pub max_disparity: usize,
    pub window: usize,
    pub uniqueness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub synth: SynthConfig,
    pub pgt: PseudoGtConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "full" => Some(Preset::Full),
            _ => None,
        }
    }
}

/// A configuration value with a text form and a numeric form for
/// checkpoints.
pub trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> Option<Self>;
    fn encode(&self) -> Vec<f64>;
    fn decode(v: &[f64]) -> Option<Self>;
}

fn single(v: &[f64]) -> Option<f64> {
    (v.len() == 1).then(|| v[0])
}

fn whole(x: f64) -> Option<u64> {
    (x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15).then_some(x as u64)
}

impl ConfigValue for f64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn encode(&self) -> Vec<f64> {
        vec![*self]
    }
    fn decode(v: &[f64]) -> Option<Self> {
        single(v)
    }
}

impl ConfigValue for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn encode(&self) -> Vec<f64> {
        // Seeds above 2^53 would not survive the f64 round trip; split them.
        vec![(*self >> 32) as f64, (*self & 0xffff_ffff) as f64]
    }
    fn decode(v: &[f64]) -> Option<Self> {
        match v {
            [hi, lo] => Some((whole(*hi)? << 32) | whole(*lo)?),
            _ => None,
        }
    }
}

impl ConfigValue for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn encode(&self) -> Vec<f64> {
        vec![*self as f64]
    }
    fn decode(v: &[f64]) -> Option<Self> {
        whole(single(v)?).map(|x| x as usize)
    }
}

impl ConfigValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        }
    }
    fn encode(&self) -> Vec<f64> {
        vec![f64::from(u8::from(*self))]
    }
    fn decode(v: &[f64]) -> Option<Self> {
        match single(v)? {
            x if x == 0.0 => Some(false),
            x if x == 1.0 => Some(true),
            _ => None,
        }
    }
}

impl ConfigValue for Vec<f64> {
    fn render(&self) -> String {
        self.iter().map(f64::render).collect::<Vec<_>>().join(",")
    }
    fn parse_value(s: &str) -> Option<Self> {
        s.split(',').map(|p| f64::parse_value(p.trim())).collect()
    }
    fn encode(&self) -> Vec<f64> {
        self.clone()
    }
    fn decode(v: &[f64]) -> Option<Self> {
        Some(v.to_vec())
    }
}

impl ConfigValue for [usize; 3] {
    fn render(&self) -> String {
        self.map(|v| v.to_string()).join(",")
    }
    fn parse_value(s: &str) -> Option<Self> {
        let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        v.try_into().ok()
    }
    fn encode(&self) -> Vec<f64> {
        self.iter().map(|&v| v as f64).collect()
    }
    fn decode(v: &[f64]) -> Option<Self> {
        let v: Vec<usize> = v.iter().map(|&x| whole(x).map(|x| x as usize)).collect::<Option<_>>()?;
        v.try_into().ok()
    }
}

macro_rules! named_enum {
    ($ty:ty, [$($variant:expr),+]) => {
        impl ConfigValue for $ty {
            fn render(&self) -> String {
                self.name().to_string()
            }
            fn parse_value(s: &str) -> Option<Self> {
                <$ty>::parse(s)
            }
            fn encode(&self) -> Vec<f64> {
                let all = [$($variant),+];
                vec![all.iter().position(|v| v == self).unwrap_or(0) as f64]
            }
            fn decode(v: &[f64]) -> Option<Self> {
                let all = [$($variant),+];
                all.get(whole(single(v)?)? as usize).copied()
            }
        }
    };
}

named_enum!(PyramidVariant, [PyramidVariant::Spfpn, PyramidVariant::TopdownFpn, PyramidVariant::BifpnLike]);
named_enum!(PeMode, [PeMode::Dape, PeMode::Sine2d, PeMode::OneHot, PeMode::None]);
named_enum!(Preset, [Preset::Desk, Preset::Full]);

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every configuration key in file order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            /// Text form of a key's value.
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.render()),)*
                    _ => None,
                }
            }

            pub fn get_encoded(&self, key: &str) -> Option<Vec<f64>> {
                match key {
                    $($key => Some(self.$($field).+.encode()),)*
                    _ => None,
                }
            }

            fn set_raw(&mut self, key: &str, value: &str) -> Result<()> {
                let bad = || Error::Config(format!("`{value}` is not a valid value for {key}"));
                match key {
                    $($key => self.$($field).+ = ConfigValue::parse_value(value).ok_or_else(bad)?,)*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            fn set_encoded(&mut self, key: &str, value: &[f64]) -> Result<()> {
                let bad = || Error::Format(format!("checkpoint value for {key} is malformed"));
                match key {
                    $($key => self.$($field).+ = ConfigValue::decode(value).ok_or_else(bad)?,)*
                    _ => return Err(Error::Format(format!("checkpoint carries unknown key `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

keys! {
    "preset" => preset;
    "model.width" => model.width;
    "model.height" => model.height;
    "model.bins" => model.bins;
    "model.backbone_channels" => model.backbone_channels;
    "model.blocks_per_stage" => model.blocks_per_stage;
    "model.c_dec" => model.c_dec;
    "model.c_disp" => model.c_disp;
    "model.n_dec" => model.n_dec;
    "model.heads" => model.heads;
    "model.points" => model.points;
    "model.ffn_mult" => model.ffn_mult;
    "model.num_classes" => model.num_classes;
    "model.anchor_scales" => model.anchor_scales;
    "model.anchor_ratios" => model.anchor_ratios;
    "model.pyramid" => model.pyramid;
    "model.pe" => model.pe;
    "model.intermediate_supervision" => model.intermediate_supervision;
    "loss.tau_fg" => loss.tau_fg;
    "loss.tau_bg" => loss.tau_bg;
    "loss.low_quality_matches" => loss.low_quality_matches;
    "loss.focal_alpha" => loss.focal_alpha;
    "loss.focal_gamma" => loss.focal_gamma;
    "loss.smooth_l1_beta" => loss.smooth_l1_beta;
    "loss.disp_sigma" => loss.disp_sigma;
    "loss.disp_weight" => loss.disp_weight;
    "train.lr" => train.lr;
    "train.weight_decay" => train.weight_decay;
    "train.batch_size" => train.batch_size;
    "train.steps" => train.steps;
    "train.seed" => train.seed;
    "train.grad_clip" => train.grad_clip;
    "train.flip_prob" => train.flip_prob;
    "train.jitter" => train.jitter;
    "train.disparity_supervision" => train.disparity_supervision;
    "train.checkpoint_every" => train.checkpoint_every;
    "infer.min_score" => infer.min_score;
    "infer.nms_iou" => infer.nms_iou;
    "synth.seed" => synth.seed;
    "synth.train_frames" => synth.train_frames;
    "synth.val_frames" => synth.val_frames;
    "synth.focal" => synth.focal;
    "synth.baseline" => synth.baseline;
    "synth.camera_height" => synth.camera_height;
    "synth.min_depth" => synth.min_depth;
    "synth.max_depth" => synth.max_depth;
    "synth.min_objects" => synth.min_objects;
    "synth.max_objects" => synth.max_objects;
    "synth.pedestrian_fraction" => synth.pedestrian_fraction;
    "synth.free_yaw" => synth.free_yaw;
    "synth.texture_scale" => synth.texture_scale;
    "synth.wall_depth" => synth.wall_depth;
    "pgt.max_disparity" => pgt.max_disparity;
    "pgt.window" => pgt.window;
    "pgt.uniqueness" => pgt.uniqueness;
}

/// Keys that change the parameter set or its meaning; an inference run
/// must agree with its checkpoint on these.
pub fn is_model_key(key: &str) -> bool {
    key.starts_with("model.")
}

/// Keys a resumed run must share with its checkpoint for the trajectory to
/// continue unchanged.
pub fn is_resume_key(key: &str) -> bool {
    is_model_key(key) || key.starts_with("loss.") || (key.starts_with("train.") && key != "train.checkpoint_every")
}

impl RunConfig {
    /// Desk-scale synthetic setup: the desk model on 256×128 scenes.
    pub fn desk() -> Self {
        let scene = SceneParams::desk();
        RunConfig {
            preset: Preset::Desk,
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            train: TrainConfig {
                lr: 1e-3,
                weight_decay: 1e-4,
                batch_size: 1,
                steps: 2000,
                seed: 0,
                grad_clip: 10.0,
                flip_prob: 0.5,
                jitter: true,
                disparity_supervision: true,
                checkpoint_every: 500,
            },
            infer: InferConfig { min_score: 0.1, nms_iou: 0.4 },
            synth: SynthConfig {
                seed: 0,
                train_frames: 64,
                val_frames: 32,
                focal: scene.focal,
                baseline: scene.baseline,
                camera_height: scene.camera_height,
                min_depth: scene.min_depth,
                max_depth: scene.max_depth,
                min_objects: scene.min_objects,
                max_objects: scene.max_objects,
                pedestrian_fraction: scene.pedestrian_fraction,
                free_yaw: scene.free_yaw,
                texture_scale: scene.texture_scale,
                wall_depth: scene.wall_depth,
            },
            pgt: PseudoGtConfig { max_disparity: 48, window: 7, uniqueness: 0.9 },
        }
    }

    /// Full-scale defaults: 1280×288 crops, AdamW at 2e-4 with an equivalent
    /// batch of 32, KITTI-like camera.
    pub fn full() -> Self {
        let mut c = RunConfig::desk();
        c.preset = Preset::Full;
        c.model = ModelConfig::full();
        c.train.lr = 2e-4;
        c.train.batch_size = 32;
        c.train.steps = 60_000;
        c.train.grad_clip = 35.0;
        c.train.checkpoint_every = 2000;
        c.synth.focal = 721.5;
        c.synth.baseline = 0.54;
        c.synth.max_depth = 40.0;
        c.synth.max_objects = 8;
        c.pgt.max_disparity = 192;
        c
    }

    pub fn for_preset(p: Preset) -> Self {
        match p {
            Preset::Desk => RunConfig::desk(),
            Preset::Full => RunConfig::full(),
        }
    }

    pub fn scene(&self) -> SceneParams {
        SceneParams {
            width: self.model.width,
            height: self.model.height,
            focal: self.synth.focal,
            baseline: self.synth.baseline,
            camera_height: self.synth.camera_height,
            min_depth: self.synth.min_depth,
            max_depth: self.synth.max_depth,
            min_objects: self.synth.min_objects,
            max_objects: self.synth.max_objects,
            pedestrian_fraction: self.synth.pedestrian_fraction,
            free_yaw: self.synth.free_yaw,
            texture_scale: self.synth.texture_scale,
            wall_depth: self.synth.wall_depth,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            base_lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            total_steps: self.train.steps,
            max_grad_norm: (self.train.grad_clip > 0.0).then_some(self.train.grad_clip),
            ..AdamWConfig::default()
        }
    }

    /// Sets one key; `preset` resets every other key to that preset.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "preset" {
            let p = Preset::parse(value).ok_or_else(|| Error::Config(format!("unknown preset `{value}`")))?;
            *self = RunConfig::for_preset(p);
            return Ok(());
        }
        self.set_raw(key, value)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Parses configuration text on top of the desk preset.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::desk();
        let mut seen_other = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" && seen_other {
                return Err(Error::parse(path, i + 1, "preset must precede the keys it would reset"));
            }
            seen_other |= k != "preset";
            cfg.set(k, v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&read_text(path)?, path)
    }

    /// Every key with its resolved value.
    pub fn render(&self) -> String {
        let mut s = String::from("# resolved ts3d configuration\n");
        for k in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).unwrap_or_default());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.render())
    }

    /// Rebuilds a configuration from `(key, encoded value)` pairs; keys
    /// not present keep their desk defaults.
    pub fn from_encoded<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<Self> {
        let mut cfg = RunConfig::desk();
        let pairs: Vec<_> = pairs.into_iter().collect();
        if let Some((_, v)) = pairs.iter().find(|(k, _)| *k == "preset") {
            let p = Preset::decode(v).ok_or_else(|| Error::Format("checkpoint preset is malformed".into()))?;
            cfg = RunConfig::for_preset(p);
        }
        for (k, v) in pairs {
            cfg.set_encoded(k, v)?;
        }
        Ok(cfg)
    }

    /// Keys on which two configurations disagree, restricted by `filter`.
    pub fn diff(&self, other: &RunConfig, filter: impl Fn(&str) -> bool) -> Vec<String> {
        KEYS.iter().filter(|k| filter(k) && self.get(k) != other.get(k)).map(|k| k.to_string()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let mut problems = Vec::new();
        let t = &self.train;
        if !(t.lr > 0.0) || t.weight_decay < 0.0 || t.grad_clip < 0.0 {
            problems.push("train.lr must be positive and weight decay and clip non-negative".to_string());
        }
        if t.batch_size == 0 || t.steps == 0 {
            problems.push("train.batch_size and train.steps must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&t.flip_prob) {
            problems.push(format!("train.flip_prob={} must lie in [0, 1]", t.flip_prob));
        }
        if !(0.0..=1.0).contains(&self.infer.nms_iou) || !(0.0..=1.0).contains(&self.infer.min_score) {
            problems.push("infer.nms_iou and infer.min_score must lie in [0, 1]".to_string());
        }
        let s = &self.synth;
        if !(s.focal > 0.0 && s.baseline > 0.0 && s.min_depth > 0.0 && s.min_depth <= s.max_depth) {
            problems.push("synth needs positive focal, baseline and 0 < min_depth ≤ max_depth".to_string());
        }
        if s.min_objects > s.max_objects || !(0.0..=1.0).contains(&s.pedestrian_fraction) {
            problems.push("synth needs min_objects ≤ max_objects and pedestrian_fraction in [0, 1]".to_string());
        }
        if s.train_frames == 0 {
            problems.push("synth.train_frames must be positive".to_string());
        }
        if self.pgt.window % 2 == 0 || self.pgt.max_disparity == 0 || !(self.pgt.uniqueness > 0.0) {
            problems.push("pgt.window must be odd and pgt.max_disparity and pgt.uniqueness positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
