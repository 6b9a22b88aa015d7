#![allow(dead_code)]

use ts3d::config::RunConfig;
use ts3d_core::gradsuite::{toy_config, toy_scene_params};

/// Toy-sized run: the smallest model on 64×32 scenes.
pub fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.model = toy_config();
    let s = toy_scene_params();
    c.synth.focal = s.focal;
    c.synth.baseline = s.baseline;
    c.synth.min_depth = s.min_depth;
    c.synth.max_depth = s.max_depth;
    c.synth.min_objects = 1;
    c.synth.max_objects = 2;
    c.synth.wall_depth = s.wall_depth;
    c.synth.train_frames = 4;
    c.synth.val_frames = 2;
    c.pgt.max_disparity = 8;
    c.pgt.window = 5;
    c.train.steps = 20;
    c.train.checkpoint_every = 10;
    c
}
