//! Synthetic datasets in a KITTI-like directory layout.
//!
//! ```text
//! root/manifest.txt
//! root/image_2/<id>.ppm   left view
//! root/image_3/<id>.ppm   right view
//! root/label_2/<id>.txt
//! root/calib/<id>.txt
//! root/disp_pgt/<id>.pfm  pseudo ground-truth disparity, after `pseudogt`
//! root/disp_pgt/<id>_mask.pgm
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use ts3d_core::detect::{anchor_shapes, estimate_priors, AnchorPriors};
use ts3d_core::disphead::{block_match, BlockMatchParams, DisparityMap};
use ts3d_core::label::CLASS_NAMES;
use ts3d_core::synth::{synth_scene, SceneParams, StereoFrame};

use crate::config::{ConfigValue, RunConfig};
use crate::error::{read_text, write, Error, Result};
use crate::{image, kitti};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub id: String,
    pub split: Split,
    /// Scene seed the frame was rendered from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub scene: SceneParams,
    pub frames: Vec<FrameEntry>,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    /// Anchor 3D priors estimated from the training split.
    pub priors: AnchorPriors,
}

/// Per-frame scene seed: a SplitMix64 step of the dataset seed and index.
pub fn frame_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn scene_pairs(s: &SceneParams) -> Vec<(&'static str, String)> {
    vec![
        ("scene.width", s.width.render()),
        ("scene.height", s.height.render()),
        ("scene.focal", s.focal.render()),
        ("scene.baseline", s.baseline.render()),
        ("scene.camera_height", s.camera_height.render()),
        ("scene.min_depth", s.min_depth.render()),
        ("scene.max_depth", s.max_depth.render()),
        ("scene.min_objects", s.min_objects.render()),
        ("scene.max_objects", s.max_objects.render()),
        ("scene.pedestrian_fraction", s.pedestrian_fraction.render()),
        ("scene.free_yaw", s.free_yaw.render()),
        ("scene.texture_scale", s.texture_scale.render()),
        ("scene.wall_depth", s.wall_depth.render()),
    ]
}

fn set_scene(s: &mut SceneParams, key: &str, v: &str) -> Option<bool> {
    fn p<T: ConfigValue>(slot: &mut T, v: &str) -> Option<bool> {
        *slot = T::parse_value(v)?;
        Some(true)
    }
    match key {
        "scene.width" => p(&mut s.width, v),
        "scene.height" => p(&mut s.height, v),
        "scene.focal" => p(&mut s.focal, v),
        "scene.baseline" => p(&mut s.baseline, v),
        "scene.camera_height" => p(&mut s.camera_height, v),
        "scene.min_depth" => p(&mut s.min_depth, v),
        "scene.max_depth" => p(&mut s.max_depth, v),
        "scene.min_objects" => p(&mut s.min_objects, v),
        "scene.max_objects" => p(&mut s.max_objects, v),
        "scene.pedestrian_fraction" => p(&mut s.pedestrian_fraction, v),
        "scene.free_yaw" => p(&mut s.free_yaw, v),
        "scene.texture_scale" => p(&mut s.texture_scale, v),
        "scene.wall_depth" => p(&mut s.wall_depth, v),
        _ => Some(false),
    }
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::from("# ts3d synthetic dataset manifest\nversion=1\n");
        let _ = writeln!(s, "seed={}", self.seed);
        for (k, v) in scene_pairs(&self.scene) {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "anchor_scales={}", self.anchor_scales.render());
        let _ = writeln!(s, "anchor_ratios={}", self.anchor_ratios.render());
        let _ = writeln!(s, "priors.shape_z={}", self.priors.shape_z.render());
        for (c, size) in self.priors.class_size.iter().enumerate() {
            let _ = writeln!(s, "priors.class_size.{}={}", CLASS_NAMES.get(c).copied().unwrap_or("?"), size.to_vec().render());
        }
        for f in &self.frames {
            let _ = writeln!(s, "frame={} {} {}", f.id, f.split.name(), f.seed);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest {
            seed: 0,
            scene: SceneParams::desk(),
            frames: Vec::new(),
            anchor_scales: Vec::new(),
            anchor_ratios: Vec::new(),
            priors: AnchorPriors { shape_z: Vec::new(), class_size: Vec::new() },
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::parse(path, i + 1, msg.to_string());
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let bad = || err(&format!("bad value for {k}"));
            match k {
                "version" if v == "1" => {}
                "version" => return Err(err(&format!("unsupported manifest version {v}"))),
                "seed" => m.seed = v.parse().map_err(|_| bad())?,
                "anchor_scales" => m.anchor_scales = ConfigValue::parse_value(v).ok_or_else(bad)?,
                "anchor_ratios" => m.anchor_ratios = ConfigValue::parse_value(v).ok_or_else(bad)?,
                "priors.shape_z" => m.priors.shape_z = ConfigValue::parse_value(v).ok_or_else(bad)?,
                "frame" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    let [id, split, seed] = parts[..] else { return Err(err("frame needs `id split seed`")) };
                    m.frames.push(FrameEntry {
                        id: id.to_string(),
                        split: Split::parse(split).ok_or_else(|| err(&format!("unknown split `{split}`")))?,
                        seed: seed.parse().map_err(|_| bad())?,
                    });
                }
                _ => {
                    if let Some(class) = k.strip_prefix("priors.class_size.") {
                        let c = CLASS_NAMES.iter().position(|&n| n == class).ok_or_else(|| err(&format!("unknown class {class}")))?;
                        let size: Vec<f64> = ConfigValue::parse_value(v).ok_or_else(bad)?;
                        let size: [f64; 3] = size.try_into().map_err(|_| bad())?;
                        if m.priors.class_size.len() <= c {
                            m.priors.class_size.resize(c + 1, [0.0; 3]);
                        }
                        m.priors.class_size[c] = size;
                    } else if !set_scene(&mut m.scene, k, v).ok_or_else(bad)? {
                        return Err(err(&format!("unknown key `{k}`")));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn ids(&self, split: Option<Split>) -> Vec<&str> {
        self.frames.iter().filter(|f| split.map_or(true, |s| f.split == s)).map(|f| f.id.as_str()).collect()
    }
}

/// A manifest with its frames in memory, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub frames: Vec<StereoFrame>,
}

/// Rounds both views to 8 bits so in-memory frames equal what a pixmap
/// round trip yields.
pub fn quantize(frame: &mut StereoFrame) {
    for img in [&mut frame.left, &mut frame.right] {
        for v in img.data_mut() {
            *v = f32::from((v.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0;
        }
    }
}

impl Dataset {
    /// Renders the configured train and val frames, in parallel, and
    /// estimates anchor priors from the training labels.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let scene = cfg.scene();
        let n_train = cfg.synth.train_frames;
        let entries: Vec<FrameEntry> = (0..n_train + cfg.synth.val_frames)
            .map(|i| FrameEntry {
                id: format!("{i:06}"),
                split: if i < n_train { Split::Train } else { Split::Val },
                seed: frame_seed(cfg.synth.seed, i as u64),
            })
            .collect();
        let frames: Vec<StereoFrame> = entries
            .par_iter()
            .map(|e| {
                let mut f = synth_scene(e.seed, &scene);
                quantize(&mut f);
                f
            })
            .collect();
        let shapes = anchor_shapes(&cfg.model.anchor_scales, &cfg.model.anchor_ratios);
        let train_labels = frames.iter().zip(&entries).filter(|(_, e)| e.split == Split::Train).map(|(f, _)| f.labels.as_slice());
        let priors = estimate_priors(train_labels, &shapes, cfg.model.num_classes);
        let manifest = Manifest {
            seed: cfg.synth.seed,
            scene,
            frames: entries,
            anchor_scales: cfg.model.anchor_scales.clone(),
            anchor_ratios: cfg.model.anchor_ratios.clone(),
            priors,
        };
        Ok(Dataset { manifest, frames })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        self.manifest.frames.par_iter().zip(&self.frames).try_for_each(|(e, f)| -> Result<()> {
            image::write_ppm(&root.join("image_2").join(format!("{}.ppm", e.id)), &f.left)?;
            image::write_ppm(&root.join("image_3").join(format!("{}.ppm", e.id)), &f.right)?;
            kitti::write_labels(&root.join("label_2").join(format!("{}.txt", e.id)), &f.labels)?;
            kitti::write_calib(&root.join("calib").join(format!("{}.txt", e.id)), &f.calib)
        })?;
        write(&root.join("manifest.txt"), self.manifest.render())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.txt");
        let manifest = Manifest::parse(&read_text(&path)?, &path)?;
        let frames = manifest.frames.par_iter().map(|e| load_frame(root, &e.id)).collect::<Result<Vec<_>>>()?;
        for (e, f) in manifest.frames.iter().zip(&frames) {
            if f.left.shape()[..2] != [manifest.scene.height, manifest.scene.width] {
                return Err(Error::Format(format!("frame {} is {:?}, manifest says {}x{}", e.id, f.left.shape(), manifest.scene.width, manifest.scene.height)));
            }
        }
        Ok(Dataset { manifest, frames })
    }

    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| split.map_or(true, |s| self.manifest.frames[i].split == s)).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.manifest.frames.iter().position(|f| f.id == id)
    }

    /// Priors for a model with the given anchors: the manifest's when its
    /// anchors agree, otherwise re-estimated from the training labels.
    pub fn priors_for(&self, cfg: &RunConfig) -> AnchorPriors {
        let m = &self.manifest;
        let fits = m.anchor_scales == cfg.model.anchor_scales
            && m.anchor_ratios == cfg.model.anchor_ratios
            && m.priors.class_size.len() == cfg.model.num_classes;
        if fits {
            return m.priors.clone();
        }
        let shapes = anchor_shapes(&cfg.model.anchor_scales, &cfg.model.anchor_ratios);
        let labels = self.indices(Some(Split::Train)).into_iter().map(|i| self.frames[i].labels.as_slice()).collect::<Vec<_>>();
        estimate_priors(labels, &shapes, cfg.model.num_classes)
    }
}

pub fn load_frame(root: &Path, id: &str) -> Result<StereoFrame> {
    Ok(StereoFrame {
        left: image::read_ppm(&root.join("image_2").join(format!("{id}.ppm")))?,
        right: image::read_ppm(&root.join("image_3").join(format!("{id}.ppm")))?,
        calib: kitti::read_calib(&root.join("calib").join(format!("{id}.txt")))?,
        labels: kitti::read_labels(&root.join("label_2").join(format!("{id}.txt")))?,
    })
}

pub fn block_match_params(cfg: &RunConfig) -> BlockMatchParams {
    BlockMatchParams { window: cfg.pgt.window, uniqueness: cfg.pgt.uniqueness as f32, ..BlockMatchParams::new(cfg.pgt.max_disparity) }
}

/// Full-resolution block-matching disparity of a frame's left view.
pub fn pseudo_gt(frame: &StereoFrame, cfg: &RunConfig) -> Result<DisparityMap> {
    Ok(block_match(&frame.left, &frame.right, &block_match_params(cfg))?)
}

fn pgt_paths(root: &Path, id: &str) -> (PathBuf, PathBuf) {
    let dir = root.join("disp_pgt");
    (dir.join(format!("{id}.pfm")), dir.join(format!("{id}_mask.pgm")))
}

pub fn save_pseudo_gt(root: &Path, id: &str, map: &DisparityMap) -> Result<()> {
    let (disp, mask) = pgt_paths(root, id);
    image::write_pfm(&disp, map.width, map.height, &map.disparity)?;
    let m: Vec<f32> = map.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    image::write_pgm(&mask, map.width, map.height, &m)
}

/// Cached pseudo ground truth, `None` when the frame has no cache entry.
pub fn load_pseudo_gt(root: &Path, id: &str) -> Result<Option<DisparityMap>> {
    let (disp, mask) = pgt_paths(root, id);
    if !disp.exists() {
        return Ok(None);
    }
    let (w, h, disparity) = image::read_pfm(&disp)?;
    let (mw, mh, valid) = image::read_pgm(&mask)?;
    if (mw, mh) != (w, h) {
        return Err(Error::Format(format!("{}: mask is {mw}x{mh}, disparity {w}x{h}", mask.display())));
    }
    Ok(Some(DisparityMap { width: w, height: h, disparity, valid: valid.iter().map(|&v| v > 0.5).collect() }))
}

/// Computes and caches pseudo ground truth for every frame.
pub fn build_pseudo_gt(root: &Path, data: &Dataset, cfg: &RunConfig) -> Result<()> {
    data.manifest.frames.par_iter().zip(&data.frames).try_for_each(|(e, f)| save_pseudo_gt(root, &e.id, &pseudo_gt(f, cfg)?))
}
