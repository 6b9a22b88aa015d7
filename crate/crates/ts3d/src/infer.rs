use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ts3d_core::label::{ObjectLabel, CLASS_NAMES};
use ts3d_core::model::{Forward, Ts3d};
use ts3d_core::synth::StereoFrame;
use ts3d_core::tensor::{Graph, ParamStore};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::Result;
use crate::train::Trainer;

/// A trained model ready for inference.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub cfg: RunConfig,
    pub model: Ts3d,
    pub store: ParamStore<f32>,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Ts3d::new(&ckpt.config.model, &mut store, &mut rng)?;
        ckpt.restore_params(&mut store)?;
        model.set_priors(ckpt.priors.clone())?;
        Ok(Predictor { cfg: ckpt.config.clone(), model, store })
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Predictor { cfg: t.cfg.clone(), model: t.model.clone(), store: t.store.clone() }
    }

    /// Runs `f` on the forward pass of one frame.
    pub fn with_forward<R>(&self, frame: &StereoFrame, f: impl FnOnce(&Graph<'_, f32>, &Forward) -> Result<R>) -> Result<R> {
        let mut g = Graph::with_params(&self.store);
        let l = g.constant(frame.left.clone());
        let r = g.constant(frame.right.clone());
        let fwd = self.model.forward(&mut g, l, r, false)?;
        f(&g, &fwd)
    }

    /// Scored detections as KITTI labels.
    pub fn detect(&self, frame: &StereoFrame) -> Result<Vec<ObjectLabel>> {
        let (min_score, nms) = (self.cfg.infer.min_score, self.cfg.infer.nms_iou);
        self.with_forward(frame, |g, fwd| {
            let dets = self.model.detections(g, fwd, &frame.calib, min_score, nms)?;
            Ok(dets.iter().map(|d| d.to_label(CLASS_NAMES.get(d.class).copied().unwrap_or("Unknown"))).collect())
        })
    }

    /// Detections for every frame, computed in parallel, in input order.
    pub fn detect_all(&self, frames: &[&StereoFrame]) -> Result<Vec<Vec<ObjectLabel>>> {
        frames.par_iter().map(|f| self.detect(f)).collect()
    }
}
