//! Training loop with reproducible per-step randomness.
//!
//! Every random choice of step `s` (which frames, flips, colour jitter) is
//! drawn from a generator keyed by `(train.seed, s)`, and frame order comes
//! from per-epoch permutations keyed by `(train.seed, epoch)`. A run resumed
//! from a checkpoint therefore continues exactly where it stopped.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ts3d_core::detect::{build_targets, AnchorPriors};
use ts3d_core::disphead::DisparityMap;
use ts3d_core::model::{FrameTargets, Ts3d, SUPERVISION_STRIDE};
use ts3d_core::synth::{flip_frame, photometric_jitter, Jitter, StereoFrame};
use ts3d_core::tensor::{adamw_step, Gradients, Graph, OptimState, ParamStore};
use ts3d_core::Element;

use crate::checkpoint::Checkpoint;
use crate::config::{is_resume_key, RunConfig};
use crate::dataset::pseudo_gt;
use crate::error::{Error, Result};

const EPOCH_STREAM: u64 = 0x6570_6f63_6873;

/// One orientation of a training frame with its precomputed targets.
#[derive(Debug, Clone)]
pub struct View {
    pub frame: StereoFrame,
    pub targets: FrameTargets,
}

/// A training frame, plus its horizontally flipped twin when flips are on.
#[derive(Debug, Clone)]
pub struct Sample {
    pub original: View,
    pub flipped: Option<View>,
}

/// Metrics of one optimisation step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Number of completed updates, counting this one.
    pub step: u64,
    pub lr: f64,
    pub cls: f64,
    pub reg: f64,
    pub orient: f64,
    pub disp: f64,
    pub total: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} lr={:e} cls={} reg={} orient={} disp={} total={}",
            self.step, self.lr, self.cls, self.reg, self.orient, self.disp, self.total
        )
    }
}

impl StepRecord {
    /// Parses a line written by `Display`.
    pub fn parse(line: &str) -> Option<Self> {
        let mut r = StepRecord { step: 0, lr: 0.0, cls: 0.0, reg: 0.0, orient: 0.0, disp: 0.0, total: 0.0 };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            let x: f64 = v.parse().ok()?;
            match k {
                "step" => r.step = v.parse().ok()?,
                "lr" => r.lr = x,
                "cls" => r.cls = x,
                "reg" => r.reg = x,
                "orient" => r.orient = x,
                "disp" => r.disp = x,
                "total" => r.total = x,
                _ => return None,
            }
            seen += 1;
        }
        (seen == 7).then_some(r)
    }
}

fn view(model: &Ts3d, cfg: &RunConfig, frame: StereoFrame, disparity: Option<DisparityMap>) -> Result<View> {
    let detection = build_targets(&model.anchors, &frame.labels, cfg.model.num_classes, &model.priors, &frame.calib, &cfg.loss)?;
    let disparity = disparity.map(|d| d.downsample(SUPERVISION_STRIDE));
    Ok(View { frame, targets: FrameTargets { detection, disparity } })
}

/// Builds training samples. Pseudo ground truth comes from `cached` when
/// given and is otherwise computed by block matching; flipped twins always
/// get their own block-matching pass.
pub fn prepare_samples(
    model: &Ts3d,
    cfg: &RunConfig,
    frames: &[StereoFrame],
    cached: Option<Vec<Option<DisparityMap>>>,
) -> Result<Vec<Sample>> {
    let cached = cached.unwrap_or_else(|| vec![None; frames.len()]);
    if cached.len() != frames.len() {
        return Err(Error::Config(format!("{} pseudo ground-truth maps for {} frames", cached.len(), frames.len())));
    }
    let supervise = cfg.train.disparity_supervision;
    frames
        .par_iter()
        .zip(cached)
        .map(|(f, c)| {
            let disp = match (supervise, c) {
                (false, _) => None,
                (true, Some(c)) => Some(c),
                (true, None) => Some(pseudo_gt(f, cfg)?),
            };
            let original = view(model, cfg, f.clone(), disp)?;
            let flipped = if cfg.train.flip_prob > 0.0 {
                let ff = flip_frame(f);
                let disp = if supervise { Some(pseudo_gt(&ff, cfg)?) } else { None };
                Some(view(model, cfg, ff, disp)?)
            } else {
                None
            };
            Ok(Sample { original, flipped })
        })
        .collect()
}

/// Which sample to use at one batch slot and how to augment it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub flip: bool,
    pub jitter: Option<Jitter>,
}

/// The batch of step `step` (zero-based).
pub fn plan_step(cfg: &RunConfig, num_samples: usize, step: u64) -> Vec<Pick> {
    let b = cfg.train.batch_size as u64;
    let n = num_samples as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(step + 1);
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    (0..b)
        .map(|k| {
            let j = step * b + k;
            let epoch = j / n;
            if epoch != perm_epoch {
                let mut prng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ EPOCH_STREAM);
                prng.set_stream(epoch);
                perm = (0..num_samples).collect();
                perm.shuffle(&mut prng);
                perm_epoch = epoch;
            }
            let flip = cfg.train.flip_prob > 0.0 && rng.gen_bool(cfg.train.flip_prob);
            let jitter = cfg.train.jitter.then(|| Jitter::sample(&mut rng));
            Pick { index: perm[(j % n) as usize], flip, jitter }
        })
        .collect()
}

struct SampleResult {
    grads: Gradients<f32>,
    cls: f64,
    reg: f64,
    orient: f64,
    disp: f64,
    total: f64,
}

fn run_sample(model: &Ts3d, store: &ParamStore<f32>, cfg: &RunConfig, sample: &Sample, pick: &Pick) -> Result<SampleResult> {
    let v = match (&sample.flipped, pick.flip) {
        (Some(f), true) => f,
        _ => &sample.original,
    };
    let jittered;
    let frame = match &pick.jitter {
        Some(j) => {
            jittered = photometric_jitter(&v.frame, j);
            &jittered
        }
        None => &v.frame,
    };
    let mut g = Graph::with_params(store);
    let l = g.constant(frame.left.clone());
    let r = g.constant(frame.right.clone());
    let fwd = model.forward(&mut g, l, r, cfg.model.intermediate_supervision)?;
    let out = model.loss(&mut g, &fwd, &v.targets, &cfg.loss)?;
    let total = g.value(out.total).item().as_f64();
    if !total.is_finite() {
        return Err(ts3d_core::Error::NonFinite { op: "total_loss" }.into());
    }
    let grads = g.backward(out.total)?;
    Ok(SampleResult { grads, cls: out.cls, reg: out.reg, orient: out.orient, disp: out.disp, total })
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Ts3d,
    pub store: ParamStore<f32>,
    pub opt: OptimState<f32>,
    pub samples: Vec<Sample>,
}

impl Trainer {
    /// Fresh parameters drawn from `train.seed`; `priors` normally come
    /// from the dataset manifest.
    pub fn new(cfg: &RunConfig, priors: AnchorPriors, frames: &[StereoFrame], cached: Option<Vec<Option<DisparityMap>>>) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let mut model = Ts3d::new(&cfg.model, &mut store, &mut rng)?;
        model.set_priors(priors)?;
        let samples = prepare_samples(&model, cfg, frames, cached)?;
        if samples.is_empty() {
            return Err(Error::Config("no training frames".into()));
        }
        let opt = OptimState::new(cfg.optimizer(), &store);
        Ok(Trainer { cfg: cfg.clone(), model, store, opt, samples })
    }

    /// Continues from a checkpoint. `cfg` must agree with the stored
    /// configuration on every key that shapes the trajectory.
    pub fn resume(ckpt: &Checkpoint, cfg: &RunConfig, frames: &[StereoFrame], cached: Option<Vec<Option<DisparityMap>>>) -> Result<Self> {
        ckpt.check_config(cfg, is_resume_key)?;
        let mut t = Trainer::new(cfg, ckpt.priors.clone(), frames, cached)?;
        ckpt.restore_params(&mut t.store)?;
        let saved = ckpt.optimizer.as_ref().ok_or_else(|| Error::Format("checkpoint has no optimizer state to resume from".into()))?;
        for (id, p) in t.store.iter() {
            let j = ckpt.params.id_of(&p.name).expect("names checked by restore_params").index();
            t.opt.first[id.index()].clone_from(&saved.first[j]);
            t.opt.second[id.index()].clone_from(&saved.second[j]);
        }
        t.opt.step = ckpt.step;
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    pub fn finished(&self) -> bool {
        self.opt.step >= self.cfg.train.steps
    }

    /// One AdamW update on a batch; samples of the batch run in parallel
    /// and their gradients are summed in batch order.
    pub fn step(&mut self) -> Result<StepRecord> {
        let picks = plan_step(&self.cfg, self.samples.len(), self.opt.step);
        let (model, store, cfg, samples) = (&self.model, &self.store, &self.cfg, &self.samples);
        let results =
            picks.par_iter().map(|p| run_sample(model, store, cfg, &samples[p.index], p)).collect::<Result<Vec<_>>>()?;
        self.store.zero_grad();
        for r in &results {
            self.store.accumulate(&r.grads);
        }
        let b = results.len() as f64;
        if results.len() > 1 {
            self.store.scale_grads(<f32 as Element>::of(1.0 / b));
        }
        let lr = adamw_step(&mut self.store, &mut self.opt)?;
        let mean = |f: fn(&SampleResult) -> f64| results.iter().map(f).sum::<f64>() / b;
        Ok(StepRecord {
            step: self.opt.step,
            lr,
            cls: mean(|r| r.cls),
            reg: mean(|r| r.reg),
            orient: mean(|r| r.orient),
            disp: mean(|r| r.disp),
            total: mean(|r| r.total),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.opt.step,
            priors: self.model.priors.clone(),
            params: self.store.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }
}
